"""Electrothermal equivalent-circuit cell: dynamics, output, linearization, energy."""
import logging
import math
from dataclasses import replace
from typing import Mapping, Tuple, Union

import numpy as np
from scipy.linalg import expm

from config import PLANT_STEP
from core.data_models import BatteryParams, BatteryState, EnergyAccount, LinearModel
from core.errors import ConfigurationError, InvalidArgumentError, NumericalBlowupError

logger = logging.getLogger(__name__)

SECONDS_PER_HOUR = 3600.0

# Physical constants scaled by make_perturbed_plant, in draw order
PERTURBED_FIELDS = ('capacity_nominal', 'r0', 'r1', 'c1', 'r_u', 'r_c', 'c_s', 'c_c')
OCV_OFFSET_KEY = 'ocv'
OCV_OFFSET_SCALE = 0.1      # V per unit perturbation


def ocv_interpolate(soc: float, curve) -> float:
    """Open-circuit voltage phi(SoC), piecewise linear, clamped at the ends."""
    if curve is None or len(curve) == 0:
        raise ConfigurationError("OCV curve is empty")
    table = np.asarray(curve, dtype=float)
    return float(np.interp(soc, table[:, 0], table[:, 1]))


def ocv_slope(soc: float, curve) -> float:
    """d phi / d SoC of the piecewise-linear curve (zero outside the table).

    At a breakpoint the slope of the segment to its right is used.
    """
    table = np.asarray(curve, dtype=float)
    knots, volts = table[:, 0], table[:, 1]
    if soc < knots[0] or soc > knots[-1]:
        return 0.0
    index = int(np.searchsorted(knots, soc, side='right')) - 1
    index = min(max(index, 0), len(knots) - 2)
    return float((volts[index + 1] - volts[index]) / (knots[index + 1] - knots[index]))


def _check_current(current: float) -> float:
    current = float(current)
    if not math.isfinite(current):
        raise InvalidArgumentError(f"Current must be finite, got {current}")
    return current


def _derivative(x: np.ndarray, current: float, params: BatteryParams) -> np.ndarray:
    soc, v1, t_s, t_c = x
    heat = current * (v1 + params.r0 * current)
    return np.array([
        -current / (SECONDS_PER_HOUR * params.capacity_nominal),
        -v1 / (params.r1 * params.c1) + current / params.c1,
        (params.t_ambient - t_s) / (params.r_u * params.c_s) - (t_s - t_c) / (params.r_c * params.c_s),
        (t_s - t_c) / (params.r_c * params.c_c) + heat / params.c_c,
    ])


def state_derivative(state: BatteryState, current: float, params: BatteryParams) -> np.ndarray:
    """Time derivatives [dSoC/dt, dV1/dt, dTs/dt, dTc/dt].

    Args:
        state: Cell state
        current: Discharge current (A, positive discharging)
        params: Cell parameters

    Returns:
        4-vector of derivatives
    """
    return _derivative(state.as_array(), _check_current(current), params)


def terminal_voltage(state: BatteryState, current: float, params: BatteryParams) -> float:
    """Terminal voltage phi(SoC) - V1 - R0*I."""
    current = _check_current(current)
    return ocv_interpolate(state.soc, params.ocv_curve) - state.v1 - params.r0 * current


def _rk4(x: np.ndarray, current: float, dt: float, params: BatteryParams) -> np.ndarray:
    k1 = _derivative(x, current, params)
    k2 = _derivative(x + 0.5 * dt * k1, current, params)
    k3 = _derivative(x + 0.5 * dt * k2, current, params)
    k4 = _derivative(x + dt * k3, current, params)
    x_next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        raise NumericalBlowupError(f"Integration blew up at I={current} A, dt={dt} s", x_next)
    x_next[0] = min(max(x_next[0], 0.0), 1.0)
    return x_next


def integrate_step(state: BatteryState, current: float, dt: float,
                   params: BatteryParams) -> BatteryState:
    """One classical RK4 step with the current held over [t, t + dt].

    SoC is clamped to [0, 1] after the step.
    """
    if not dt > 0.0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    return BatteryState.from_array(_rk4(state.as_array(), _check_current(current), dt, params))


def integrate(state: BatteryState, current: float, duration: float, params: BatteryParams,
              max_step: float = PLANT_STEP) -> BatteryState:
    """Hold the current for `duration` seconds using RK4 sub-steps of at most `max_step`."""
    if not duration > 0.0 or not max_step > 0.0:
        raise InvalidArgumentError(f"duration and max_step must be positive, got {duration}, {max_step}")
    current = _check_current(current)
    n_steps = max(1, int(math.ceil(duration / max_step - 1e-9)))
    h = duration / n_steps
    x = state.as_array()
    for _ in range(n_steps):
        x = _rk4(x, current, h, params)
    return BatteryState.from_array(x)


def continuous_jacobians(state: BatteryState, current: float,
                         params: BatteryParams) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobians of the continuous dynamics.

    Returns:
        (Ac, Bc) with shapes 4x4 and 4x1
    """
    current = _check_current(current)
    rc_cs = params.r_c * params.c_s
    rc_cc = params.r_c * params.c_c
    a_c = np.array([
        [0.0, 0.0, 0.0, 0.0],
        [0.0, -1.0 / (params.r1 * params.c1), 0.0, 0.0],
        [0.0, 0.0, -1.0 / (params.r_u * params.c_s) - 1.0 / rc_cs, 1.0 / rc_cs],
        [0.0, current / params.c_c, 1.0 / rc_cc, -1.0 / rc_cc],
    ])
    b_c = np.array([
        [-1.0 / (SECONDS_PER_HOUR * params.capacity_nominal)],
        [1.0 / params.c1],
        [0.0],
        [(state.v1 + 2.0 * params.r0 * current) / params.c_c],
    ])
    return a_c, b_c


def linearize(state: BatteryState, current: float, dt: float, params: BatteryParams,
              method: str = 'expm') -> LinearModel:
    """Discretize the dynamics about (state, current).

    Args:
        state: Operating point
        current: Operating current (A)
        dt: Sampling time (s)
        params: Cell parameters
        method: 'expm' for the exact zero-order hold, 'euler' for forward Euler

    Returns:
        LinearModel whose affine term reproduces the step from the operating point
    """
    if not dt > 0.0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    a_c, b_c = continuous_jacobians(state, current, params)
    drift = _derivative(state.as_array(), float(current), params)

    if method == 'expm':
        # exp([[Ac, I], [0, 0]] dt) = [[Phi, Gamma], [0, I]], Gamma = int_0^dt exp(Ac s) ds
        block = expm(np.block([[a_c, np.eye(4)], [np.zeros((4, 8))]]) * dt)
        a_d = block[:4, :4]
        gamma = block[:4, 4:]
        b_d = gamma @ b_c
    elif method == 'euler':
        a_d = np.eye(4) + a_c * dt
        gamma = np.eye(4) * dt
        b_d = b_c * dt
    else:
        raise ConfigurationError(f"Unknown discretization method: {method}")

    x_op = state.as_array()
    x_next = x_op + gamma @ drift
    c_vec = x_next - a_d @ x_op - b_d[:, 0] * float(current)
    return LinearModel(a_d, b_d, state, float(current), float(dt), c_vec)


def soe_step(account: EnergyAccount, v_prev: float, i_prev: float, dt: float,
             params: BatteryParams) -> EnergyAccount:
    """Rectangle-rule energy accounting over one interval.

    The extracted energy follows the terminal power; SoE drops by the
    efficiency-weighted share of the nominal energy.
    """
    if not dt > 0.0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    if params.energy_nominal <= 0.0:
        raise ConfigurationError("energy_nominal is not set; calibrate the cell first")
    delivered = float(v_prev) * float(i_prev) * dt
    extracted = account.extracted + delivered
    return EnergyAccount(extracted, 1.0 - params.eta * extracted / params.energy_nominal)


def make_perturbed_plant(params: BatteryParams, perturbation: Union[float, Mapping[str, float]],
                         seed: int) -> BatteryParams:
    """Draw a mismatched 'truth' cell around the design parameters.

    Each physical constant is scaled by 1 + p*r with r uniform in [-1, 1]; the
    OCV curve receives a linear offset bounded by p_ocv * 100 mV.

    Args:
        params: Nominal parameters
        perturbation: One magnitude for every field or a mapping field -> magnitude
            (missing fields stay exact; key 'ocv' controls the OCV offset)
        seed: Generator seed

    Returns:
        Perturbed parameters
    """
    keys = PERTURBED_FIELDS + (OCV_OFFSET_KEY,)
    if isinstance(perturbation, Mapping):
        unknown = set(perturbation) - set(keys)
        if unknown:
            raise ConfigurationError(f"Unknown perturbation keys: {sorted(unknown)}")
        magnitudes = {key: float(perturbation.get(key, 0.0)) for key in keys}
    else:
        magnitudes = {key: float(perturbation) for key in keys}
    for key, value in magnitudes.items():
        if not 0.0 <= value <= 0.5:
            raise ConfigurationError(f"Perturbation for {key} must lie in [0, 0.5], got {value}")

    rng = np.random.default_rng(seed)
    draws = rng.uniform(-1.0, 1.0, size=len(PERTURBED_FIELDS))
    ocv_draws = rng.uniform(-0.5, 0.5, size=2)

    changes = {}
    for name, r in zip(PERTURBED_FIELDS, draws):
        changes[name] = getattr(params, name) * (1.0 + magnitudes[name] * r)

    p_ocv = magnitudes[OCV_OFFSET_KEY]
    curve = params.ocv_curve
    if p_ocv > 0.0:
        # Offset is affine in SoC with |offset| <= p_ocv * 0.1 V
        level, tilt = ocv_draws
        curve = tuple(
            (s, v + p_ocv * OCV_OFFSET_SCALE * (level + tilt * (2.0 * s - 1.0)))
            for s, v in curve
        )

    perturbed = replace(params, ocv_curve=curve, **changes)
    logger.debug(f"Perturbed plant (seed={seed}): "
                 + ", ".join(f"{k}={changes[k]:.6g}" for k in PERTURBED_FIELDS))
    return perturbed
