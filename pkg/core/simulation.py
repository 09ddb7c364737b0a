"""Closed-loop harness: perturbed plant, Kalman estimator, SoE tracker, controller."""
import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from config import (
    CC_CURRENT, CV_CUTOFF_VOLTAGE, CV_KI, CV_KP, DISTURBANCE_FLOOR, DISTURBANCE_INFLATION,
    EN_CALIBRATION_DT, EN_CUTOFF_C_RATE, PLANT_STEP, SIM_TIMEOUT, SOE_STOP, STATE_SCALE, T_MAX, U_MAX,
)
from core.battery_model import integrate, linearize, terminal_voltage
from core.controller_base import Observation
from core.controller_factory import ControllerSpec, create_controller
from core.data_models import BatteryParams, BatteryState, EnergyAccount
from core.errors import ConfigurationError, DischargeError, InvalidArgumentError
from core.estimation import KalmanConfig, KalmanEstimator, soe_tracker_step
from core.pi_controllers import PHASE_CV, PhaseState, PiConfig, cc_cv_step
from core.polytope import Polytope

logger = logging.getLogger(__name__)

STATUS_COMPLETED = 'completed'
STATUS_TIMEOUT = 'timeout'
STATUS_FAILED = 'failed'

TRACE_COLUMNS = ('t', 'i_applied', 'v_terminal', 'soc_true', 'soe', 't_s', 't_c_true', 't_c_est')

CALIBRATION_TIME_LIMIT = 24 * 3600.0


@dataclass(frozen=True)
class SimConfig:
    """One closed-loop run.

    The plant integrates ``plant_params``; the estimator, the SoE tracker and
    the controller only ever see ``model_params``.
    """

    plant_params: BatteryParams
    model_params: BatteryParams
    controller: ControllerSpec
    kalman: KalmanConfig
    dt_plant: float = PLANT_STEP
    t_max_sim: float = SIM_TIMEOUT
    soe_stop: float = SOE_STOP
    noise_seed: int = 0
    t_constraint: float = T_MAX
    noise: bool = True
    x0: Optional[BatteryState] = None
    x0_estimate: Optional[BatteryState] = None

    def __post_init__(self):
        if not self.dt_plant > 0.0:
            raise ConfigurationError(f"dt_plant must be positive, got {self.dt_plant}")
        ratio = self.dt_control / self.dt_plant
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            raise ConfigurationError(
                f"dt_plant={self.dt_plant} s does not divide dt_control={self.dt_control} s")
        if self.soe_stop < 0.0:
            raise ConfigurationError(f"soe_stop must be >= 0, got {self.soe_stop}")
        if not self.t_max_sim > 0.0:
            raise ConfigurationError(f"t_max_sim must be positive, got {self.t_max_sim}")
        if self.model_params.energy_nominal <= 0.0:
            raise ConfigurationError("model energy_nominal is not set; calibrate the cell first")

    @property
    def dt_control(self) -> float:
        return self.controller.dt

    @property
    def name(self) -> str:
        return self.controller.name


@dataclass
class SimTrace:
    """Per-instant records plus the run outcome."""

    name: str
    dt_control: float
    t_constraint: float
    rows: List[Dict[str, Any]] = field(default_factory=list)
    status: str = STATUS_COMPLETED
    failure: Optional[str] = None
    discharge_time: float = math.nan
    final_state: Optional[BatteryState] = None
    energy: EnergyAccount = field(default_factory=EnergyAccount.full)

    @property
    def max_core_temp(self) -> float:
        temps = [row['t_c_true'] for row in self.rows]
        if self.final_state is not None:
            temps.append(self.final_state.t_c)
        return float(max(temps)) if temps else math.nan

    @property
    def tube_violations(self) -> int:
        counts = [row['diagnostics'].get('tube_violations', 0) for row in self.rows]
        return int(max(counts)) if counts else 0

    @property
    def constraint_satisfied(self) -> bool:
        """Only a completed discharge can satisfy the temperature limit."""
        return self.status == STATUS_COMPLETED and bool(self.max_core_temp <= self.t_constraint)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows])

    def to_frame(self) -> pd.DataFrame:
        """Trace as a DataFrame with the fixed column order; diagnostics as JSON text."""
        frame = pd.DataFrame([{key: row[key] for key in TRACE_COLUMNS} for row in self.rows],
                             columns=list(TRACE_COLUMNS))
        frame['diagnostics'] = [json.dumps(row['diagnostics'], sort_keys=True, default=str)
                                for row in self.rows]
        return frame


def _noise_std(kalman: KalmanConfig) -> np.ndarray:
    return np.sqrt(np.diag(kalman.measurement_cov))


def _instant_row(t, current, v_terminal, plant_x: BatteryState, soe, x_hat: BatteryState, diagnostics):
    return {
        't': t,
        'i_applied': current,
        'v_terminal': v_terminal,
        'soc_true': plant_x.soc,
        'soe': soe,
        't_s': plant_x.t_s,
        't_c_true': plant_x.t_c,
        't_c_est': x_hat.t_c,
        'diagnostics': diagnostics,
    }


def run_closed_loop(cfg: SimConfig) -> SimTrace:
    """Simulate one discharge.

    Order at each control instant k: sample z = [Ts, V(x_k, I_{k-1})] with
    noise, update the estimate, query the controller, saturate, sample the
    loaded voltage V(x_k, I_k) for the SoE tracker, hold I_k while the plant
    integrates, predict the estimate. The run stops once SoE <= soe_stop (the
    crossing interval is cut at the plant step where it happens) or at the
    timeout. Plant and controller faults end the run with status 'failed'.
    """
    dt = cfg.dt_control
    plant, model = cfg.plant_params, cfg.model_params
    controller = create_controller(cfg.controller, model)
    rng = np.random.default_rng(cfg.noise_seed)
    noise_std = _noise_std(cfg.kalman)

    plant_x = cfg.x0 or BatteryState.fully_charged(plant.t_ambient)
    estimate_x0 = cfg.x0_estimate or BatteryState.fully_charged(model.t_ambient)
    trace = SimTrace(cfg.name, dt, cfg.t_constraint)
    account = EnergyAccount.full()
    u_prev = 0.0
    k = 0

    def sample(values: np.ndarray) -> np.ndarray:
        if not cfg.noise:
            return values
        return values + rng.normal(0.0, 1.0, size=2) * noise_std

    try:
        estimator = KalmanEstimator(estimate_x0, model, cfg.kalman, dt)
        while True:
            t = k * dt
            if t >= cfg.t_max_sim:
                trace.status = STATUS_TIMEOUT
                logger.warning(f"{cfg.name}: timeout at t={t:.0f} s with SoE={account.soe:.4f}")
                break

            z = sample(np.array([plant_x.t_s, terminal_voltage(plant_x, u_prev, plant)]))
            x_hat = estimator.update(z, u_prev)
            observation = Observation(t, float(z[1]), float(z[0]), x_hat, account.soe, u_prev, dt)
            command = controller.step(observation)
            current = command.current

            v_loaded = terminal_voltage(plant_x, current, plant)
            v_meas = float(sample(np.array([plant_x.t_s, v_loaded]))[1])
            trace.rows.append(_instant_row(t, current, v_loaded, plant_x, account.soe, x_hat,
                                           command.diagnostics))

            next_account = soe_tracker_step(account, v_meas, current, dt, model)
            if next_account.soe <= cfg.soe_stop and current > 0.0:
                # Cut the interval at the plant step where SoE crosses soe_stop
                drop = account.soe - next_account.soe
                fraction = (account.soe - cfg.soe_stop) / drop if drop > 0.0 else 1.0
                n_sub = max(1, math.ceil(fraction * dt / cfg.dt_plant - 1e-9))
                duration = min(n_sub * cfg.dt_plant, dt)
                account = soe_tracker_step(account, v_meas, current, duration, model)
                plant_x = integrate(plant_x, current, duration, plant, max_step=cfg.dt_plant)
                trace.discharge_time = t + duration
                trace.status = STATUS_COMPLETED
                break

            account = next_account
            plant_x = integrate(plant_x, current, dt, plant, max_step=cfg.dt_plant)
            estimator.predict(current)
            u_prev = current
            k += 1
    except (DischargeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        trace.status = STATUS_FAILED
        trace.failure = f"{type(exc).__name__}: {exc}"
        logger.error(f"{cfg.name}: run failed at t={k * dt:.0f} s: {exc}", exc_info=True)

    trace.final_state = plant_x
    trace.energy = account
    logger.info(f"{cfg.name}: {trace.status}, discharge time {trace.discharge_time:.0f} s, "
                f"max Tc {trace.max_core_temp:.2f} C")
    return trace


@lru_cache(maxsize=16)
def calibrate_nominal_energy(params: BatteryParams, reference_current: float = CC_CURRENT,
                             cutoff_voltage: float = CV_CUTOFF_VOLTAGE,
                             cutoff_current: Optional[float] = None,
                             dt: float = EN_CALIBRATION_DT) -> float:
    """Energy (J) of a noiseless CC-CV reference discharge from full charge.

    The discharge ends when the CV-phase current first drops below the cut-off
    current (C/20 by default).
    """
    if cutoff_current is None:
        cutoff_current = EN_CUTOFF_C_RATE * params.capacity_nominal
    if not 0.0 < cutoff_current < reference_current:
        raise ConfigurationError(f"cut-off current {cutoff_current} A must lie in (0, {reference_current}) A")
    pi = PiConfig(CV_KP, CV_KI, cutoff_voltage, (0.0, reference_current))
    phase = PhaseState()
    state = BatteryState.fully_charged(params.t_ambient)
    energy = 0.0
    current = 0.0
    t = 0.0
    while t < CALIBRATION_TIME_LIMIT:
        voltage = terminal_voltage(state, current, params)
        command, phase = cc_cv_step(phase, voltage, pi, reference_current, cutoff_voltage, dt)
        current = command.current
        if phase.phase == PHASE_CV and current < cutoff_current:
            logger.info(f"Nominal energy calibrated: {energy:.1f} J after {t:.0f} s")
            return energy
        energy += terminal_voltage(state, current, params) * current * dt
        state = integrate(state, current, dt, params)
        t += dt
    raise ConfigurationError(f"Reference discharge did not reach {cutoff_current:.3f} A "
                             f"within {CALIBRATION_TIME_LIMIT:.0f} s")


def current_profile_library(seed: int, count: int, duration: float, dt: float,
                            u_max: float = U_MAX, max_step: float = 4.0) -> List[np.ndarray]:
    """Seeded random-walk current profiles in [0, u_max]."""
    if count < 1:
        raise InvalidArgumentError("profile library must hold at least one profile")
    n_steps = int(round(duration / dt))
    if n_steps < 1:
        raise InvalidArgumentError(f"profile duration {duration} s is shorter than one step")
    rng = np.random.default_rng(seed)
    profiles = []
    for _ in range(count):
        start = rng.uniform(0.0, u_max)
        steps = rng.uniform(-max_step, max_step, size=n_steps - 1)
        profile = np.empty(n_steps)
        profile[0] = start
        for i, step in enumerate(steps, start=1):
            profile[i] = min(max(profile[i - 1] + step, 0.0), u_max)
        profiles.append(profile)
    return profiles


def identify_disturbance_set(plant: BatteryParams, model: BatteryParams,
                             profiles: Sequence[np.ndarray], dt: float,
                             state_scale: Sequence[float] = STATE_SCALE,
                             inflation: float = DISTURBANCE_INFLATION,
                             floor: float = DISTURBANCE_FLOOR,
                             min_soc: float = 0.05) -> Polytope:
    """Axis-aligned box around one-step residuals of the design model against the plant.

    Each step relinearizes the model at the true state and the previous
    input, then compares its prediction under the applied input with the
    plant. Residuals are scaled; the box is widened to contain the origin,
    inflated, and floored in every coordinate.
    """
    if len(profiles) == 0:
        raise InvalidArgumentError("profile library is empty")
    if inflation < 0.0 or floor <= 0.0:
        raise ConfigurationError("inflation must be >= 0 and floor > 0")
    scale = np.asarray(state_scale, dtype=float)
    lower = np.zeros(4)
    upper = np.zeros(4)
    samples = 0
    for profile in profiles:
        state = BatteryState.fully_charged(plant.t_ambient)
        u_prev = float(profile[0])
        for current in profile:
            if state.soc < min_soc:
                break
            current = float(current)
            local = linearize(state, u_prev, dt, model)
            following = integrate(state, current, dt, plant)
            residual = (following.as_array() - local.predict(state.as_array(), current)) / scale
            lower = np.minimum(lower, residual)
            upper = np.maximum(upper, residual)
            samples += 1
            state, u_prev = following, current

    lower = np.minimum(lower * (1.0 + inflation), -floor)
    upper = np.maximum(upper * (1.0 + inflation), floor)
    logger.info(f"Disturbance box from {samples} residuals: lower {np.array2string(lower, precision=3)}, "
                f"upper {np.array2string(upper, precision=3)}")
    return Polytope.from_bounds(lower, upper)
