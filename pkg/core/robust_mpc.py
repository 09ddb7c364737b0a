"""Tube-based robust MPC: ancillary LQR gain, tightened constraints, online QP.

All set computations run on scaled states x_s = x / STATE_SCALE. The nominal
trajectory is optimized in the same coordinates so the tube cross-section
and the tightened constraints apply without conversion. The applied current is

    u(k) = u_nom(0|k) + K (x_est_s - x_nom_s(0|k))
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_discrete_are

from config import (
    LQR_INPUT_WEIGHT, LQR_STATE_WEIGHT, MPC_HORIZON, MPC_INPUT_WEIGHT, MPC_MAX_CAP_FALLBACKS,
    MPC_OUTPUT_WEIGHT, MPC_RATE_LIMIT, RPI_EPSILON, RPI_MAX_STEPS, STATE_SCALE, T_MAX, U_MAX,
)
from core.battery_model import linearize
from core.controller_base import Controller, ControllerCommand, Observation
from core.data_models import BatteryParams, BatteryState, LinearModel
from core.errors import ConfigurationError, ControllerFaultError, SynthesisError
from core.polytope import (
    Polytope, RpiResult, cartesian_product, compute_mrpi, contains, linear_map,
    pontryagin_diff, spectral_radius, support,
)
from core.qp_solver import MAX_ITER, QpProblem, QpResult, QpSettings, qp_solve

logger = logging.getLogger(__name__)

RICCATI_TOL = 1e-10
RICCATI_MAX_ITER = 100000
TUBE_TOL = 1e-5
ZERO_GAIN_TOL = 1e-14

# Column of Tc in the state vector
TC_INDEX = 3


def _weight_matrix(weight, size: int, name: str) -> np.ndarray:
    matrix = np.asarray(weight, dtype=float)
    if matrix.ndim <= 1:
        matrix = np.diag(np.broadcast_to(matrix, (size,)))
    if matrix.shape != (size, size):
        raise ConfigurationError(f"{name} must be {size}x{size} or a diagonal of length {size}")
    return matrix


def _riccati_residual(p, a, b, q, r) -> float:
    gain_term = a.T @ p @ b @ np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
    fixed_point = q + a.T @ p @ a - gain_term
    return float(np.max(np.abs(fixed_point - p)) / max(1.0, np.max(np.abs(p))))


def _riccati_iteration(a, b, q, r) -> np.ndarray:
    p = q.copy()
    for _ in range(RICCATI_MAX_ITER):
        gain_term = a.T @ p @ b @ np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
        p_next = q + a.T @ p @ a - gain_term
        p_next = 0.5 * (p_next + p_next.T)
        if not np.all(np.isfinite(p_next)):
            break
        change = np.max(np.abs(p_next - p)) / max(1.0, np.max(np.abs(p_next)))
        p = p_next
        if change <= RICCATI_TOL:
            return p
    raise SynthesisError("Riccati recursion diverged; (A, B) is not stabilizable with these weights")


def lqr_gain(a_matrix, b_matrix, state_weight, input_weight) -> np.ndarray:
    """Infinite-horizon discrete LQR gain K with the convention u = K x.

    The Riccati solution comes from scipy's DARE solver, is checked against the
    fixed-point equation, and falls back to the plain recursion.

    Raises:
        SynthesisError: No stabilizing solution
    """
    a = np.atleast_2d(np.asarray(a_matrix, dtype=float))
    b = np.asarray(b_matrix, dtype=float).reshape(a.shape[0], -1)
    q = _weight_matrix(state_weight, a.shape[0], 'state weight')
    r = _weight_matrix(input_weight, b.shape[1], 'input weight')

    p = None
    try:
        candidate = solve_discrete_are(a, b, q, r)
        if np.all(np.isfinite(candidate)) and _riccati_residual(candidate, a, b, q, r) <= 1e-8:
            p = candidate
    except (np.linalg.LinAlgError, ValueError) as exc:
        logger.debug(f"DARE solver failed ({exc}); iterating the Riccati recursion")
    if p is None:
        p = _riccati_iteration(a, b, q, r)

    gain = -np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
    rho = spectral_radius(a + b @ gain)
    if rho >= 1.0:
        raise SynthesisError(f"LQR closed loop is not Schur stable (spectral radius {rho:.6f})")
    return gain


def scaled_model(model: LinearModel, state_scale: Sequence[float] = STATE_SCALE):
    """(A_s, B_s, c_s) of the affine model in scaled state coordinates."""
    scale = np.asarray(state_scale, dtype=float)
    a_s = model.a_matrix * scale[None, :] / scale[:, None]
    b_s = model.b_matrix / scale[:, None]
    c_s = model.c_vector / scale
    return a_s, b_s, c_s


def design_feedback_gain(model: LinearModel, state_weight=LQR_STATE_WEIGHT,
                         input_weight: float = LQR_INPUT_WEIGHT,
                         state_scale: Sequence[float] = STATE_SCALE) -> np.ndarray:
    """Ancillary gain (1 x 4, scaled coordinates) from LQR on the scaled model."""
    a_s, b_s, _ = scaled_model(model, state_scale)
    gain = lqr_gain(a_s, b_s, state_weight, input_weight)
    logger.info(f"Feedback gain K = {np.array2string(gain[0], precision=4)}, "
                f"rho(A+BK) = {spectral_radius(a_s + b_s @ gain):.6f}")
    return gain


def build_constraint_set(t_max: float = T_MAX, u_max: float = U_MAX,
                         state_scale: Sequence[float] = STATE_SCALE) -> Polytope:
    """Admissible (x_s, u): Tc <= t_max, SoC >= 0, 0 <= u <= u_max, in that row order."""
    scale = np.asarray(state_scale, dtype=float)
    a = np.zeros((4, 5))
    a[0, TC_INDEX] = 1.0
    a[1, 0] = -1.0
    a[2, 4] = -1.0
    a[3, 4] = 1.0
    b = np.array([t_max / scale[TC_INDEX], 0.0, 0.0, u_max])
    return Polytope(a, b)


CONSTRAINT_LABELS = ('Tc <= T_max', 'SoC >= 0', 'u >= 0', 'u <= u_max')


@dataclass(frozen=True)
class MpcSettings:
    """Tuning values fixed before synthesis."""

    horizon: int = MPC_HORIZON
    q_weight: Tuple[float, float] = MPC_OUTPUT_WEIGHT
    r_weight: float = MPC_INPUT_WEIGHT
    rate_limit: float = MPC_RATE_LIMIT
    y_target: Tuple[float, float] = (0.0, T_MAX)
    dt: float = 20.0
    state_weight: Tuple[float, ...] = LQR_STATE_WEIGHT
    input_weight: float = LQR_INPUT_WEIGHT
    epsilon: float = RPI_EPSILON
    max_steps: int = RPI_MAX_STEPS
    delta_u_weight: float = 0.0
    state_scale: Tuple[float, ...] = STATE_SCALE

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigurationError(f"MPC horizon must be >= 1, got {self.horizon}")
        if not self.dt > 0.0:
            raise ConfigurationError(f"MPC dt must be positive, got {self.dt}")
        if min(self.q_weight) < 0.0 or self.r_weight < 0.0 or self.delta_u_weight < 0.0:
            raise ConfigurationError("MPC weights must be nonnegative")
        if not self.rate_limit > 0.0:
            raise ConfigurationError(f"rate_limit must be positive, got {self.rate_limit}")
        if not self.epsilon > 0.0:
            raise ConfigurationError(f"RPI epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class MpcConfig:
    """Synthesized controller data."""

    horizon: int
    q_weight: np.ndarray
    r_weight: float
    k_gain: np.ndarray
    rpi: RpiResult
    tightened: Polytope
    rate_limit: float
    y_target: np.ndarray
    dt: float
    constraints: Polytope
    k_rpi: Polytope
    state_scale: np.ndarray = field(default_factory=lambda: np.asarray(STATE_SCALE))
    delta_u_weight: float = 0.0

    def __post_init__(self):
        q = np.asarray(self.q_weight, dtype=float)
        if q.ndim == 1:
            q = np.diag(q)
        if q.shape != (2, 2) or np.any(q != np.diag(np.diag(q))):
            raise ConfigurationError("MPC output weight must be a 2x2 diagonal")
        object.__setattr__(self, 'q_weight', q)
        object.__setattr__(self, 'k_gain', np.asarray(self.k_gain, dtype=float).reshape(1, 4))
        object.__setattr__(self, 'y_target', np.asarray(self.y_target, dtype=float).reshape(2))
        object.__setattr__(self, 'state_scale', np.asarray(self.state_scale, dtype=float).reshape(4))

    @property
    def margins(self) -> np.ndarray:
        """Tightening per constraint row, in the units of that row."""
        return self.constraints.b_vector - self.tightened.b_vector

    @property
    def input_bounds(self) -> Tuple[float, float]:
        """Nominal input range left after tightening."""
        direction = np.zeros(5)
        direction[4] = 1.0
        upper = support(self.tightened, direction)
        lower = -support(self.tightened, -direction)
        return float(lower), float(upper)


def synthesize_mpc(model: LinearModel, constraints: Polytope, w_set: Polytope,
                   settings: Optional[MpcSettings] = None) -> MpcConfig:
    """Gain, tube cross-section and tightened constraints at one operating point.

    Args:
        model: Linearization at the synthesis operating point
        constraints: Admissible (x_s, u) set, bounded in u
        w_set: Disturbance set in scaled coordinates
        settings: Tuning values

    Returns:
        MpcConfig ready for mpc_step

    Raises:
        OverTightenedError: The tightened set is empty
        RpiConvergenceError: The tube cross-section did not converge
    """
    settings = settings or MpcSettings()
    gain = design_feedback_gain(model, settings.state_weight, settings.input_weight,
                                settings.state_scale)
    a_s, b_s, _ = scaled_model(model, settings.state_scale)
    a_k = a_s + b_s @ gain
    rpi = compute_mrpi(a_k, w_set, epsilon=settings.epsilon, max_steps=settings.max_steps)

    if np.linalg.norm(gain) <= ZERO_GAIN_TOL:
        k_rpi = Polytope.point([0.0])
    else:
        k_rpi = linear_map(gain, rpi.set)
    tube = cartesian_product(rpi.set, k_rpi)
    tightened = pontryagin_diff(constraints, tube)

    cfg = MpcConfig(
        horizon=settings.horizon,
        q_weight=np.diag(settings.q_weight),
        r_weight=settings.r_weight,
        k_gain=gain,
        rpi=rpi,
        tightened=tightened,
        rate_limit=settings.rate_limit,
        y_target=np.asarray(settings.y_target, dtype=float),
        dt=settings.dt,
        constraints=constraints,
        k_rpi=k_rpi,
        state_scale=np.asarray(settings.state_scale, dtype=float),
        delta_u_weight=settings.delta_u_weight,
    )
    lower, upper = cfg.input_bounds
    logger.info(f"MPC synthesized: s={rpi.s_steps}, eps={rpi.epsilon:.2e}, "
                f"nominal input in [{lower:.3f}, {upper:.3f}] A, "
                f"margins {np.array2string(cfg.margins, precision=4)}")
    return cfg


@dataclass
class MpcMemory:
    """Online state carried between solves."""

    inputs: Optional[np.ndarray] = None       # nominal u plan, length N
    states: Optional[np.ndarray] = None       # nominal x_s plan, (N + 1) x 4
    u_nominal: Optional[float] = None
    tube_violations: int = 0
    fallbacks: int = 0
    solves: int = 0
    cap_hits: int = 0                         # consecutive solves stopped by the iteration cap


@dataclass(frozen=True)
class NominalQp:
    """Condensed QP over z = [u(0..N-1), x_s(0)] and the state prediction it rests on.

    x_s(i) = state_map[i] @ z + state_offset[i] for i = 0..N.
    """

    problem: QpProblem
    state_map: np.ndarray       # (N + 1) x 4 x (N + 4)
    state_offset: np.ndarray    # (N + 1) x 4

    def states(self, z: np.ndarray) -> np.ndarray:
        return self.state_map @ z + self.state_offset


def _warm_start(memory: MpcMemory, horizon: int) -> Optional[np.ndarray]:
    if memory.inputs is None or memory.inputs.size != horizon:
        return None
    inputs = np.append(memory.inputs[1:], memory.inputs[-1])
    return np.concatenate([inputs, memory.states[1]])


def _predictions(a_s: np.ndarray, b_s: np.ndarray, c_s: np.ndarray, n_steps: int):
    n_vars = n_steps + 4
    state_map = np.zeros((n_steps + 1, 4, n_vars))
    state_offset = np.zeros((n_steps + 1, 4))
    state_map[0, :, n_steps:] = np.eye(4)
    for i in range(n_steps):
        state_map[i + 1] = a_s @ state_map[i]
        state_map[i + 1, :, i] += b_s[:, 0]
        state_offset[i + 1] = a_s @ state_offset[i] + c_s
    return state_map, state_offset


def build_qp(x_s: np.ndarray, soe: float, cfg: MpcConfig, a_s: np.ndarray, b_s: np.ndarray,
             c_s: np.ndarray, energy_gain: float, u_ref: float) -> NominalQp:
    """Assemble the nominal-trajectory QP with the dynamics substituted out.

    Args:
        x_s: Scaled state estimate
        soe: Tracked state of energy
        cfg: Synthesized controller
        a_s, b_s, c_s: Scaled affine model
        energy_gain: SoE drop per ampere per step at the held voltage
        u_ref: Nominal input the first move is rate-limited against
    """
    n_steps = cfg.horizon
    n_vars = n_steps + 4
    u_idx = np.arange(n_steps)
    state_map, state_offset = _predictions(a_s, b_s, c_s, n_steps)

    hessian = np.zeros((n_vars, n_vars))
    gradient = np.zeros(n_vars)
    q_soe, q_tc = cfg.q_weight[0, 0], cfg.q_weight[1, 1]
    soe_target, tc_target = cfg.y_target
    tc_scale = cfg.state_scale[TC_INDEX]

    # SoE(i+1) = soe - g * sum_{j <= i} u_j
    cumulative = np.tril(np.ones((n_steps, n_steps)))
    offset = soe - soe_target
    hessian[np.ix_(u_idx, u_idx)] += 2.0 * q_soe * energy_gain ** 2 * cumulative.T @ cumulative
    gradient[u_idx] += -2.0 * q_soe * energy_gain * offset * cumulative.T @ np.ones(n_steps)

    # Tc(i) = tc_scale * (row_i @ z + offset_i)
    tc_rows = state_map[1:, TC_INDEX, :]
    tc_error = tc_scale * state_offset[1:, TC_INDEX] - tc_target
    hessian += 2.0 * q_tc * tc_scale ** 2 * tc_rows.T @ tc_rows
    gradient += 2.0 * q_tc * tc_scale * tc_rows.T @ tc_error

    hessian[u_idx, u_idx] += 2.0 * cfg.r_weight
    if cfg.delta_u_weight > 0.0:
        diff = np.eye(n_steps) - np.eye(n_steps, k=-1)
        first = np.zeros(n_steps)
        first[0] = 1.0
        hessian[np.ix_(u_idx, u_idx)] += 2.0 * cfg.delta_u_weight * diff.T @ diff
        gradient[u_idx] += -2.0 * cfg.delta_u_weight * u_ref * diff.T @ first
    hessian = 0.5 * (hessian + hessian.T)

    ineq_rows, ineq_rhs = [], []
    tube = cfg.rpi.set
    # x_est_s - x_nom_s(0) in R
    for row, bound in zip(tube.a_matrix, tube.b_vector):
        line = np.zeros(n_vars)
        line[n_steps:] = -row
        ineq_rows.append(line)
        ineq_rhs.append(bound - row @ x_s)

    tightened = cfg.tightened
    for row, bound in zip(tightened.a_matrix, tightened.b_vector):
        a_x, a_u = row[:4], row[4]
        for i in range(n_steps):
            line = a_x @ state_map[i]
            line[i] += a_u
            ineq_rows.append(line)
            ineq_rhs.append(bound - a_x @ state_offset[i])
        if abs(a_u) <= 1e-12:
            ineq_rows.append(a_x @ state_map[n_steps])
            ineq_rhs.append(bound - a_x @ state_offset[n_steps])

    if np.isfinite(cfg.rate_limit):
        for i in range(n_steps):
            for sign in (1.0, -1.0):
                line = np.zeros(n_vars)
                line[i] = sign
                if i == 0:
                    rhs = cfg.rate_limit + sign * u_ref
                else:
                    line[i - 1] = -sign
                    rhs = cfg.rate_limit
                ineq_rows.append(line)
                ineq_rhs.append(rhs)

    problem = QpProblem(hessian, gradient, np.array(ineq_rows), np.array(ineq_rhs))
    return NominalQp(problem, state_map, state_offset)


def mpc_step(x_est: BatteryState, soe: float, cfg: MpcConfig, model: LinearModel,
             params: BatteryParams, u_prev: float, v_meas: Optional[float] = None,
             memory: Optional[MpcMemory] = None,
             qp_settings: Optional[QpSettings] = None) -> Tuple[ControllerCommand, MpcMemory]:
    """One receding-horizon move.

    An infeasible QP or one stopped by its iteration cap falls back to the
    shifted previous plan, and to the tightened lower input bound once that
    plan is used up.

    Args:
        x_est: State estimate
        soe: Tracked state of energy
        cfg: Synthesized controller
        model: Linearization at the current estimate
        params: Design parameters (efficiency and nominal energy)
        u_prev: Previously applied current (A)
        v_meas: Measured terminal voltage held over the horizon; defaults to the OCV
        memory: Previous nominal solution and counters
        qp_settings: Solver settings

    Returns:
        (command, updated memory)

    Raises:
        ControllerFaultError: MPC_MAX_CAP_FALLBACKS solves in a row hit the iteration cap
    """
    memory = replace(memory) if memory is not None else MpcMemory()
    scale = cfg.state_scale
    x_s = x_est.as_array() / scale
    a_s, b_s, c_s = scaled_model(model, scale)
    lower, upper = cfg.input_bounds

    if v_meas is None:
        v_meas = float(np.interp(x_est.soc, params.ocv_soc, params.ocv_voltage))
    if params.energy_nominal <= 0.0:
        raise ConfigurationError("energy_nominal is not set; calibrate the cell first")
    energy_gain = params.eta * v_meas * cfg.dt / params.energy_nominal

    if memory.u_nominal is None:
        u_ref = min(max(float(u_prev), lower), upper)
    else:
        u_ref = memory.u_nominal

    nominal = build_qp(x_s, soe, cfg, a_s, b_s, c_s, energy_gain, u_ref)
    warm = _warm_start(memory, cfg.horizon)
    try:
        result: QpResult = qp_solve(nominal.problem, qp_settings, x_warm=warm)
    except ControllerFaultError as exc:
        result = exc.qp_result
    memory.solves += 1

    if result.status == MAX_ITER:
        memory.cap_hits += 1
        if memory.cap_hits >= MPC_MAX_CAP_FALLBACKS:
            raise ControllerFaultError(
                f"MPC QP hit its iteration cap {memory.cap_hits} times in a row", qp_result=result)
    else:
        memory.cap_hits = 0

    n_steps = cfg.horizon
    if result.solved:
        z = result.solution
        inputs = z[:n_steps].copy()
        states = nominal.states(z)
        u_nominal = float(inputs[0])
        x_nominal = states[0]
        memory.inputs, memory.states = inputs, states
        fallback = False
    else:
        memory.fallbacks += 1
        fallback = True
        if memory.inputs is not None and memory.inputs.size >= 2:
            memory.inputs = memory.inputs[1:]
            memory.states = memory.states[1:]
            u_nominal = float(memory.inputs[0])
            x_nominal = memory.states[0]
        else:
            memory.inputs = memory.states = None
            u_nominal = lower
            x_nominal = x_s
        logger.warning(f"MPC QP {result.status}; tube fallback with u_nom={u_nominal:.3f} A")

    error = x_s - x_nominal
    if not contains(cfg.rpi.set, error, tol=TUBE_TOL):
        memory.tube_violations += 1
        logger.warning(f"Tube containment violated (error {np.array2string(error, precision=4)})")
    memory.u_nominal = u_nominal

    current = u_nominal + float(cfg.k_gain[0] @ error)
    diagnostics = {
        'phase': 'MPC',
        'qp_status': result.status,
        'qp_iterations': result.iterations,
        'u_nominal': u_nominal,
        'tc_nominal': float(x_nominal[TC_INDEX] * scale[TC_INDEX]),
        'fallback': fallback,
        'tube_violations': memory.tube_violations,
    }
    return ControllerCommand(current, diagnostics), memory


class RobustMpcController(Controller):
    """Tube MPC relinearized at every step around the estimate and the last input."""

    def __init__(self, cfg: MpcConfig, params: BatteryParams, u_max: float = U_MAX,
                 name: str = 'MPC', qp_settings: Optional[QpSettings] = None):
        super().__init__(name, cfg.dt, u_max)
        self.cfg = cfg
        self.params = params
        self.qp_settings = qp_settings
        self.memory = MpcMemory()

    @property
    def tube_violations(self) -> int:
        return self.memory.tube_violations

    def compute(self, observation: Observation) -> ControllerCommand:
        model = linearize(observation.x_hat, observation.u_prev, self.cfg.dt, self.params)
        command, self.memory = mpc_step(observation.x_hat, observation.soe, self.cfg, model,
                                        self.params, observation.u_prev, observation.v_meas,
                                        self.memory, self.qp_settings)
        return command

    def reset(self):
        self.memory = MpcMemory()


def synthesis_model(params: BatteryParams, soc: float, current: float, dt: float,
                    t_core: Optional[float] = None) -> LinearModel:
    """Linearization at a steady operating point: V1 = R1*I, temperatures at t_core."""
    temperature = params.t_ambient if t_core is None else t_core
    state = BatteryState(soc, params.r1 * current, temperature, temperature)
    return linearize(state, current, dt, params)
