"""Extended Kalman filter on z = [Ts, V] and the measured-energy SoE tracker."""
import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from config import PREDICT_MAX_STEP
from core.battery_model import integrate, linearize, ocv_interpolate, ocv_slope, soe_step
from core.data_models import BatteryParams, BatteryState, EnergyAccount, LinearModel
from core.errors import ConfigurationError, EstimatorDegenerateError, InvalidArgumentError

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-9
DEGENERATE_COND = 1e14


def _symmetric(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


@dataclass(frozen=True)
class KalmanConfig:
    """Process, measurement and initial covariances."""

    process_cov: np.ndarray
    measurement_cov: np.ndarray
    initial_cov: np.ndarray

    def __post_init__(self):
        specs = (('process_cov', 4, False), ('measurement_cov', 2, True), ('initial_cov', 4, True))
        for name, size, strict in specs:
            matrix = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if matrix.shape != (size, size):
                raise ConfigurationError(f"{name} must be {size}x{size}, got {matrix.shape}")
            if np.max(np.abs(matrix - matrix.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(matrix))):
                raise ConfigurationError(f"{name} must be symmetric")
            eigenvalues = np.linalg.eigvalsh(matrix)
            if strict and np.min(eigenvalues) <= 0.0:
                raise ConfigurationError(f"{name} must be positive definite")
            if not strict and np.min(eigenvalues) < -SYMMETRY_TOL:
                raise ConfigurationError(f"{name} must be positive semidefinite")
            object.__setattr__(self, name, _symmetric(matrix))

    @classmethod
    def from_diagonals(cls, process: Sequence[float], measurement: Sequence[float],
                       initial: Sequence[float]) -> 'KalmanConfig':
        return cls(np.diag(process), np.diag(measurement), np.diag(initial))


@dataclass(frozen=True)
class EstimatorState:
    x_hat: BatteryState
    p_cov: np.ndarray
    model: LinearModel


def output_jacobian(state: BatteryState, params: BatteryParams) -> np.ndarray:
    """H = d[Ts, V]/dx under the sag convention V = phi(SoC) - V1 - R0*I."""
    return np.array([
        [0.0, 0.0, 1.0, 0.0],
        [ocv_slope(state.soc, params.ocv_curve), -1.0, 0.0, 0.0],
    ])


def predicted_output(state: BatteryState, current: float, params: BatteryParams) -> np.ndarray:
    voltage = ocv_interpolate(state.soc, params.ocv_curve) - state.v1 - params.r0 * current
    return np.array([state.t_s, voltage])


def kf_init(x0: BatteryState, params: BatteryParams, config: KalmanConfig, dt: float,
            u0: float = 0.0) -> EstimatorState:
    return EstimatorState(x0, config.initial_cov.copy(), linearize(x0, u0, dt, params))


def kf_predict(est: EstimatorState, u: float, params: BatteryParams, dt: float,
               config: KalmanConfig, max_step: float = PREDICT_MAX_STEP) -> EstimatorState:
    """Propagate the estimate through the nonlinear model and the covariance through A.

    Args:
        est: Current estimate
        u: Current held over the interval (A)
        params: Model parameters
        dt: Interval length (s)
        config: Covariances
        max_step: RK4 sub-step for the mean propagation

    Returns:
        Predicted estimate with the model relinearized at the new point
    """
    if not dt > 0.0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    model = linearize(est.x_hat, u, dt, params)
    x_next = integrate(est.x_hat, u, dt, params, max_step=min(max_step, dt))
    a = model.a_matrix
    p_next = _symmetric(a @ est.p_cov @ a.T + config.process_cov)
    return EstimatorState(x_next, p_next, linearize(x_next, u, dt, params))


def kf_update(est: EstimatorState, z_meas: Sequence[float], u: float, params: BatteryParams,
              config: KalmanConfig) -> EstimatorState:
    """Measurement update with the Joseph-form covariance.

    Args:
        est: Predicted estimate
        z_meas: Measured [Ts (degC), V (V)]
        u: Current flowing when z was sampled (A)
        params: Model parameters
        config: Covariances

    Raises:
        EstimatorDegenerateError: Innovation covariance is singular
    """
    z = np.asarray(z_meas, dtype=float).reshape(-1)
    if z.shape != (2,) or not np.all(np.isfinite(z)):
        raise InvalidArgumentError(f"Measurement must be two finite values, got {z_meas}")

    h = output_jacobian(est.x_hat, params)
    p = est.p_cov
    r = config.measurement_cov
    s = h @ p @ h.T + r
    if not np.all(np.isfinite(s)) or np.linalg.cond(s) > DEGENERATE_COND:
        raise EstimatorDegenerateError(f"Innovation covariance is singular: {s.tolist()}")

    gain = np.linalg.solve(s, h @ p).T
    innovation = z - predicted_output(est.x_hat, u, params)
    x_new = BatteryState.from_array(est.x_hat.as_array() + gain @ innovation)
    joseph = np.eye(4) - gain @ h
    p_new = _symmetric(joseph @ p @ joseph.T + gain @ r @ gain.T)
    return replace(est, x_hat=x_new, p_cov=p_new)


def soe_tracker_step(account: EnergyAccount, v_meas: float, i_applied: float, dt: float,
                     params: BatteryParams) -> EnergyAccount:
    """SoE bookkeeping from measured terminal voltage and the applied current."""
    return soe_step(account, v_meas, i_applied, dt, params)


class KalmanEstimator:
    """Stateful wrapper owning one EstimatorState.

    Args:
        x0: Initial estimate
        params: Model parameters
        config: Covariances
        dt: Prediction interval (s)
    """

    def __init__(self, x0: BatteryState, params: BatteryParams, config: KalmanConfig, dt: float):
        self.params = params
        self.config = config
        self.dt = dt
        self.state = kf_init(x0, params, config, dt)

    @property
    def x_hat(self) -> BatteryState:
        return self.state.x_hat

    @property
    def model(self) -> LinearModel:
        return self.state.model

    def update(self, z_meas: Sequence[float], u: float) -> BatteryState:
        self.state = kf_update(self.state, z_meas, u, self.params, self.config)
        return self.state.x_hat

    def predict(self, u: float) -> BatteryState:
        self.state = kf_predict(self.state, u, self.params, self.dt, self.config)
        return self.state.x_hat
