"""CC-CV and CC-CT discharge schemes: constant current, then PI regulation."""
import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from config import CC_CURRENT, CT_KI, CT_KP, CV_CUTOFF_VOLTAGE, CV_KI, CV_KP, U_MAX
from core.controller_base import Controller, ControllerCommand, Observation
from core.errors import ConfigurationError

logger = logging.getLogger(__name__)

PHASE_CC = 'CC'
PHASE_CV = 'CV'
PHASE_CT = 'CT'


@dataclass(frozen=True)
class PiConfig:
    kp: float
    ki: float
    setpoint: float
    output_limits: Tuple[float, float] = (0.0, U_MAX)
    anti_windup: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.kp) and np.isfinite(self.ki) and np.isfinite(self.setpoint)):
            raise ConfigurationError("PI gains and setpoint must be finite")
        low, high = self.output_limits
        if not low <= high:
            raise ConfigurationError(f"PI output limits out of order: {self.output_limits}")


@dataclass(frozen=True)
class PhaseState:
    """Phase machine state: active phase and the PI integrator (A)."""

    phase: str = PHASE_CC
    integral: float = 0.0


def pi_update(state: PhaseState, error: float, cfg: PiConfig, dt: float) -> Tuple[float, PhaseState]:
    """Positional PI with the integrator carrying the output at zero error.

    The integrator is frozen while the output is saturated and the error
    pushes further into the limit.
    """
    low, high = cfg.output_limits
    raw = state.integral + cfg.kp * error
    output = min(max(raw, low), high)
    integral = state.integral + cfg.ki * error * dt
    if cfg.anti_windup:
        pushing_high = raw >= high and error > 0.0
        pushing_low = raw <= low and error < 0.0
        if pushing_high or pushing_low:
            integral = state.integral
        integral = min(max(integral, low), high)
    return output, replace(state, integral=integral)


def cc_cv_step(phase: PhaseState, v_meas: float, cfg: PiConfig, cc_current: float,
               v_cutoff: float, dt: float) -> Tuple[ControllerCommand, PhaseState]:
    """Constant current until V <= v_cutoff, then PI on the voltage error.

    A sagging voltage (V below the setpoint) reduces the current. The
    integrator starts at the CC current so the switch is bumpless.
    """
    if phase.phase == PHASE_CC:
        if v_meas > v_cutoff:
            return ControllerCommand(cc_current, {'phase': PHASE_CC}), phase
        logger.debug(f"CC-CV: switching to CV at V={v_meas:.4f} V")
        phase = PhaseState(PHASE_CV, cc_current)
    error = v_meas - cfg.setpoint
    current, phase = pi_update(phase, error, cfg, dt)
    return ControllerCommand(current, {'phase': PHASE_CV, 'integral': phase.integral}), phase


def cc_ct_step(phase: PhaseState, tc_est: float, cfg: PiConfig, cc_current: float,
               t_ref: float, dt: float) -> Tuple[ControllerCommand, PhaseState]:
    """Constant current until Tc_est >= t_ref, then PI on the core-temperature error."""
    if phase.phase == PHASE_CC:
        if tc_est < t_ref:
            return ControllerCommand(cc_current, {'phase': PHASE_CC}), phase
        logger.debug(f"CC-CT: switching to CT at Tc_est={tc_est:.3f} C")
        phase = PhaseState(PHASE_CT, cc_current)
    error = t_ref - tc_est
    current, phase = pi_update(phase, error, cfg, dt)
    return ControllerCommand(current, {'phase': PHASE_CT, 'integral': phase.integral}), phase


class CcCvController(Controller):
    """CC-CV discharge on the measured terminal voltage."""

    def __init__(self, name: str = 'CC-CV', dt: float = 1.0, u_max: float = U_MAX,
                 cc_current: float = CC_CURRENT, v_cutoff: float = CV_CUTOFF_VOLTAGE,
                 kp: float = CV_KP, ki: float = CV_KI):
        super().__init__(name, dt, u_max)
        self.cc_current = cc_current
        self.v_cutoff = v_cutoff
        self.pi = PiConfig(kp, ki, v_cutoff, (0.0, u_max))
        self.phase = PhaseState()

    def compute(self, observation: Observation) -> ControllerCommand:
        command, self.phase = cc_cv_step(self.phase, observation.v_meas, self.pi,
                                         self.cc_current, self.v_cutoff, self.dt)
        return command

    def reset(self):
        self.phase = PhaseState()


class CcCtController(Controller):
    """CC-CT discharge on the estimated core temperature."""

    def __init__(self, name: str = 'CC-CT', dt: float = 1.0, u_max: float = U_MAX,
                 cc_current: float = CC_CURRENT, t_ref: float = 40.0,
                 kp: float = CT_KP, ki: float = CT_KI):
        super().__init__(name, dt, u_max)
        self.cc_current = cc_current
        self.t_ref = t_ref
        self.pi = PiConfig(kp, ki, t_ref, (0.0, u_max))
        self.phase = PhaseState()

    def compute(self, observation: Observation) -> ControllerCommand:
        command, self.phase = cc_ct_step(self.phase, observation.x_hat.t_c, self.pi,
                                         self.cc_current, self.t_ref, self.dt)
        return command

    def reset(self):
        self.phase = PhaseState()
