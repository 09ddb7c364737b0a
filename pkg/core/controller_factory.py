"""Factory for creating discharge controllers from their configuration."""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

from config import CC_CURRENT, CT_KI, CT_KP, CV_CUTOFF_VOLTAGE, CV_KI, CV_KP, T_MAX, U_MAX
from core.controller_base import Controller, ZeroController
from core.data_models import BatteryParams
from core.dp_controller import DpConfig, DpController
from core.errors import ConfigurationError
from core.pi_controllers import CcCtController, CcCvController
from core.robust_mpc import MpcConfig, RobustMpcController

logger = logging.getLogger(__name__)

KIND_CC_CV = 'cc_cv'
KIND_CC_CT = 'cc_ct'
KIND_DP = 'dp'
KIND_MPC = 'mpc'
KIND_ZERO = 'zero'
CONTROLLER_KINDS = (KIND_CC_CV, KIND_CC_CT, KIND_DP, KIND_MPC, KIND_ZERO)


@dataclass(frozen=True)
class ControllerSpec:
    """Tagged controller configuration.

    DP and MPC carry their synthesized data; the PI schemes read their
    constants from ``options``.
    """

    kind: str
    name: str
    dt: float
    u_max: float = U_MAX
    options: Dict[str, Any] = field(default_factory=dict)
    dp: Optional[DpConfig] = None
    mpc: Optional[MpcConfig] = None

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ConfigurationError(f"Unknown controller kind '{self.kind}' (expected one of {CONTROLLER_KINDS})")
        if not self.dt > 0.0:
            raise ConfigurationError(f"Controller dt must be positive, got {self.dt}")
        if self.kind == KIND_DP and self.dp is None:
            raise ConfigurationError(f"Controller '{self.name}' needs a DP configuration")
        if self.kind == KIND_MPC and self.mpc is None:
            raise ConfigurationError(f"Controller '{self.name}' needs a synthesized MPC configuration")


def create_controller(spec: ControllerSpec, model_params: BatteryParams) -> Controller:
    """Create a fresh controller instance.

    Args:
        spec: Controller configuration
        model_params: Design model (never the plant)

    Returns:
        Controller ready for its first step
    """
    options = spec.options
    if spec.kind == KIND_CC_CV:
        controller = CcCvController(
            spec.name, spec.dt, spec.u_max,
            cc_current=options.get('cc_current', CC_CURRENT),
            v_cutoff=options.get('v_cutoff', CV_CUTOFF_VOLTAGE),
            kp=options.get('kp', CV_KP), ki=options.get('ki', CV_KI))
    elif spec.kind == KIND_CC_CT:
        controller = CcCtController(
            spec.name, spec.dt, spec.u_max,
            cc_current=options.get('cc_current', CC_CURRENT),
            t_ref=options.get('t_ref', T_MAX),
            kp=options.get('kp', CT_KP), ki=options.get('ki', CT_KI))
    elif spec.kind == KIND_DP:
        controller = DpController(spec.dp, model_params, name=spec.name)
    elif spec.kind == KIND_MPC:
        controller = RobustMpcController(spec.mpc, model_params, u_max=spec.u_max, name=spec.name)
    else:
        controller = ZeroController(spec.name, spec.dt, spec.u_max)
    logger.debug(f"Created {type(controller).__name__} '{spec.name}' (dt={spec.dt} s)")
    return controller
