"""Abstract base class for discharge controllers."""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict

from core.data_models import BatteryState


@dataclass(frozen=True)
class Observation:
    """Everything a controller may see at one control instant.

    Plant truth never appears here: the state is the estimator output and
    the voltages/temperatures are sensor readings.
    """

    t: float
    v_meas: float
    ts_meas: float
    x_hat: BatteryState
    soe: float
    u_prev: float
    dt: float


@dataclass(frozen=True)
class ControllerCommand:
    """Applied discharge current plus a per-controller diagnostics record."""

    current: float
    diagnostics: Dict[str, Any] = field(default_factory=dict)


def saturate(current: float, u_max: float) -> float:
    return min(max(float(current), 0.0), float(u_max))


class Controller(ABC):
    """Discharge policy advanced once per control interval.

    Args:
        name: Method label used in traces and tables
        dt: Control interval (s)
        u_max: Upper current bound (A)
    """

    def __init__(self, name: str, dt: float, u_max: float):
        self.name = name
        self.dt = dt
        self.u_max = u_max

    @abstractmethod
    def compute(self, observation: Observation) -> ControllerCommand:
        """Compute the unsaturated command for one control instant.

        Args:
            observation: Sensor readings and estimator output

        Returns:
            ControllerCommand before interface saturation
        """
        pass

    @abstractmethod
    def reset(self):
        """Return to the initial phase with cleared internal state."""
        pass

    def step(self, observation: Observation) -> ControllerCommand:
        """Compute and saturate to [0, u_max]."""
        command = self.compute(observation)
        limited = saturate(command.current, self.u_max)
        if limited != command.current:
            diagnostics = dict(command.diagnostics)
            diagnostics['saturated'] = True
            return ControllerCommand(limited, diagnostics)
        return command


class ZeroController(Controller):
    """Always commands 0 A (harness checks)."""

    def compute(self, observation: Observation) -> ControllerCommand:
        return ControllerCommand(0.0, {'phase': 'IDLE'})

    def reset(self):
        pass
