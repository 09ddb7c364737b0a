"""Data models for the electrothermal battery."""
from dataclasses import dataclass, field, replace
from typing import Sequence, Tuple

import numpy as np

from config import (
    CELL_C1, CELL_C_C, CELL_C_S, CELL_CAPACITY, CELL_R0, CELL_R1, CELL_R_C, CELL_R_U, OCV_CURVE,
    SOC_SLACK, T_AMBIENT,
)
from core.errors import ConfigurationError, InvalidArgumentError

STATE_FIELDS = ('soc', 'v1', 't_s', 't_c')


@dataclass(frozen=True)
class BatteryParams:
    """Physical constants of the single-RC electrothermal cell.

    Discharge current is positive. V1 is the polarization drop, positive while
    discharging, and the terminal voltage sags as phi(SoC) - V1 - R0*I.
    """

    capacity_nominal: float                 # Ah
    r0: float                               # Ohm
    r1: float                               # Ohm
    c1: float                               # F
    r_u: float                              # K/W
    r_c: float                              # K/W
    c_s: float                              # J/K
    c_c: float                              # J/K
    t_ambient: float                        # degC
    ocv_curve: Tuple[Tuple[float, float], ...]
    energy_nominal: float = 0.0             # J, 0 until calibrated
    eta: float = 1.0

    def __post_init__(self):
        curve = tuple((float(s), float(v)) for s, v in self.ocv_curve)
        object.__setattr__(self, 'ocv_curve', curve)

        for name in ('capacity_nominal', 'r0', 'r1', 'c1', 'r_u', 'r_c', 'c_s', 'c_c'):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ConfigurationError(f"{name} must be strictly positive, got {value}")
        if not np.isfinite(self.t_ambient):
            raise ConfigurationError("t_ambient must be finite")
        if not 0.0 < self.eta <= 1.0:
            raise ConfigurationError(f"eta must lie in (0, 1], got {self.eta}")
        if not np.isfinite(self.energy_nominal) or self.energy_nominal < 0.0:
            raise ConfigurationError(f"energy_nominal must be >= 0, got {self.energy_nominal}")

        if len(curve) < 2:
            raise ConfigurationError("ocv_curve needs at least two breakpoints")
        soc = np.array([s for s, _ in curve])
        volts = np.array([v for _, v in curve])
        if soc[0] < 0.0 or soc[-1] > 1.0 or np.any(np.diff(soc) <= 0.0):
            raise ConfigurationError("ocv_curve SoC breakpoints must be strictly increasing within [0, 1]")
        if np.any(np.diff(volts) <= 0.0):
            raise ConfigurationError("ocv_curve voltages must be strictly increasing")

    @property
    def ocv_soc(self) -> np.ndarray:
        return np.array([s for s, _ in self.ocv_curve])

    @property
    def ocv_voltage(self) -> np.ndarray:
        return np.array([v for _, v in self.ocv_curve])

    @property
    def total_resistance(self) -> float:
        return self.r0 + self.r1

    @classmethod
    def default(cls) -> 'BatteryParams':
        """Shipped design cell, nominal energy not yet calibrated."""
        return cls(CELL_CAPACITY, CELL_R0, CELL_R1, CELL_C1, CELL_R_U, CELL_R_C,
                   CELL_C_S, CELL_C_C, T_AMBIENT, OCV_CURVE)

    def with_energy(self, energy_nominal: float) -> 'BatteryParams':
        """Return a copy carrying the given nominal energy (J)."""
        return replace(self, energy_nominal=float(energy_nominal))


@dataclass(frozen=True)
class BatteryState:
    """State x = [SoC, V1, Ts, Tc]."""

    soc: float
    v1: float
    t_s: float
    t_c: float

    def __post_init__(self):
        values = (self.soc, self.v1, self.t_s, self.t_c)
        if not all(np.isfinite(v) for v in values):
            raise InvalidArgumentError(f"Non-finite battery state: {values}")
        soc = min(max(float(self.soc), -SOC_SLACK), 1.0 + SOC_SLACK)
        object.__setattr__(self, 'soc', soc)

    def as_array(self) -> np.ndarray:
        return np.array([self.soc, self.v1, self.t_s, self.t_c], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'BatteryState':
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.shape != (4,):
            raise InvalidArgumentError(f"Battery state needs 4 entries, got {values.shape}")
        return cls(*(float(v) for v in values))

    @classmethod
    def fully_charged(cls, t_ambient: float) -> 'BatteryState':
        """Full cell at rest in thermal equilibrium with the ambient."""
        return cls(1.0, 0.0, t_ambient, t_ambient)


@dataclass(frozen=True)
class LinearModel:
    """Discrete affine model x(k+1) = A x(k) + B u(k) + c about (x_op, u_op)."""

    a_matrix: np.ndarray
    b_matrix: np.ndarray
    x_op: BatteryState
    u_op: float
    dt: float
    c_vector: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        a = np.asarray(self.a_matrix, dtype=float)
        b = np.asarray(self.b_matrix, dtype=float).reshape(-1, 1)
        c = np.asarray(self.c_vector, dtype=float).reshape(-1)
        if a.shape != (4, 4) or b.shape != (4, 1) or c.shape != (4,):
            raise InvalidArgumentError(
                f"LinearModel needs A 4x4, B 4x1, c 4; got {a.shape}, {b.shape}, {c.shape}")
        object.__setattr__(self, 'a_matrix', a)
        object.__setattr__(self, 'b_matrix', b)
        object.__setattr__(self, 'c_vector', c)

    @property
    def b_vector(self) -> np.ndarray:
        return self.b_matrix[:, 0]

    @property
    def x_next_op(self) -> np.ndarray:
        """Model prediction from the operating point under u_op."""
        return self.predict(self.x_op.as_array(), self.u_op)

    def predict(self, x: np.ndarray, u: float) -> np.ndarray:
        return self.a_matrix @ np.asarray(x, dtype=float) + self.b_vector * float(u) + self.c_vector


@dataclass(frozen=True)
class EnergyAccount:
    """Extracted energy (J) and state of energy."""

    extracted: float = 0.0
    soe: float = 1.0

    @classmethod
    def full(cls) -> 'EnergyAccount':
        return cls(0.0, 1.0)
