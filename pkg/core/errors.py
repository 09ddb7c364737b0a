"""Exception hierarchy for the discharge toolkit."""
from typing import Optional, Sequence

import numpy as np


class DischargeError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigurationError(DischargeError, ValueError):
    """Invalid configuration value or file.

    Attributes:
        line: 1-based line number in the config file, when known
        path: Config file path, when known
    """

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.message = message
        self.line = line
        self.path = path
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            location = f"line {line}: "
        super().__init__(f"{location}{message}")


class InvalidArgumentError(DischargeError, ValueError):
    """Argument outside the documented domain (non-finite, wrong sign, ...)."""


class DimensionMismatchError(DischargeError, ValueError):
    """Operands live in spaces of different dimension."""


class RankDeficiencyError(DischargeError, ValueError):
    """A linear map does not have full row rank."""


class NumericalBlowupError(DischargeError, ArithmeticError):
    """Integration produced a non-finite state.

    Attributes:
        state: The offending state vector
    """

    def __init__(self, message: str, state: Optional[Sequence[float]] = None):
        self.state = None if state is None else np.asarray(state, dtype=float)
        super().__init__(message)


class EstimatorDegenerateError(DischargeError):
    """Innovation covariance is singular."""


class EmptySetError(DischargeError):
    """A polytope has no feasible point."""


class OverTightenedError(EmptySetError):
    """Constraint tightening removed every admissible point.

    Attributes:
        rows: Indices of the constraint rows that became infeasible first
    """

    def __init__(self, message: str, rows: Sequence[int] = ()):
        self.rows = list(rows)
        super().__init__(message)


class NotSchurStableError(DischargeError, ValueError):
    """Closed-loop matrix has spectral radius >= 1."""


class RpiConvergenceError(DischargeError):
    """Invariant-set computation exceeded its iteration cap."""


class SynthesisError(DischargeError):
    """Controller synthesis failed (Riccati divergence, non-PSD Hessian, ...)."""


class DpInfeasibleError(DischargeError):
    """Dynamic-programming problem has no admissible action.

    Attributes:
        node: (SoC, Tc) coordinates where feasibility was lost
    """

    def __init__(self, message: str, node: Optional[Sequence[float]] = None):
        self.node = None if node is None else tuple(float(v) for v in node)
        super().__init__(message)


class ControllerFaultError(DischargeError):
    """Controller could not produce a command.

    Attributes:
        qp_result: Solver state at the time of failure, if any
    """

    def __init__(self, message: str, qp_result=None):
        self.qp_result = qp_result
        super().__init__(message)
