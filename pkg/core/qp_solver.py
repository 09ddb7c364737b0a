"""Operator-splitting (ADMM) solver for small dense convex QPs.

    minimize    0.5 x'Px + q'x
    subject to  G x <= h,  A_eq x = b_eq

The iteration follows OSQP: Ruiz equilibration, the reduced KKT system
factorized once per penalty value, over-relaxation, adaptive rho,
infeasibility certificates and an active-set polish. The polish is tried
whenever the residuals come within POLISH_TRIGGER of the tolerances and once
more at the iteration cap; a polished point that passes the KKT checks ends
the solve as solved.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, null_space

from config import QP_EPS_ABS, QP_EPS_REL, QP_MAX_ITER
from core.errors import ControllerFaultError, DimensionMismatchError, SynthesisError

logger = logging.getLogger(__name__)

SOLVED = 'solved'
PRIMAL_INFEASIBLE = 'primal_infeasible'
DUAL_INFEASIBLE = 'dual_infeasible'
MAX_ITER = 'max_iter'

RHO_MIN, RHO_MAX = 1e-6, 1e6
EQ_RHO_FACTOR = 1e3
SCALING_CLIP = (1e-4, 1e4)
POLISH_TRIGGER = 1e3


@dataclass
class QpProblem:
    """Problem data; missing constraint blocks are empty."""

    hessian: np.ndarray
    gradient: np.ndarray
    a_ineq: Optional[np.ndarray] = None
    b_ineq: Optional[np.ndarray] = None
    a_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None

    def __post_init__(self):
        self.hessian = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        self.gradient = np.asarray(self.gradient, dtype=float).reshape(-1)
        n = self.gradient.size
        if self.hessian.shape != (n, n):
            raise DimensionMismatchError(f"Hessian shape {self.hessian.shape} does not match {n} variables")
        self.a_ineq, self.b_ineq = self._block(self.a_ineq, self.b_ineq, n)
        self.a_eq, self.b_eq = self._block(self.a_eq, self.b_eq, n)

    @staticmethod
    def _block(a, b, n):
        if a is None:
            return np.zeros((0, n)), np.zeros(0)
        a = np.atleast_2d(np.asarray(a, dtype=float)).reshape(-1, n)
        b = np.asarray(b, dtype=float).reshape(-1)
        if a.shape[0] != b.size:
            raise DimensionMismatchError(f"Constraint block has {a.shape[0]} rows but {b.size} offsets")
        return a, b

    @property
    def n_vars(self) -> int:
        return self.gradient.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.hessian @ x + self.gradient @ x)


@dataclass
class QpSettings:
    eps_abs: float = QP_EPS_ABS
    eps_rel: float = QP_EPS_REL
    eps_infeasible: float = 1e-5
    max_iter: int = QP_MAX_ITER
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    adaptive_rho_interval: int = 25
    scaling_iters: int = 10
    polish: bool = True
    raise_on_limit: bool = True


@dataclass
class QpResult:
    solution: np.ndarray
    status: str
    iterations: int
    objective: float = np.nan
    dual: np.ndarray = field(default_factory=lambda: np.zeros(0))
    primal_residual: float = np.nan
    dual_residual: float = np.nan
    polished: bool = False

    @property
    def solved(self) -> bool:
        return self.status == SOLVED


def check_convexity(problem: QpProblem, tol: float = 1e-8):
    """Hessian must be symmetric and PSD on the null space of the equalities.

    Raises:
        SynthesisError: The QP is not convex
    """
    p = problem.hessian
    scale = max(1.0, float(np.max(np.abs(p))) if p.size else 1.0)
    if np.max(np.abs(p - p.T), initial=0.0) > tol * scale:
        raise SynthesisError("QP Hessian is not symmetric")
    reduced = p
    if problem.a_eq.shape[0] > 0:
        basis = null_space(problem.a_eq)
        if basis.shape[1] == 0:
            return
        reduced = basis.T @ p @ basis
    if reduced.size and float(np.min(np.linalg.eigvalsh(0.5 * (reduced + reduced.T)))) < -tol * scale:
        raise SynthesisError("QP Hessian is not positive semidefinite on the equality null space")


def _inf_norm(v: np.ndarray) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _clip_scaling(norms: np.ndarray) -> np.ndarray:
    norms = np.where(norms < SCALING_CLIP[0], 1.0, norms)
    return 1.0 / np.sqrt(np.clip(norms, *SCALING_CLIP))


class _Scaled:
    """Ruiz-equilibrated copy of the problem: x = D xs, y = E ys / c."""

    def __init__(self, p, q, a, lower, upper, iterations):
        n, m = q.size, lower.size
        d = np.ones(n)
        e = np.ones(m)
        c = 1.0
        ps, qs, as_ = p.copy(), q.copy(), a.copy()
        for _ in range(iterations):
            col_p = np.max(np.abs(ps), axis=0) if n else np.zeros(0)
            col_a = np.max(np.abs(as_), axis=0) if m else np.zeros(n)
            delta_d = _clip_scaling(np.maximum(col_p, col_a))
            delta_e = _clip_scaling(np.max(np.abs(as_), axis=1)) if m else np.zeros(0)
            ps = delta_d[:, None] * ps * delta_d[None, :]
            qs = delta_d * qs
            as_ = delta_e[:, None] * as_ * delta_d[None, :]
            d *= delta_d
            e *= delta_e
            cost = max(float(np.mean(np.max(np.abs(ps), axis=0))) if n else 0.0, _inf_norm(qs))
            gamma = 1.0 / np.clip(cost, *SCALING_CLIP) if cost > SCALING_CLIP[0] else 1.0
            ps *= gamma
            qs *= gamma
            c *= gamma
        self.p, self.q, self.a = ps, qs, as_
        self.d, self.e, self.c = d, e, c
        self.lower = e * lower
        self.upper = e * upper


def _polish(problem: QpProblem, a, lower, upper, x, z, y, settings: QpSettings) -> Optional[np.ndarray]:
    """Solve the equality QP on the guessed active set; None if the guess is wrong.

    The KKT system is solved for the minimum-norm correction to x, so
    directions the active set leaves free keep their ADMM values.
    """
    equality = np.isclose(lower, upper)
    lower_active = equality | (z - lower < -y)
    upper_active = equality | (upper - z < y)
    active = lower_active | upper_active
    n = x.size
    a_act = a[active]
    target = np.where(upper_active, upper, lower)[active]
    kkt = np.block([[problem.hessian, a_act.T], [a_act, np.zeros((a_act.shape[0], a_act.shape[0]))]])
    rhs = np.concatenate([-problem.gradient - problem.hessian @ x, target - a_act @ x])
    solution, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    x_pol = x + solution[:n]
    y_act = solution[n:]

    tol = 10.0 * settings.eps_abs
    ax = a @ x_pol
    if np.any(ax < lower - tol) or np.any(ax > upper + tol):
        return None
    only_lower = (lower_active & ~upper_active)[active]
    only_upper = (upper_active & ~lower_active)[active]
    if np.any(y_act[only_upper] < -tol) or np.any(y_act[only_lower] > tol):
        return None
    stationarity = problem.hessian @ x_pol + problem.gradient + a_act.T @ y_act
    if _inf_norm(stationarity) > tol * max(1.0, _inf_norm(problem.gradient)):
        return None
    return x_pol


def qp_solve(problem: QpProblem, settings: Optional[QpSettings] = None,
             x_warm: Optional[np.ndarray] = None, y_warm: Optional[np.ndarray] = None) -> QpResult:
    """Solve a convex QP.

    Args:
        problem: QP data
        settings: Solver settings
        x_warm: Optional primal warm start
        y_warm: Optional dual warm start (inequalities first, then equalities)

    Returns:
        QpResult with status solved, primal_infeasible or dual_infeasible

    Raises:
        SynthesisError: Hessian not PSD on the equality null space
        ControllerFaultError: Iteration cap reached (when settings.raise_on_limit)
    """
    settings = settings or QpSettings()
    check_convexity(problem)
    p = 0.5 * (problem.hessian + problem.hessian.T)
    q = problem.gradient
    n = q.size
    a = np.vstack([problem.a_ineq, problem.a_eq])
    lower = np.concatenate([np.full(problem.b_ineq.size, -np.inf), problem.b_eq])
    upper = np.concatenate([problem.b_ineq, problem.b_eq])
    m = lower.size

    scaled = _Scaled(p, q, a, lower, upper, settings.scaling_iters)
    ps, qs, as_ = scaled.p, scaled.q, scaled.a
    equality = np.isclose(scaled.lower, scaled.upper)

    def rho_vector(rho: float) -> np.ndarray:
        return np.where(equality, EQ_RHO_FACTOR * rho, rho)

    def factorize(rho_vec: np.ndarray):
        return cho_factor(ps + settings.sigma * np.eye(n) + as_.T @ (rho_vec[:, None] * as_))

    rho = settings.rho
    rho_vec = rho_vector(rho)
    factor = factorize(rho_vec)

    x = np.zeros(n) if x_warm is None else np.asarray(x_warm, dtype=float) / scaled.d
    y = np.zeros(m) if y_warm is None else scaled.c * np.asarray(y_warm, dtype=float) / np.where(scaled.e == 0, 1.0, scaled.e)
    z = np.clip(as_ @ x, scaled.lower, scaled.upper)

    d_inv = 1.0 / scaled.d
    e_inv = 1.0 / scaled.e if m else np.zeros(0)
    status = MAX_ITER
    r_prim = r_dual = np.inf
    iteration = 0
    early: Optional[np.ndarray] = None
    can_polish = settings.polish and m > 0

    for iteration in range(1, settings.max_iter + 1):
        x_prev, z_prev, y_prev = x, z, y
        rhs = settings.sigma * x - qs + as_.T @ (rho_vec * z - y)
        x_tilde = cho_solve(factor, rhs)
        z_tilde = as_ @ x_tilde
        x = settings.alpha * x_tilde + (1.0 - settings.alpha) * x_prev
        z_relaxed = settings.alpha * z_tilde + (1.0 - settings.alpha) * z_prev
        z = np.clip(z_relaxed + y / rho_vec, scaled.lower, scaled.upper)
        y = y + rho_vec * (z_relaxed - z)

        # Residuals in the original units
        ax = as_ @ x
        px = ps @ x
        aty = as_.T @ y
        r_prim = _inf_norm(e_inv * (ax - z))
        r_dual = _inf_norm(d_inv * (px + qs + aty)) / scaled.c
        eps_prim = settings.eps_abs + settings.eps_rel * max(_inf_norm(e_inv * ax), _inf_norm(e_inv * z))
        eps_dual = settings.eps_abs + settings.eps_rel * max(
            _inf_norm(d_inv * px), _inf_norm(d_inv * aty), _inf_norm(d_inv * qs)) / scaled.c
        if r_prim <= eps_prim and r_dual <= eps_dual:
            status = SOLVED
            break
        if (can_polish and iteration % settings.adaptive_rho_interval == 0
                and r_prim <= POLISH_TRIGGER * eps_prim and r_dual <= POLISH_TRIGGER * eps_dual):
            early = _polish(problem, a, lower, upper, scaled.d * x, z / scaled.e,
                            scaled.e * y / scaled.c, settings)
            if early is not None:
                status = SOLVED
                break

        delta_y = y - y_prev
        if m and _primal_certificate(delta_y, as_, scaled, lower, upper, settings.eps_infeasible):
            status = PRIMAL_INFEASIBLE
            break
        delta_x = x - x_prev
        if _dual_certificate(delta_x, ps, qs, as_, scaled, settings.eps_infeasible):
            status = DUAL_INFEASIBLE
            break

        if iteration % settings.adaptive_rho_interval == 0:
            prim_scale = max(_inf_norm(ax), _inf_norm(z), 1e-12)
            dual_scale = max(_inf_norm(px), _inf_norm(aty), _inf_norm(qs), 1e-12)
            ratio = (r_prim / prim_scale) / max(r_dual * scaled.c / dual_scale, 1e-30)
            rho_new = float(np.clip(rho * np.sqrt(ratio), RHO_MIN, RHO_MAX))
            if rho_new > 5.0 * rho or rho_new < rho / 5.0:
                rho = rho_new
                rho_vec = rho_vector(rho)
                factor = factorize(rho_vec)

    x_out = scaled.d * x
    y_out = scaled.e * y / scaled.c if m else np.zeros(0)
    z_out = z / scaled.e if m else np.zeros(0)
    result = QpResult(x_out, status, iteration, dual=y_out, primal_residual=r_prim, dual_residual=r_dual)

    if early is not None:
        result.solution = early
        result.polished = True
    elif status in (SOLVED, MAX_ITER) and can_polish:
        polished = _polish(problem, a, lower, upper, x_out, z_out, y_out, settings)
        if polished is not None:
            result.solution = polished
            result.polished = True
            if status == MAX_ITER:
                logger.debug(f"QP polished to optimality at the iteration cap ({settings.max_iter})")
                status = result.status = SOLVED

    if status == SOLVED:
        result.objective = problem.objective(result.solution)
        logger.debug(f"QP solved in {iteration} iterations (polished={result.polished})")
    elif status == MAX_ITER:
        logger.warning(f"QP hit the iteration cap ({settings.max_iter}): "
                       f"r_prim={r_prim:.2e}, r_dual={r_dual:.2e}")
        if settings.raise_on_limit:
            raise ControllerFaultError(f"QP iteration cap {settings.max_iter} exceeded", qp_result=result)
    else:
        logger.debug(f"QP reported {status} after {iteration} iterations")
    return result


def _primal_certificate(delta_y, as_, scaled: _Scaled, lower, upper, eps) -> bool:
    dy = scaled.e * delta_y
    norm_dy = _inf_norm(dy)
    if norm_dy <= 1e-30:
        return False
    if _inf_norm((as_.T @ delta_y) / scaled.d) > eps * norm_dy:
        return False
    with np.errstate(invalid='ignore'):
        bound = np.where(dy > 0, upper * dy, 0.0) + np.where(dy < 0, lower * dy, 0.0)
    return bool(np.sum(bound) < -eps * norm_dy)


def _dual_certificate(delta_x, ps, qs, as_, scaled: _Scaled, eps) -> bool:
    dx = scaled.d * delta_x
    norm_dx = _inf_norm(dx)
    if norm_dx <= 1e-30:
        return False
    if _inf_norm((ps @ delta_x) / scaled.d) > eps * scaled.c * norm_dx:
        return False
    if float(qs @ delta_x) >= -eps * scaled.c * norm_dx:
        return False
    adx = (as_ @ delta_x) / scaled.e if scaled.e.size else np.zeros(0)
    upper_ok = np.where(np.isfinite(scaled.upper), adx <= eps * norm_dx, True)
    lower_ok = np.where(np.isfinite(scaled.lower), adx >= -eps * norm_dx, True)
    return bool(np.all(upper_ok & lower_ok))
