"""H-representation polytopes and minimal robust positively invariant sets.

A polytope is the set {x : A x <= b}. Rows are kept at unit Euclidean norm.
Support queries run one LP through scipy's HiGHS backend; axis-aligned boxes
short-circuit to the closed form.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import linprog

from config import RPI_CLOSURE_ROUNDS, RPI_EPSILON, RPI_MAX_STEPS, RPI_VERIFY_TOL
from core.errors import (
    DimensionMismatchError, DischargeError, EmptySetError, InvalidArgumentError,
    NotSchurStableError, OverTightenedError, RankDeficiencyError, RpiConvergenceError,
)

logger = logging.getLogger(__name__)

ZERO_ROW_TOL = 1e-12
REDUNDANCY_TOL = 1e-9
DUPLICATE_TOL = 1e-9


def _solve_lp(cost: np.ndarray, a_ub: np.ndarray, b_ub: np.ndarray):
    return linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=(None, None), method='highs')


class Polytope:
    """Convex polyhedron {x : A x <= b} in canonical row form.

    Args:
        a_matrix: m x n coefficients
        b_vector: m offsets
        check_nonempty: Certify feasibility with one LP
    """

    def __init__(self, a_matrix, b_vector, check_nonempty: bool = True):
        a = np.atleast_2d(np.asarray(a_matrix, dtype=float))
        b = np.asarray(b_vector, dtype=float).reshape(-1)
        if a.shape[0] != b.shape[0]:
            raise DimensionMismatchError(f"A has {a.shape[0]} rows but b has {b.shape[0]} entries")
        if np.any(np.isnan(a)) or np.any(np.isnan(b)):
            raise InvalidArgumentError("Polytope data contains NaN")

        norms = np.linalg.norm(a, axis=1)
        zero = norms <= ZERO_ROW_TOL
        if np.any(zero & (b < 0.0)):
            raise EmptySetError("Zero row with negative offset: 0 <= b fails")
        if np.any(b == -np.inf):
            raise EmptySetError("Constraint with offset -inf")
        # Rows with offset +inf constrain nothing
        keep = ~zero & np.isfinite(b)
        a = a[keep] / norms[keep, None]
        b = b[keep] / norms[keep]

        self._a = a
        self._b = b
        self._dim = a.shape[1]
        self._a.setflags(write=False)
        self._b.setflags(write=False)
        self._box = self._detect_box()

        if check_nonempty:
            self._certify_nonempty()

    def _detect_box(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        if self._a.shape[0] == 0:
            return None
        lower = np.full(self._dim, -np.inf)
        upper = np.full(self._dim, np.inf)
        for row, offset in zip(self._a, self._b):
            axis = int(np.argmax(np.abs(row)))
            if abs(abs(row[axis]) - 1.0) > 1e-12:
                return None
            if row[axis] > 0:
                upper[axis] = min(upper[axis], offset)
            else:
                lower[axis] = max(lower[axis], -offset)
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            return None
        return lower, upper

    def _certify_nonempty(self):
        if self._box is not None:
            lower, upper = self._box
            if np.any(lower > upper + REDUNDANCY_TOL):
                raise EmptySetError(f"Empty box: lower {lower} exceeds upper {upper}")
            return
        if self._a.shape[0] == 0:
            return
        result = _solve_lp(np.zeros(self._dim), self._a, self._b)
        if result.status == 2:
            raise EmptySetError("Polytope is empty")

    @classmethod
    def from_bounds(cls, lower: Sequence[float], upper: Sequence[float]) -> 'Polytope':
        """Axis-aligned box lower <= x <= upper."""
        lower = np.asarray(lower, dtype=float).reshape(-1)
        upper = np.asarray(upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise DimensionMismatchError("Bounds have different lengths")
        n = lower.size
        a = np.vstack([np.eye(n), -np.eye(n)])
        b = np.concatenate([upper, -lower])
        return cls(a, b)

    @classmethod
    def point(cls, center: Sequence[float]) -> 'Polytope':
        center = np.asarray(center, dtype=float).reshape(-1)
        return cls.from_bounds(center, center)

    @property
    def a_matrix(self) -> np.ndarray:
        return self._a

    @property
    def b_vector(self) -> np.ndarray:
        return self._b

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def n_rows(self) -> int:
        return self._a.shape[0]

    @property
    def box_bounds(self) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        """(lower, upper) if the polytope is an axis-aligned box, else None."""
        return self._box

    def __repr__(self):
        return f"Polytope(dim={self._dim}, rows={self.n_rows})"

    def to_csv_rows(self) -> pd.DataFrame:
        columns = [f"a{i}" for i in range(self._dim)]
        frame = pd.DataFrame(self._a, columns=columns)
        frame['b'] = self._b
        return frame


def _check_same_dim(p: Polytope, q: Polytope):
    if p.dim != q.dim:
        raise DimensionMismatchError(f"Dimension mismatch: {p.dim} vs {q.dim}")


def support(poly: Polytope, direction: Sequence[float]) -> float:
    """Support function h_P(d) = max {d.x : x in P}; +inf when unbounded."""
    d = np.asarray(direction, dtype=float).reshape(-1)
    if d.size != poly.dim:
        raise DimensionMismatchError(f"Direction has {d.size} entries, polytope has dimension {poly.dim}")
    if not np.any(d):
        raise InvalidArgumentError("Support direction must be nonzero")

    box = poly.box_bounds
    if box is not None:
        lower, upper = box
        return float(np.sum(np.maximum(d * lower, d * upper)))
    if poly.n_rows == 0:
        return np.inf

    result = _solve_lp(-d, poly.a_matrix, poly.b_vector)
    if result.status == 0:
        return float(-result.fun)
    if result.status == 3:
        return np.inf
    if result.status == 2:
        raise EmptySetError("Support queried on an empty polytope")
    raise DischargeError(f"Support LP failed: {result.message}")


def support_many(poly: Polytope, directions: np.ndarray) -> np.ndarray:
    """Support function along every row of `directions`."""
    directions = np.atleast_2d(directions)
    box = poly.box_bounds
    if box is not None:
        lower, upper = box
        return np.sum(np.maximum(directions * lower, directions * upper), axis=1)
    # A zero direction has support 0 on any nonempty set
    return np.array([support(poly, d) if np.any(d) else 0.0 for d in directions])


def contains(poly: Polytope, x: Sequence[float], tol: float = 0.0) -> bool:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != poly.dim:
        raise DimensionMismatchError(f"Point has {x.size} entries, polytope has dimension {poly.dim}")
    return bool(np.all(poly.a_matrix @ x <= poly.b_vector + tol))


def _merge_duplicates(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    kept_a: List[np.ndarray] = []
    kept_b: List[float] = []
    for row, offset in zip(a, b):
        for index, existing in enumerate(kept_a):
            if np.max(np.abs(existing - row)) <= DUPLICATE_TOL:
                kept_b[index] = min(kept_b[index], offset)
                break
        else:
            kept_a.append(row)
            kept_b.append(offset)
    if not kept_a:
        return np.zeros((0, a.shape[1])), np.zeros(0)
    return np.array(kept_a), np.array(kept_b)


def redundant_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Greedy redundancy test: row i is redundant when max a_i.x over the other kept rows <= b_i."""
    m = a.shape[0]
    removed = np.zeros(m, dtype=bool)
    for i in range(m):
        others = ~removed
        others[i] = False
        if not np.any(others):
            continue
        result = _solve_lp(-a[i], a[others], b[others])
        if result.status == 0 and -result.fun <= b[i] + REDUNDANCY_TOL:
            removed[i] = True
    return removed


def canonicalize(poly: Polytope, remove_redundant: bool = True) -> Polytope:
    """Sorted unit rows, duplicates merged, redundant rows dropped."""
    a, b = _merge_duplicates(poly.a_matrix, poly.b_vector)
    if a.shape[0] > 1:
        order = np.lexsort(np.column_stack([a, b]).T[::-1])
        a, b = a[order], b[order]
    # After merging, a box has exactly one bound per axis side
    if remove_redundant and a.shape[0] > 1 and poly.box_bounds is None:
        removed = redundant_rows(a, b)
        a, b = a[~removed], b[~removed]
    return Polytope(a, b, check_nonempty=False)


def minkowski_sum(p: Polytope, q: Polytope) -> Polytope:
    """Outer H-representation of p + q over the union of both normal sets."""
    _check_same_dim(p, q)
    normals = np.vstack([p.a_matrix, q.a_matrix])
    if normals.shape[0] == 0:
        return Polytope(np.zeros((0, p.dim)), np.zeros(0), check_nonempty=False)
    offsets = support_many(p, normals) + support_many(q, normals)
    return canonicalize(Polytope(normals, offsets, check_nonempty=False))


def pontryagin_diff(p: Polytope, q: Polytope) -> Polytope:
    """{x : x + q in p for all q in Q}, rows kept in the order of p.

    Raises:
        OverTightenedError: The eroded set is empty
    """
    _check_same_dim(p, q)
    margins = support_many(q, p.a_matrix)
    unbounded = [int(i) for i in np.flatnonzero(~np.isfinite(margins))]
    if unbounded:
        raise OverTightenedError(f"Subtrahend is unbounded along rows {unbounded}", unbounded)
    offsets = p.b_vector - margins
    try:
        return Polytope(p.a_matrix, offsets)
    except EmptySetError:
        # Rows whose eroded halfspace misses the original set entirely
        culprits = []
        for i, (row, offset) in enumerate(zip(p.a_matrix, offsets)):
            if offset < -support(p, -row):
                culprits.append(i)
        if not culprits:
            culprits = [int(i) for i in np.flatnonzero(margins > 0.0)]
        raise OverTightenedError(f"Tightened set is empty (rows {culprits})", culprits) from None


def linear_map(m: np.ndarray, poly: Polytope) -> Polytope:
    """Image {M x : x in P}.

    Exact for invertible square maps and for 1-D targets; otherwise an outer
    approximation over the axis and pairwise-diagonal directions.
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    rows, cols = m.shape
    if cols != poly.dim:
        raise DimensionMismatchError(f"Map has {cols} columns, polytope has dimension {poly.dim}")
    if np.linalg.matrix_rank(m) < rows:
        raise RankDeficiencyError(f"Map of shape {m.shape} does not have full row rank")

    if rows == cols:
        return Polytope(poly.a_matrix @ np.linalg.inv(m), poly.b_vector, check_nonempty=False)

    eye = np.eye(rows)
    directions = [eye[i] for i in range(rows)] + [-eye[i] for i in range(rows)]
    for i in range(rows):
        for j in range(i + 1, rows):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    directions.append((si * eye[i] + sj * eye[j]) / np.sqrt(2.0))
    directions = np.array(directions)
    offsets = support_many(poly, directions @ m)
    return Polytope(directions, offsets, check_nonempty=False)


def cartesian_product(p: Polytope, q: Polytope) -> Polytope:
    a = np.block([
        [p.a_matrix, np.zeros((p.n_rows, q.dim))],
        [np.zeros((q.n_rows, p.dim)), q.a_matrix],
    ])
    return Polytope(a, np.concatenate([p.b_vector, q.b_vector]), check_nonempty=False)


def scale(poly: Polytope, factor: float) -> Polytope:
    if not factor > 0.0:
        raise InvalidArgumentError(f"Scale factor must be positive, got {factor}")
    return Polytope(poly.a_matrix, poly.b_vector * factor, check_nonempty=False)


def translate(poly: Polytope, offset: Sequence[float]) -> Polytope:
    offset = np.asarray(offset, dtype=float).reshape(-1)
    return Polytope(poly.a_matrix, poly.b_vector + poly.a_matrix @ offset, check_nonempty=False)


def is_subset(p: Polytope, q: Polytope, tol: float = 1e-9) -> bool:
    """p subset of q, checked on the facets of q."""
    _check_same_dim(p, q)
    if q.n_rows == 0:
        return True
    return bool(np.all(support_many(p, q.a_matrix) <= q.b_vector + tol))


def bounding_box(poly: Polytope) -> Tuple[np.ndarray, np.ndarray]:
    eye = np.eye(poly.dim)
    upper = support_many(poly, eye)
    lower = -support_many(poly, -eye)
    return lower, upper


@dataclass(frozen=True)
class RpiResult:
    """Outer approximation of the minimal robust positively invariant set."""

    set: Polytope
    s_steps: int
    alpha: float
    epsilon: float


def spectral_radius(matrix: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


def verify_rpi(rpi_set: Polytope, a_k: np.ndarray, w_set: Polytope,
               tol: float = RPI_VERIFY_TOL, directions: Optional[np.ndarray] = None) -> bool:
    """Check A_K R + W subset of R along the facets of R (or the given directions).

    Facet normals make the check exact; extra directions only add confidence.
    """
    a_k = np.asarray(a_k, dtype=float)
    normals = rpi_set.a_matrix if directions is None else np.atleast_2d(directions)
    if directions is None:
        bounds = rpi_set.b_vector
    else:
        bounds = support_many(rpi_set, normals)
    image = support_many(rpi_set, normals @ a_k) + support_many(w_set, normals)
    return bool(np.all(image <= bounds + tol))


def _unit(v: np.ndarray) -> Optional[np.ndarray]:
    norm = np.linalg.norm(v)
    if norm <= ZERO_ROW_TOL:
        return None
    return v / norm


def _add_direction(directions: List[np.ndarray], candidate: Optional[np.ndarray]) -> bool:
    if candidate is None:
        return False
    for existing in directions:
        if np.dot(existing, candidate) >= 1.0 - 1e-10:
            return False
    directions.append(candidate)
    return True


def compute_mrpi(a_k: np.ndarray, w_set: Polytope, epsilon: float = RPI_EPSILON,
                 max_steps: int = RPI_MAX_STEPS, closure_rounds: int = RPI_CLOSURE_ROUNDS,
                 verify_tol: float = RPI_VERIFY_TOL, normal_terms: int = 6) -> RpiResult:
    """Epsilon-outer approximation of the minimal RPI set of e+ = A_K e + w.

    The truncation index s is the smallest with A_K^s W inside alpha W and
    alpha <= eps / (eps + M_s); the set (1 - alpha)^-1 (W + A_K W + ... +
    A_K^{s-1} W) is then written in H-form over a direction template. The
    template is closed under d -> A_K' d where invariance fails, and any
    remaining facet is relaxed to its image bound until every facet passes.

    Args:
        a_k: Closed-loop matrix, Schur stable
        w_set: Disturbance set containing the origin
        epsilon: Target accuracy in the infinity norm
        max_steps: Cap on s
        closure_rounds: Cap on template refinement rounds
        verify_tol: Slack allowed in the invariance check
        normal_terms: Number of A_K^i W facet families seeded into the template

    Returns:
        RpiResult with the achieved epsilon

    Raises:
        NotSchurStableError: spectral radius of a_k >= 1
        RpiConvergenceError: s or the refinement rounds exceed their caps
    """
    a_k = np.atleast_2d(np.asarray(a_k, dtype=float))
    n = w_set.dim
    if a_k.shape != (n, n):
        raise DimensionMismatchError(f"A_K has shape {a_k.shape}, W has dimension {n}")
    rho = spectral_radius(a_k)
    if rho >= 1.0:
        raise NotSchurStableError(f"A_K is not Schur stable (spectral radius {rho:.6f})")
    if not contains(w_set, np.zeros(n), tol=1e-12):
        raise InvalidArgumentError("Disturbance set must contain the origin")

    eye = np.eye(n)
    w_normals = w_set.a_matrix
    w_offsets = w_set.b_vector
    powers = [eye]
    m_plus = np.zeros(n)
    m_minus = np.zeros(n)
    s = 0
    while True:
        s += 1
        if s > max_steps:
            raise RpiConvergenceError(f"Truncation index exceeded {max_steps} (spectral radius {rho:.6f})")
        previous = powers[-1]
        m_plus += support_many(w_set, eye @ previous)
        m_minus += support_many(w_set, -eye @ previous)
        current = previous @ a_k
        powers.append(current)

        image = support_many(w_set, w_normals @ current)
        ratios = np.empty_like(image)
        for i, (h, b) in enumerate(zip(image, w_offsets)):
            if b > ZERO_ROW_TOL:
                ratios[i] = h / b
            else:
                ratios[i] = 0.0 if h <= ZERO_ROW_TOL else np.inf
        alpha = float(np.max(ratios)) if ratios.size else 0.0
        m_s = float(max(np.max(m_plus), np.max(m_minus)))
        if alpha <= epsilon / (epsilon + m_s) and alpha < 1.0:
            break

    achieved = alpha * m_s / (1.0 - alpha)
    logger.debug(f"mRPI truncation: s={s}, alpha={alpha:.3e}, M_s={m_s:.3e}, eps={achieved:.3e}")

    summands = powers[:s]

    def h_rpi(direction: np.ndarray) -> float:
        total = sum(float(support_many(w_set, (direction @ power)[None, :])[0]) for power in summands)
        return total / (1.0 - alpha)

    directions: List[np.ndarray] = []
    for row in w_normals:
        _add_direction(directions, _unit(row))
    for i in range(n):
        _add_direction(directions, eye[i])
        _add_direction(directions, -eye[i])
    if abs(np.linalg.det(a_k)) > 1e-12:
        inverse = np.linalg.inv(a_k)
        inverse_power = eye
        for _ in range(1, min(s, normal_terms)):
            inverse_power = inverse_power @ inverse
            for row in w_normals:
                _add_direction(directions, _unit(row @ inverse_power))

    offsets = [h_rpi(d) for d in directions]
    for round_index in range(closure_rounds):
        candidate = Polytope(np.array(directions), np.array(offsets), check_nonempty=False)
        normals = candidate.a_matrix
        image = support_many(candidate, normals @ a_k) + support_many(w_set, normals)
        failing = np.flatnonzero(image > candidate.b_vector + verify_tol)
        if failing.size == 0:
            rpi_set = canonicalize(candidate)
            inflation = float(np.max(np.array(offsets) - np.array([h_rpi(d) for d in directions])))
            logger.info(f"mRPI set: s={s}, alpha={alpha:.3e}, {rpi_set.n_rows} facets, "
                        f"{round_index} refinement rounds")
            return RpiResult(rpi_set, s, alpha, achieved + max(inflation, 0.0))

        added = 0
        for i in failing:
            if _add_direction(directions, _unit(a_k.T @ normals[i])):
                offsets.append(h_rpi(directions[-1]))
                added += 1
        if added == 0:
            for i in failing:
                offsets[i] = float(image[i])
        logger.debug(f"mRPI refinement round {round_index}: {failing.size} failing facets, {added} added")

    raise RpiConvergenceError(f"Invariance check still failing after {closure_rounds} refinement rounds")
