"""Tests for the ADMM QP solver."""
import numpy as np
import pytest
from scipy.optimize import minimize

from core.errors import ControllerFaultError, DimensionMismatchError, SynthesisError
from core.qp_solver import (
    DUAL_INFEASIBLE, MAX_ITER, PRIMAL_INFEASIBLE, SOLVED, QpProblem, QpSettings, qp_solve,
)


class TestSolved:
    def test_unconstrained(self):
        result = qp_solve(QpProblem(np.diag([2.0, 4.0]), [-2.0, -4.0]))
        assert result.status == SOLVED
        assert np.allclose(result.solution, [1.0, 1.0], atol=1e-5)

    def test_active_upper_bound(self):
        # min (x - 2)^2 subject to x <= 1
        result = qp_solve(QpProblem([[2.0]], [-4.0], a_ineq=[[1.0]], b_ineq=[1.0]))
        assert result.solved
        assert result.solution[0] == pytest.approx(1.0, abs=1e-6)

    def test_coupled_inequality(self):
        problem = QpProblem(np.eye(2), [-2.0, -2.0], a_ineq=[[1.0, 1.0]], b_ineq=[1.0])
        result = qp_solve(problem)
        assert result.solved
        assert np.allclose(result.solution, [0.5, 0.5], atol=1e-6)

    def test_equality(self):
        problem = QpProblem(2.0 * np.eye(2), [0.0, 0.0], a_eq=[[1.0, 1.0]], b_eq=[1.0])
        result = qp_solve(problem)
        assert result.solved
        assert np.allclose(result.solution, [0.5, 0.5], atol=1e-6)

    def test_matches_active_set_reference(self, rng):
        m = rng.normal(size=(4, 4))
        hessian = m @ m.T + np.eye(4)
        gradient = rng.normal(size=4) * 5.0
        a_eq = rng.normal(size=(1, 4))
        b_eq = np.array([0.3])
        # Feasible by construction: the minimum-norm point of the equality is strictly inside
        x_feasible = a_eq[0] * b_eq[0] / (a_eq[0] @ a_eq[0])
        a_ineq = rng.normal(size=(6, 4))
        b_ineq = a_ineq @ x_feasible + rng.uniform(0.5, 1.5, size=6)
        result = qp_solve(QpProblem(hessian, gradient, a_ineq, b_ineq, a_eq, b_eq))

        reference = minimize(
            lambda x: 0.5 * x @ hessian @ x + gradient @ x, np.zeros(4),
            jac=lambda x: hessian @ x + gradient, method='SLSQP',
            constraints=[{'type': 'ineq', 'fun': lambda x: b_ineq - a_ineq @ x, 'jac': lambda x: -a_ineq},
                         {'type': 'eq', 'fun': lambda x: a_eq @ x - b_eq, 'jac': lambda x: a_eq}],
            options={'ftol': 1e-12, 'maxiter': 500})
        assert reference.success
        assert result.solved
        assert result.objective == pytest.approx(reference.fun, rel=1e-4, abs=1e-6)
        assert np.all(a_ineq @ result.solution <= b_ineq + 1e-5)

    def test_warm_start_at_solution(self):
        problem = QpProblem(np.eye(2), [-2.0, -2.0], a_ineq=[[1.0, 1.0]], b_ineq=[1.0])
        result = qp_solve(problem, x_warm=np.array([0.5, 0.5]))
        assert result.solved
        assert np.allclose(result.solution, [0.5, 0.5], atol=1e-6)


class TestFailures:
    def test_primal_infeasible(self):
        # x <= -1 and x >= 1
        problem = QpProblem([[1.0]], [0.0], a_ineq=[[1.0], [-1.0]], b_ineq=[-1.0, -1.0])
        result = qp_solve(problem)
        assert result.status == PRIMAL_INFEASIBLE

    def test_dual_infeasible(self):
        result = qp_solve(QpProblem([[0.0]], [-1.0]))
        assert result.status == DUAL_INFEASIBLE

    def test_nonconvex_hessian(self):
        with pytest.raises(SynthesisError):
            qp_solve(QpProblem(np.diag([1.0, -1.0]), [0.0, 0.0]))

    def test_iteration_cap_raises(self):
        problem = QpProblem(np.eye(2), [-2.0, -2.0], a_ineq=[[1.0, 1.0]], b_ineq=[1.0])
        with pytest.raises(ControllerFaultError) as info:
            qp_solve(problem, QpSettings(max_iter=1, polish=False))
        assert info.value.qp_result.status == MAX_ITER

    def test_iteration_cap_reported(self):
        problem = QpProblem(np.eye(2), [-2.0, -2.0], a_ineq=[[1.0, 1.0]], b_ineq=[1.0])
        result = qp_solve(problem, QpSettings(max_iter=1, polish=False, raise_on_limit=False))
        assert result.status == MAX_ITER

    def test_polish_recovers_at_the_cap(self):
        # One iteration already guesses the active set; the KKT solve finishes the job
        problem = QpProblem(np.eye(2), [-2.0, -2.0], a_ineq=[[1.0, 1.0]], b_ineq=[1.0])
        result = qp_solve(problem, QpSettings(max_iter=1))
        assert result.solved
        assert result.polished
        assert result.iterations == 1
        assert np.allclose(result.solution, [0.5, 0.5], atol=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            QpProblem(np.eye(3), [0.0, 0.0])
