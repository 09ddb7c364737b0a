"""Tests for LQR synthesis, constraint tightening and the tube MPC step."""
from dataclasses import replace

import numpy as np
import pytest
from scipy.linalg import solve_discrete_are

from config import MPC_MAX_CAP_FALLBACKS
from core.data_models import BatteryState, LinearModel
from core.errors import ControllerFaultError, OverTightenedError, SynthesisError
from core.polytope import Polytope, RpiResult, bounding_box, is_subset, spectral_radius, support, verify_rpi
from core.qp_solver import QpSettings
from core.robust_mpc import (
    MpcConfig, MpcMemory, MpcSettings, build_constraint_set, design_feedback_gain, lqr_gain,
    mpc_step, scaled_model, synthesis_model, synthesize_mpc,
)

UNIT_SCALE = (1.0, 1.0, 1.0, 1.0)


@pytest.fixture
def decoupled_model() -> LinearModel:
    """Diagonal plant where the input only drives the fourth state."""
    return LinearModel(np.diag([0.9, 0.5, 0.6, 0.7]), np.array([[0.0], [0.0], [0.0], [0.1]]),
                       BatteryState(0.5, 0.0, 20.0, 20.0), 0.0, 20.0)


@pytest.fixture
def unit_settings() -> MpcSettings:
    return MpcSettings(state_weight=(1.0, 1.0, 1.0, 1.0), input_weight=1.0, state_scale=UNIT_SCALE,
                       epsilon=1e-3)


def small_box(tc_half_width: float) -> Polytope:
    half = np.array([1e-4, 1e-4, 1e-4, tc_half_width])
    return Polytope.from_bounds(-half, half)


def free_config(q_weight=(1e4, 1.0), r_weight=1.0, tightened=None) -> MpcConfig:
    """Horizon-1 controller with a point tube and loose constraints."""
    loose = Polytope.from_bounds([-1e3] * 5, [1e3] * 5)
    return MpcConfig(
        horizon=1, q_weight=np.asarray(q_weight), r_weight=r_weight, k_gain=np.zeros((1, 4)),
        rpi=RpiResult(Polytope.point(np.zeros(4)), 1, 0.0, 0.0),
        tightened=tightened if tightened is not None else loose, rate_limit=np.inf,
        y_target=np.array([0.0, 40.0]), dt=20.0, constraints=loose, k_rpi=Polytope.point([0.0]))


class TestLqr:
    def test_scalar_closed_form(self):
        gain = lqr_gain([[1.0]], [[1.0]], 1.0, 1.0)
        golden = (1.0 + np.sqrt(5.0)) / 2.0
        assert gain[0, 0] == pytest.approx(-golden / (1.0 + golden), rel=1e-9)

    def test_matches_riccati_solution(self):
        a = np.array([[1.0, 1.0], [0.0, 1.0]])
        b = np.array([[0.0], [1.0]])
        q, r = np.eye(2), np.array([[2.0]])
        gain = lqr_gain(a, b, q, r)
        p = solve_discrete_are(a, b, q, r)
        expected = -np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
        assert np.allclose(gain, expected)
        assert spectral_radius(a + b @ gain) < 1.0

    def test_unstabilizable_pair(self):
        a = np.diag([2.0, 0.5])
        b = np.array([[0.0], [1.0]])
        with pytest.raises(SynthesisError):
            lqr_gain(a, b, np.eye(2), 1.0)

    def test_cell_feedback_gain_is_stabilizing(self, cell):
        model = synthesis_model(cell, 0.5, 20.0, 20.0)
        gain = design_feedback_gain(model)
        a_s, b_s, _ = scaled_model(model)
        assert gain.shape == (1, 4)
        assert spectral_radius(a_s + b_s @ gain) < 1.0


class TestConstraints:
    def test_row_order_and_bounds(self):
        constraints = build_constraint_set(40.0, 40.0, (1.0, 0.1, 10.0, 10.0))
        assert constraints.dim == 5
        assert np.allclose(constraints.b_vector, [4.0, 0.0, 0.0, 40.0])
        assert constraints.a_matrix[0, 3] == 1.0
        assert constraints.a_matrix[1, 0] == -1.0

    def test_synthesis_tightens_by_tube_support(self, decoupled_model, unit_settings):
        constraints = build_constraint_set(40.0, 40.0, UNIT_SCALE)
        w_set = small_box(0.05)
        cfg = synthesize_mpc(decoupled_model, constraints, w_set, unit_settings)
        a_s, b_s, _ = scaled_model(decoupled_model, UNIT_SCALE)
        assert verify_rpi(cfg.rpi.set, a_s + b_s @ cfg.k_gain, w_set)
        assert is_subset(cfg.tightened, constraints, tol=1e-8)
        lower, upper = bounding_box(cfg.rpi.set)
        assert cfg.margins[0] == pytest.approx(upper[3], rel=1e-6)
        assert cfg.margins[1] == pytest.approx(-lower[0], rel=1e-6)
        assert cfg.margins[3] == pytest.approx(support(cfg.k_rpi, [1.0]), rel=1e-6)
        low, high = cfg.input_bounds
        assert 0.0 < low < high < 40.0

    def test_over_tightened_input_rows(self, decoupled_model, unit_settings):
        constraints = build_constraint_set(40.0, 40.0, UNIT_SCALE)
        with pytest.raises(OverTightenedError) as info:
            synthesize_mpc(decoupled_model, constraints, small_box(1000.0), unit_settings)
        assert info.value.rows == [2, 3]


class TestMpcStep:
    def test_horizon_one_closed_form(self, cell):
        state = BatteryState(0.8, 0.05, 24.0, 27.0)
        model = synthesis_model(cell, 0.8, 20.0, 20.0, t_core=27.0)
        cfg = free_config()
        soe, v_meas = 0.8, 3.9
        command, memory = mpc_step(state, soe, cfg, model, cell, u_prev=20.0, v_meas=v_meas)

        g = cell.eta * v_meas * cfg.dt / cell.energy_nominal
        b_tc = model.b_matrix[3, 0]
        m = model.predict(state.as_array(), 0.0)[3]
        q_soe, q_tc, r = 1e4, 1.0, 1.0
        expected = (q_soe * g * soe - q_tc * b_tc * (m - 40.0)) / (q_soe * g ** 2 + q_tc * b_tc ** 2 + r)

        assert command.diagnostics['qp_status'] == 'solved'
        assert command.current == pytest.approx(expected, rel=1e-3, abs=1e-4)
        assert memory.solves == 1

    def test_infeasible_qp_falls_back_to_lower_bound(self, cell):
        state = BatteryState(0.8, 0.05, 24.0, 27.0)
        model = synthesis_model(cell, 0.8, 20.0, 20.0)
        # Nominal Tc must stay below 10 C while the tube pins it at 27 C
        tightened = Polytope.from_bounds([-1e3, -1e3, -1e3, -1e3, 5.0], [1e3, 1e3, 1e3, 1.0, 40.0])
        cfg = free_config(tightened=tightened)
        settings = QpSettings(max_iter=2000, raise_on_limit=False)
        command, memory = mpc_step(state, 0.8, cfg, model, cell, u_prev=0.0, v_meas=3.9,
                                   qp_settings=settings)
        assert command.diagnostics['fallback'] is True
        assert command.current == pytest.approx(5.0)
        assert memory.fallbacks == 1
        command, memory = mpc_step(state, 0.8, cfg, model, cell, 0.0, 3.9, memory, settings)
        assert command.current == pytest.approx(5.0)
        assert memory.fallbacks == 2

    def test_nominal_states_follow_the_model(self, cell):
        state = BatteryState(0.8, 0.05, 24.0, 27.0)
        model = synthesis_model(cell, 0.8, 20.0, 20.0, t_core=27.0)
        cfg = replace(free_config(), horizon=3)
        command, memory = mpc_step(state, 0.8, cfg, model, cell, u_prev=20.0, v_meas=3.9)
        assert command.diagnostics['qp_status'] == 'solved'
        a_s, b_s, c_s = scaled_model(model)
        predicted = memory.states[:-1] @ a_s.T + memory.inputs[:, None] * b_s[:, 0] + c_s
        assert memory.states.shape == (4, 4)
        assert np.allclose(memory.states[1:], predicted, atol=1e-9)
        assert np.allclose(memory.states[0], state.as_array() / cfg.state_scale, atol=1e-5)

    def test_iteration_cap_falls_back(self, cell):
        state = BatteryState(0.8, 0.05, 24.0, 27.0)
        model = synthesis_model(cell, 0.8, 20.0, 20.0, t_core=27.0)
        cfg = free_config()
        capped = QpSettings(max_iter=1, polish=False)
        command, memory = mpc_step(state, 0.8, cfg, model, cell, 20.0, 3.9, qp_settings=capped)
        assert command.diagnostics['qp_status'] == 'max_iter'
        assert command.diagnostics['fallback'] is True
        assert command.current == pytest.approx(cfg.input_bounds[0])
        assert memory.cap_hits == 1
        command, memory = mpc_step(state, 0.8, cfg, model, cell, 20.0, 3.9, memory)
        assert command.diagnostics['qp_status'] == 'solved'
        assert memory.cap_hits == 0

    def test_repeated_iteration_caps_fault(self, cell):
        state = BatteryState(0.8, 0.05, 24.0, 27.0)
        model = synthesis_model(cell, 0.8, 20.0, 20.0, t_core=27.0)
        cfg = free_config()
        capped = QpSettings(max_iter=1, polish=False)
        memory = MpcMemory()
        for _ in range(MPC_MAX_CAP_FALLBACKS - 1):
            _, memory = mpc_step(state, 0.8, cfg, model, cell, 20.0, 3.9, memory, capped)
        with pytest.raises(ControllerFaultError):
            mpc_step(state, 0.8, cfg, model, cell, 20.0, 3.9, memory, capped)

    def test_memory_is_not_mutated(self, cell):
        state = BatteryState(0.8, 0.05, 24.0, 27.0)
        model = synthesis_model(cell, 0.8, 20.0, 20.0, t_core=27.0)
        memory = MpcMemory()
        _, updated = mpc_step(state, 0.8, free_config(), model, cell, 20.0, 3.9, memory)
        assert memory.solves == 0
        assert updated.solves == 1
