"""Tests for the electrothermal cell model."""
import math
from dataclasses import replace

import numpy as np
import pytest

from core.battery_model import (
    continuous_jacobians, integrate, integrate_step, linearize, make_perturbed_plant,
    ocv_interpolate, ocv_slope, soe_step, state_derivative, terminal_voltage,
)
from core.data_models import BatteryParams, BatteryState, EnergyAccount
from core.errors import ConfigurationError, InvalidArgumentError


def reference_derivative(x, current, p):
    """Governing equations written out term by term."""
    soc, v1, t_s, t_c = x
    return np.array([
        -current / (3600.0 * p.capacity_nominal),
        -v1 / (p.r1 * p.c1) + current / p.c1,
        (p.t_ambient - t_s) / (p.r_u * p.c_s) - (t_s - t_c) / (p.r_c * p.c_s),
        (t_s - t_c) / (p.r_c * p.c_c) + current * (v1 + p.r0 * current) / p.c_c,
    ])


class TestBatteryParams:
    def test_default_cell_is_valid(self):
        params = BatteryParams.default()
        assert params.capacity_nominal == 40.0
        assert params.energy_nominal == 0.0

    def test_rejects_nonpositive_resistance(self, cell):
        with pytest.raises(ConfigurationError):
            replace(cell, r0=0.0)

    def test_rejects_non_monotone_ocv(self, cell):
        with pytest.raises(ConfigurationError):
            replace(cell, ocv_curve=((0.0, 3.0), (0.5, 3.9), (1.0, 3.8)))

    def test_rejects_eta_out_of_range(self, cell):
        with pytest.raises(ConfigurationError):
            replace(cell, eta=0.0)
        with pytest.raises(ConfigurationError):
            replace(cell, eta=1.2)

    def test_state_clamps_soc_slack(self):
        assert BatteryState(1.5, 0.0, 20.0, 20.0).soc == pytest.approx(1.01)
        assert BatteryState(-0.3, 0.0, 20.0, 20.0).soc == pytest.approx(-0.01)

    def test_state_rejects_nan(self):
        with pytest.raises(InvalidArgumentError):
            BatteryState(0.5, float('nan'), 20.0, 20.0)


class TestStateDerivative:
    def test_equilibrium_at_rest(self, cell, full_state):
        assert np.allclose(state_derivative(full_state, 0.0, cell), 0.0)

    def test_soc_rate_at_40_amps(self, cell, full_state):
        derivative = state_derivative(full_state, 40.0, cell)
        assert derivative[0] == pytest.approx(-40.0 / (3600.0 * 40.0), rel=1e-12)
        assert derivative[0] == pytest.approx(-2.7778e-4, rel=1e-4)

    def test_matches_hand_coded_equations(self, cell, rng):
        for _ in range(5):
            x = np.array([rng.uniform(0, 1), rng.uniform(0, 0.2), rng.uniform(15, 50), rng.uniform(15, 60)])
            current = rng.uniform(0, 60)
            derivative = state_derivative(BatteryState.from_array(x), current, cell)
            assert np.allclose(derivative, reference_derivative(x, current, cell), rtol=1e-12, atol=1e-15)

    def test_rejects_non_finite_current(self, cell, full_state):
        with pytest.raises(InvalidArgumentError):
            state_derivative(full_state, float('inf'), cell)


class TestTerminalVoltage:
    def test_open_circuit(self, cell):
        state = BatteryState(0.55, 0.0, 20.0, 20.0)
        assert terminal_voltage(state, 0.0, cell) == pytest.approx(ocv_interpolate(0.55, cell.ocv_curve))

    def test_breakpoint_is_exact(self, cell):
        assert ocv_interpolate(0.3, cell.ocv_curve) == pytest.approx(3.62, abs=1e-12)

    def test_mid_breakpoint_interpolation(self, cell):
        # halfway between (0.4, 3.67) and (0.5, 3.72)
        assert ocv_interpolate(0.45, cell.ocv_curve) == pytest.approx(3.695, abs=1e-12)

    def test_clamped_outside_table(self, cell):
        assert ocv_interpolate(1.2, cell.ocv_curve) == pytest.approx(4.20)
        assert ocv_interpolate(-0.1, cell.ocv_curve) == pytest.approx(3.00)

    def test_discharge_sags_voltage(self, cell):
        state = BatteryState(0.5, 0.1, 20.0, 20.0)
        expected = 3.72 - 0.1 - cell.r0 * 40.0
        assert terminal_voltage(state, 40.0, cell) == pytest.approx(expected, abs=1e-12)

    def test_slope_of_segment(self, cell):
        assert ocv_slope(0.45, cell.ocv_curve) == pytest.approx(0.5, rel=1e-9)
        assert ocv_slope(1.5, cell.ocv_curve) == 0.0


class TestIntegration:
    def test_rest_stays_at_equilibrium(self, cell, full_state):
        following = integrate(full_state, 0.0, 600.0, cell)
        assert np.allclose(following.as_array(), full_state.as_array())

    def test_soc_drop_is_exact(self, cell, full_state):
        following = integrate(full_state, 40.0, 900.0, cell)
        assert following.soc == pytest.approx(0.75, abs=1e-10)

    def test_one_c_for_an_hour_empties_the_cell(self, cell, full_state):
        following = integrate(full_state, 40.0, 3600.0, cell)
        assert following.soc == pytest.approx(0.0, abs=1e-10)

    @pytest.mark.parametrize('t_s, t_c', [(45.0, 50.0), (50.0, 30.0), (5.0, 12.0)])
    @pytest.mark.parametrize('dt', [1.0, 20.0])
    def test_thermal_passivity_at_rest(self, cell, t_s, t_c, dt):
        state = BatteryState(0.5, 0.0, t_s, t_c)
        gap = max(abs(t_s - cell.t_ambient), abs(t_c - cell.t_ambient))
        for _ in range(int(1200.0 / dt)):
            state = integrate_step(state, 0.0, dt, cell)
            following = max(abs(state.t_s - cell.t_ambient), abs(state.t_c - cell.t_ambient))
            assert following <= gap + 1e-12
            gap = following
        assert gap < 0.5 * max(abs(t_s - cell.t_ambient), abs(t_c - cell.t_ambient))

    def test_rk4_is_fourth_order(self, cell):
        start = BatteryState(0.8, 0.0, 25.0, 30.0)
        reference = integrate(start, 40.0, 40.0, cell, max_step=0.025).as_array()
        steps = np.array([4.0, 2.0, 1.0, 0.5, 0.25])
        errors = [np.max(np.abs(integrate(start, 40.0, 40.0, cell, max_step=h).as_array() - reference))
                  for h in steps]
        slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
        assert slope >= 3.5

    def test_polarization_voltage_matches_closed_form(self, cell, full_state):
        t = 30.0
        following = integrate(full_state, 40.0, t, cell)
        tau = cell.r1 * cell.c1
        expected = cell.r1 * 40.0 * (1.0 - math.exp(-t / tau))
        assert following.v1 == pytest.approx(expected, abs=1e-9)

    def test_single_step_clamps_soc(self, cell):
        almost_empty = BatteryState(1e-4, 0.0, 20.0, 20.0)
        following = integrate_step(almost_empty, 40.0, 60.0, cell)
        assert following.soc == 0.0

    def test_rejects_nonpositive_duration(self, cell, full_state):
        with pytest.raises(InvalidArgumentError):
            integrate(full_state, 10.0, 0.0, cell)


class TestLinearization:
    def test_shapes(self, cell, full_state):
        model = linearize(full_state, 20.0, 20.0, cell)
        assert model.a_matrix.shape == (4, 4)
        assert model.b_matrix.shape == (4, 1)
        assert model.c_vector.shape == (4,)

    def test_reproduces_step_at_operating_point(self, cell):
        state = BatteryState(0.6, 0.04, 27.0, 31.0)
        model = linearize(state, 25.0, 20.0, cell)
        exact = integrate(state, 25.0, 20.0, cell).as_array()
        assert np.allclose(model.x_next_op, exact, rtol=0.0, atol=1e-8)

    def test_exact_at_fixed_current(self, cell):
        # With the current held, the dynamics are affine in the state
        state = BatteryState(0.6, 0.04, 27.0, 31.0)
        model = linearize(state, 25.0, 20.0, cell)
        other = BatteryState(0.5, 0.02, 30.0, 35.0)
        exact = integrate(other, 25.0, 20.0, cell).as_array()
        assert np.allclose(model.predict(other.as_array(), 25.0), exact, rtol=0.0, atol=1e-8)

    def test_euler_discretization(self, cell, full_state):
        a_c, b_c = continuous_jacobians(full_state, 10.0, cell)
        model = linearize(full_state, 10.0, 2.0, cell, method='euler')
        assert np.allclose(model.a_matrix, np.eye(4) + 2.0 * a_c)
        assert np.allclose(model.b_matrix, 2.0 * b_c)

    def test_unknown_method(self, cell, full_state):
        with pytest.raises(ConfigurationError):
            linearize(full_state, 10.0, 2.0, cell, method='tustin')


def random_operating_points(rng, count=20):
    for _ in range(count):
        state = BatteryState(rng.uniform(0.2, 0.9), rng.uniform(0.0, 0.1),
                             rng.uniform(15.0, 50.0), rng.uniform(15.0, 55.0))
        yield state, rng.uniform(0.0, 40.0)


class TestJacobians:
    def test_continuous_against_central_differences(self, cell, rng):
        for state, current in random_operating_points(rng):
            a_c, b_c = continuous_jacobians(state, current, cell)
            x = state.as_array()
            fd_a = np.zeros((4, 4))
            for j in range(4):
                h = 1e-5 * max(1.0, abs(x[j]))
                step = np.zeros(4)
                step[j] = h
                fd_a[:, j] = (reference_derivative(x + step, current, cell)
                              - reference_derivative(x - step, current, cell)) / (2.0 * h)
            h = 1e-5 * max(1.0, current)
            fd_b = (reference_derivative(x, current + h, cell)
                    - reference_derivative(x, current - h, cell)) / (2.0 * h)
            np.testing.assert_allclose(a_c, fd_a, rtol=1e-6, atol=1e-12)
            np.testing.assert_allclose(b_c[:, 0], fd_b, rtol=1e-6, atol=1e-12)

    def test_discrete_state_matrix_against_the_integrator(self, cell, rng):
        for state, current in random_operating_points(rng):
            model = linearize(state, current, 20.0, cell)
            x = state.as_array()
            fd_a = np.zeros((4, 4))
            for j in range(4):
                step = np.zeros(4)
                step[j] = 1e-3
                plus = integrate(BatteryState.from_array(x + step), current, 20.0, cell).as_array()
                minus = integrate(BatteryState.from_array(x - step), current, 20.0, cell).as_array()
                fd_a[:, j] = (plus - minus) / 2e-3
            np.testing.assert_allclose(model.a_matrix, fd_a, rtol=1e-6, atol=1e-9)

    def test_discrete_input_matrix_at_settled_polarization(self, cell, rng):
        for _, current in random_operating_points(rng, count=5):
            state = BatteryState(0.6, cell.r1 * current, 30.0, 35.0)
            model = linearize(state, current, 20.0, cell)
            plus = integrate(state, current + 1e-3, 20.0, cell).as_array()
            minus = integrate(state, current - 1e-3, 20.0, cell).as_array()
            np.testing.assert_allclose(model.b_vector, (plus - minus) / 2e-3, rtol=1e-6, atol=1e-9)

    def test_linearization_error_is_second_order(self, cell):
        current = 25.0
        state = BatteryState(0.6, cell.r1 * current, 30.0, 35.0)
        model = linearize(state, current, 20.0, cell)
        direction = np.array([0.0, 0.01, 1.0, 1.0])
        sizes = np.array([4.0, 2.0, 1.0, 0.5])
        errors = []
        for eps in sizes:
            x = state.as_array() + eps * direction
            exact = integrate(BatteryState.from_array(x), current + eps, 20.0, cell).as_array()
            errors.append(np.max(np.abs(model.predict(x, current + eps) - exact)))
        slope = np.polyfit(np.log(sizes), np.log(errors), 1)[0]
        assert slope == pytest.approx(2.0, abs=0.1)


class TestEnergyAccounting:
    def test_extracted_energy_and_soe(self, cell):
        account = soe_step(EnergyAccount.full(), 3.7, 40.0, 20.0, cell)
        assert account.extracted == pytest.approx(3.7 * 40.0 * 20.0)
        assert account.soe == pytest.approx(1.0 - account.extracted / cell.energy_nominal, abs=1e-12)

    def test_efficiency_weights_the_drop(self, cell):
        lossy = replace(cell, eta=0.9)
        account = soe_step(EnergyAccount.full(), 3.7, 40.0, 20.0, lossy)
        assert 1.0 - account.soe == pytest.approx(0.9 * account.extracted / cell.energy_nominal)

    def test_requires_nominal_energy(self):
        with pytest.raises(ConfigurationError):
            soe_step(EnergyAccount.full(), 3.7, 40.0, 20.0, BatteryParams.default())


class TestPerturbedPlant:
    def test_zero_perturbation_is_identity(self, cell):
        assert make_perturbed_plant(cell, 0.0, seed=3) == cell

    def test_deterministic_per_seed(self, cell):
        assert make_perturbed_plant(cell, 0.05, 3) == make_perturbed_plant(cell, 0.05, 3)
        assert make_perturbed_plant(cell, 0.05, 3) != make_perturbed_plant(cell, 0.05, 4)

    def test_fields_within_bounds(self, cell):
        plant = make_perturbed_plant(cell, 0.1, seed=11)
        for name in ('capacity_nominal', 'r0', 'r1', 'c1', 'r_u', 'r_c', 'c_s', 'c_c'):
            ratio = getattr(plant, name) / getattr(cell, name)
            assert 0.9 - 1e-12 <= ratio <= 1.1 + 1e-12
        offsets = plant.ocv_voltage - cell.ocv_voltage
        assert np.all(np.abs(offsets) <= 0.1 * 0.1 + 1e-12)

    def test_per_field_mapping(self, cell):
        plant = make_perturbed_plant(cell, {'r0': 0.2}, seed=5)
        assert plant.r1 == cell.r1
        assert plant.ocv_curve == cell.ocv_curve
        assert plant.r0 != cell.r0

    def test_rejects_bad_perturbation(self, cell):
        with pytest.raises(ConfigurationError):
            make_perturbed_plant(cell, 0.7, seed=1)
        with pytest.raises(ConfigurationError):
            make_perturbed_plant(cell, {'mass': 0.1}, seed=1)
