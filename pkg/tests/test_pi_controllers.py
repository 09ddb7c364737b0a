"""Tests for the CC-CV and CC-CT discharge schemes."""
import pytest

from core.controller_base import Observation, ZeroController, saturate
from core.data_models import BatteryState
from core.errors import ConfigurationError
from core.pi_controllers import (
    PHASE_CC, PHASE_CT, PHASE_CV, CcCtController, CcCvController, PhaseState, PiConfig,
    cc_ct_step, cc_cv_step, pi_update,
)


def observe(v_meas=4.0, t_c=20.0, t=0.0, u_prev=0.0) -> Observation:
    return Observation(t, v_meas, 20.0, BatteryState(0.8, 0.0, 20.0, t_c), 0.9, u_prev, 1.0)


class TestPiUpdate:
    def test_proportional_plus_integral(self):
        cfg = PiConfig(kp=2.0, ki=0.5, setpoint=0.0, output_limits=(0.0, 100.0))
        output, state = pi_update(PhaseState(PHASE_CV, 10.0), 1.0, cfg, dt=2.0)
        assert output == pytest.approx(12.0)
        assert state.integral == pytest.approx(11.0)

    def test_anti_windup_freezes_integrator(self):
        cfg = PiConfig(kp=2.0, ki=0.5, setpoint=0.0, output_limits=(0.0, 40.0))
        output, state = pi_update(PhaseState(PHASE_CV, 39.0), 5.0, cfg, dt=1.0)
        assert output == 40.0
        assert state.integral == 39.0

    def test_limits_out_of_order(self):
        with pytest.raises(ConfigurationError):
            PiConfig(1.0, 1.0, 0.0, output_limits=(10.0, 0.0))


class TestCcCv:
    cfg = PiConfig(50.0, 10.0, 3.45, (0.0, 40.0))

    def test_constant_current_above_cutoff(self):
        command, phase = cc_cv_step(PhaseState(), 3.9, self.cfg, 40.0, 3.45, 1.0)
        assert command.current == 40.0
        assert phase.phase == PHASE_CC

    def test_bumpless_switch_at_cutoff(self):
        command, phase = cc_cv_step(PhaseState(), 3.45, self.cfg, 40.0, 3.45, 1.0)
        assert phase.phase == PHASE_CV
        assert command.current == pytest.approx(40.0)

    def test_sagging_voltage_reduces_current(self):
        command, _ = cc_cv_step(PhaseState(PHASE_CV, 40.0), 3.40, self.cfg, 40.0, 3.45, 1.0)
        assert command.current == pytest.approx(40.0 + 50.0 * (3.40 - 3.45))

    def test_controller_latches_cv_phase(self):
        controller = CcCvController(dt=1.0)
        controller.step(observe(v_meas=3.40))
        command = controller.step(observe(v_meas=3.60))
        assert command.diagnostics['phase'] == PHASE_CV
        controller.reset()
        assert controller.step(observe(v_meas=3.60)).diagnostics['phase'] == PHASE_CC


class TestCcCt:
    cfg = PiConfig(60.0, 0.0061, 40.0, (0.0, 40.0))

    def test_switches_on_estimated_core_temperature(self):
        command, phase = cc_ct_step(PhaseState(), 39.9, self.cfg, 40.0, 40.0, 1.0)
        assert phase.phase == PHASE_CC
        command, phase = cc_ct_step(phase, 40.5, self.cfg, 40.0, 40.0, 1.0)
        assert phase.phase == PHASE_CT
        assert command.current == pytest.approx(40.0 + 60.0 * (40.0 - 40.5))

    def test_controller_reads_estimate(self):
        controller = CcCtController(dt=1.0, t_ref=35.0)
        assert controller.step(observe(t_c=30.0)).current == 40.0
        assert controller.step(observe(t_c=36.0)).diagnostics['phase'] == PHASE_CT


class TestSaturation:
    def test_saturate(self):
        assert saturate(-3.0, 40.0) == 0.0
        assert saturate(55.0, 40.0) == 40.0

    def test_step_marks_saturated_commands(self):
        controller = CcCvController(dt=1.0, u_max=30.0, cc_current=40.0)
        command = controller.step(observe(v_meas=4.0))
        assert command.current == 30.0
        assert command.diagnostics['saturated'] is True

    def test_zero_controller(self):
        command = ZeroController('idle', 1.0, 40.0).step(observe())
        assert command.current == 0.0
