"""Tests for YAML configuration loading and validation."""
from pathlib import Path

import pytest

from core.errors import ConfigurationError
from core.settings import load_settings

DEFAULT_CONFIG = Path(__file__).resolve().parents[1] / 'configs' / 'default.yaml'


class TestDefaultConfig:
    def test_loads(self):
        settings = load_settings(DEFAULT_CONFIG)
        assert [c.name for c in settings.controllers] == ['CC-CV', 'CC-CT1', 'CC-CT2', 'DP', 'MPC']
        assert settings.energy_auto
        assert len(settings.config_hash) == 16
        assert settings.controller('DP').dt == 20.0
        assert settings.controller('CC-CV').dt == 1.0
        assert settings.controller('CC-CT2').options['t_ref'] == 35.0
        assert len(settings.dp.soc_grid) == 51

    def test_hash_is_stable(self):
        assert load_settings(DEFAULT_CONFIG).config_hash == load_settings(DEFAULT_CONFIG).config_hash

    def test_seed_override(self):
        settings = load_settings(DEFAULT_CONFIG)
        seeded = settings.with_seed(9)
        assert seeded.noise_seed == 9
        assert seeded.config_hash == settings.config_hash
        assert settings.with_seed(None) is settings


class TestValues:
    def test_numeric_energy(self, write_config):
        settings = load_settings(write_config())
        assert not settings.energy_auto
        assert settings.design.energy_nominal == 4.0e5
        assert settings.t_max_sim == 200.0

    def test_grid_as_list(self, write_config):
        settings = load_settings(write_config("dp:\n  soc_grid: [0.0, 0.5, 1.0]\n"))
        assert settings.dp.soc_grid == (0.0, 0.5, 1.0)

    def test_grid_as_range(self, write_config):
        settings = load_settings(write_config("dp:\n  tc_grid: {start: 20.0, stop: 50.0, num: 4}\n"))
        assert settings.dp.tc_grid == (20.0, 30.0, 40.0, 50.0)

    def test_dp_horizon_in_steps(self, write_config):
        settings = load_settings(write_config("dp:\n  dt: 10.0\n  horizon: 600.0\n"))
        assert settings.dp.horizon_steps == 60

    def test_exponent_floats_without_dot_or_sign(self, write_config):
        settings = load_settings(write_config(
            "dp:\n  weights: [1.0e5, 1e-5, 10, 1.0e-5]\nmpc:\n  lqr_state_weight: [1e6, 1, 1, 100]\n"))
        assert settings.dp.w1 == 1.0e5
        assert settings.dp.w2 == settings.dp.w4 == 1.0e-5
        assert settings.mpc.state_weight[0] == 1.0e6

    def test_unknown_controller_name(self, write_config):
        settings = load_settings(write_config())
        with pytest.raises(ConfigurationError):
            settings.controller('nope')


class TestErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError) as info:
            load_settings(tmp_path / 'absent.yaml')
        assert 'absent.yaml' in str(info.value)

    def test_unknown_key_names_its_line(self, write_config):
        with pytest.raises(ConfigurationError) as info:
            load_settings(write_config("battery:\n  r0: 0.005\n  bogus: 1\n"))
        assert info.value.line == 3
        assert 'bogus' in str(info.value)

    def test_unknown_section(self, write_config):
        with pytest.raises(ConfigurationError) as info:
            load_settings(write_config("plant:\n  seed: 1\nextras:\n  a: 1\n"))
        assert info.value.line == 3

    def test_wrong_type_names_its_line(self, write_config):
        with pytest.raises(ConfigurationError) as info:
            load_settings(write_config("battery:\n  r0: fast\n"))
        assert info.value.line == 2

    def test_duplicate_key(self, write_config):
        with pytest.raises(ConfigurationError) as info:
            load_settings(write_config("plant:\n  seed: 1\n  seed: 2\n"))
        assert info.value.line == 3

    def test_yaml_syntax_error(self, write_config):
        with pytest.raises(ConfigurationError) as info:
            load_settings(write_config("battery:\n  r0: [1, 2\n"))
        assert info.value.line is not None

    def test_negative_resistance(self, write_config):
        with pytest.raises(ConfigurationError):
            load_settings(write_config("battery:\n  r1: -0.1\n"))

    def test_perturbation_out_of_range(self, write_config):
        with pytest.raises(ConfigurationError):
            load_settings(write_config("plant:\n  perturbation: 0.9\n"))

    def test_unknown_perturbation_field(self, write_config):
        with pytest.raises(ConfigurationError):
            load_settings(write_config("plant:\n  perturbation: {resistance: 0.1}\n"))

    def test_grid_controllers_take_their_section_dt(self, write_config):
        text = "controllers:\n  - name: DP\n    kind: dp\n    dt: 5.0\n"
        with pytest.raises(ConfigurationError) as info:
            load_settings(write_config(text))
        assert info.value.line == 4

    def test_unknown_controller_kind(self, write_config):
        with pytest.raises(ConfigurationError):
            load_settings(write_config("controllers:\n  - name: X\n    kind: pid\n"))

    def test_duplicate_controller_name(self, write_config):
        text = ("controllers:\n"
                "  - name: A\n    kind: cc_cv\n"
                "  - name: A\n    kind: cc_ct\n")
        with pytest.raises(ConfigurationError):
            load_settings(write_config(text))

    def test_pi_option_on_wrong_scheme(self, write_config):
        with pytest.raises(ConfigurationError):
            load_settings(write_config("controllers:\n  - name: A\n    kind: cc_cv\n    t_ref: 40.0\n"))
