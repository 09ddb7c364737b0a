"""Shared fixtures."""
from dataclasses import replace

import numpy as np
import pytest

from core.data_models import BatteryParams, BatteryState
from core.estimation import KalmanConfig

# Fixed nominal energy (J) so unit tests skip the reference discharge
TEST_ENERGY = 4.0e5


@pytest.fixture
def cell() -> BatteryParams:
    """Shipped 40 Ah design cell with a fixed nominal energy."""
    return BatteryParams.default().with_energy(TEST_ENERGY)


@pytest.fixture
def small_cell() -> BatteryParams:
    """1 Ah cell: 45 A over 20 s moves SoC by exactly 0.25."""
    return replace(BatteryParams.default(), capacity_nominal=1.0, energy_nominal=6600.0)


@pytest.fixture
def full_state(cell) -> BatteryState:
    return BatteryState.fully_charged(cell.t_ambient)


@pytest.fixture
def kalman() -> KalmanConfig:
    return KalmanConfig.from_diagonals((1e-10, 1e-6, 1e-4, 1e-4), (1e-2, 1e-4), (1e-2, 1e-4, 1.0, 1.0))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


QUICK_CONFIG = """\
battery:
  energy_nominal: 400000.0
simulation:
  t_max_sim: 200.0
controllers:
  - name: CT
    kind: cc_ct
    dt: 10.0
"""


@pytest.fixture
def write_config(tmp_path):
    """Write YAML text to a file in the test's temporary directory."""
    def _write(text: str = QUICK_CONFIG, name: str = 'run.yaml'):
        path = tmp_path / name
        path.write_text(text, encoding='utf-8')
        return path
    return _write


@pytest.fixture
def make_trace():
    """Three-row trace with a rising core temperature."""
    from core.simulation import SimTrace

    def _make(name: str) -> SimTrace:
        trace = SimTrace(name, 1.0, 40.0)
        for k in range(3):
            trace.rows.append({'t': float(k), 'i_applied': 40.0, 'v_terminal': 4.0, 'soc_true': 1.0,
                               'soe': 1.0 - 0.01 * k, 't_s': 20.0, 't_c_true': 20.0 + k, 't_c_est': 20.0,
                               'diagnostics': {'phase': 'CC'}})
        trace.final_state = BatteryState.fully_charged(20.0)
        return trace
    return _make
