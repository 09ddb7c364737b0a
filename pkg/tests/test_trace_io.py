"""Tests for audited CSV output."""
import math

import pandas as pd
import pytest

from core.benchmark import BenchmarkRow
from core.simulation import SimTrace
from utils.trace_io import (
    PANELS, header_lines, read_csv, read_header, safe_name, summary_frame, write_csv, write_panels,
    write_trace,
)


class TestCsv:
    def test_header_round_trip(self, tmp_path):
        header = header_lines('abc123', 7, {'s_steps': 11})
        path = write_csv(pd.DataFrame({'x': [1.0, 2.0]}), tmp_path / 'sub' / 'data.csv', header)
        values = read_header(path)
        assert values['config_hash'] == 'abc123'
        assert values['seed'] == '7'
        assert values['s_steps'] == '11'
        assert list(read_csv(path)['x']) == [1.0, 2.0]

    def test_safe_name(self):
        assert safe_name('CC-CT 1/2') == 'CC-CT_1_2'


class TestTraceFiles:
    def test_trace_columns(self, tmp_path, make_trace):
        path = write_trace(make_trace('CC-CV'), tmp_path, header_lines('h', 0))
        assert path.name == 'trace_CC-CV.csv'
        assert read_header(path)['method'] == 'CC-CV'
        frame = read_csv(path)
        assert list(frame['t_c_true']) == [20.0, 21.0, 22.0]
        assert frame['diagnostics'][0] == '{"phase": "CC"}'

    def test_panels_are_long_format(self, tmp_path, make_trace):
        written = write_panels([make_trace('A'), make_trace('B')], tmp_path, header_lines('h', 0))
        assert set(written) == set(PANELS)
        frame = read_csv(written['current'])
        assert list(frame.columns) == ['method', 't_s', 'value']
        assert list(frame['method']) == ['A'] * 3 + ['B'] * 3

    @pytest.mark.filterwarnings('error::FutureWarning')
    def test_panels_skip_runs_without_rows(self, tmp_path, make_trace):
        failed = SimTrace('F', 1.0, 40.0, status='failed', failure='boom')
        written = write_panels([failed, make_trace('A')], tmp_path, header_lines('h', 0))
        assert list(read_csv(written['soe'])['method']) == ['A'] * 3
        only_failed = write_panels([failed], tmp_path / 'empty', header_lines('h', 0))
        assert read_csv(only_failed['soe']).empty

    def test_summary_frame(self):
        frame = summary_frame([BenchmarkRow('MPC', 11160.0, 38.7, True)])
        assert frame.loc[0, 'constraint_satisfied'] == 'Yes'
        assert frame.loc[0, 'status'] == 'completed'

    def test_unfinished_runs_have_no_verdict(self):
        frame = summary_frame([BenchmarkRow('MPC', math.nan, 25.0, False, status='failed', failure='boom'),
                               BenchmarkRow('idle', math.nan, 20.0, False, status='timeout')])
        assert list(frame['constraint_satisfied']) == ['n/a', 'n/a']
