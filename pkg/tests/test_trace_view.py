"""Tests for the headless panel renderer."""
import pytest

pygame = pytest.importorskip('pygame')

from gui.trace_view import Panel, load_panels, render_panels  # noqa: E402
from utils.trace_io import header_lines, write_panels  # noqa: E402


def test_renders_png(tmp_path, make_trace):
    write_panels([make_trace('A'), make_trace('B')], tmp_path, header_lines('h', 0))
    assert set(load_panels(tmp_path)) == {'soe', 'terminal_voltage', 'current', 'core_temperature'}
    out = render_panels(tmp_path, tmp_path / 'panels.png', size=(600, 400), t_limit=40.0)
    assert out.read_bytes()[:8] == b'\x89PNG\r\n\x1a\n'


def test_missing_panels(tmp_path):
    with pytest.raises(FileNotFoundError):
        render_panels(tmp_path, tmp_path / 'panels.png')


def test_pixel_mapping():
    axes = Panel(pygame.Rect(0, 0, 100, 50), 'x', (0.0, 10.0), (0.0, 1.0))
    assert axes.to_pixel(0.0, 0.0) == (0, 50)
    assert axes.to_pixel(10.0, 1.0) == (100, 0)
