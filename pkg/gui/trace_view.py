"""Headless pygame renderer for the four benchmark panels (SoE, voltage, current, core temperature)."""
import argparse
import logging
import os
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

os.environ.setdefault('SDL_VIDEODRIVER', 'dummy')
import pygame  # noqa: E402  (driver must be chosen before import)

from utils.trace_io import PANELS, read_csv  # noqa: E402

logger = logging.getLogger(__name__)

BACKGROUND = (250, 250, 250)
AXIS_COLOR = (60, 60, 60)
GRID_COLOR = (220, 220, 220)
LIMIT_COLOR = (200, 40, 40)
METHOD_COLORS = [
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (148, 103, 189), (140, 86, 75), (227, 119, 194),
]

PANEL_TITLES = {
    'soe': 'SoE [-]',
    'terminal_voltage': 'Terminal voltage [V]',
    'current': 'Current [A]',
    'core_temperature': 'Core temperature [C]',
}

Color = Tuple[int, int, int]


class Panel:
    """One axes box: maps (t, value) data onto a pixel rectangle."""

    def __init__(self, rect: pygame.Rect, title: str, t_range: Tuple[float, float],
                 y_range: Tuple[float, float]):
        self.rect = rect
        self.title = title
        self.t_min, self.t_max = t_range
        self.y_min, self.y_max = y_range
        if self.y_max - self.y_min < 1e-9:
            self.y_min -= 0.5
            self.y_max += 0.5

    def to_pixel(self, t: float, value: float) -> Tuple[int, int]:
        fx = (t - self.t_min) / max(self.t_max - self.t_min, 1e-9)
        fy = (value - self.y_min) / (self.y_max - self.y_min)
        return (int(self.rect.left + fx * self.rect.width), int(self.rect.bottom - fy * self.rect.height))

    def draw_axes(self, screen: pygame.Surface, font: pygame.font.Font):
        for k in range(1, 4):
            y = self.rect.top + k * self.rect.height // 4
            pygame.draw.line(screen, GRID_COLOR, (self.rect.left, y), (self.rect.right, y))
        pygame.draw.rect(screen, AXIS_COLOR, self.rect, 1)
        screen.blit(font.render(self.title, True, AXIS_COLOR), (self.rect.left, self.rect.top - 18))
        for value, y in ((self.y_max, self.rect.top), (self.y_min, self.rect.bottom)):
            label = font.render(f"{value:.3g}", True, AXIS_COLOR)
            screen.blit(label, label.get_rect(midright=(self.rect.left - 4, y)))
        hours = font.render(f"{self.t_max / 3600.0:.2f} h", True, AXIS_COLOR)
        screen.blit(hours, hours.get_rect(topright=(self.rect.right, self.rect.bottom + 4)))

    def draw_series(self, screen: pygame.Surface, t: np.ndarray, values: np.ndarray, color: Color):
        finite = np.isfinite(values)
        points = [self.to_pixel(a, b) for a, b in zip(t[finite], values[finite])]
        if len(points) >= 2:
            pygame.draw.lines(screen, color, False, points, 2)

    def draw_limit(self, screen: pygame.Surface, value: float):
        if self.y_min <= value <= self.y_max:
            left = self.to_pixel(self.t_min, value)
            right = self.to_pixel(self.t_max, value)
            pygame.draw.line(screen, LIMIT_COLOR, left, right, 1)


def load_panels(results_dir: Union[str, Path]) -> Dict[str, pd.DataFrame]:
    """Read every panel_<name>.csv present in a benchmark output directory."""
    frames = {}
    for panel in PANELS:
        path = Path(results_dir) / f"panel_{panel}.csv"
        if path.exists():
            frames[panel] = read_csv(path)
        else:
            logger.warning(f"Missing panel file {path}")
    return frames


def _methods(frames: Dict[str, pd.DataFrame]) -> List[str]:
    seen = []
    for frame in frames.values():
        for method in frame['method'].astype(str):
            if method not in seen:
                seen.append(method)
    return seen


def render_panels(results_dir: Union[str, Path], out_path: Union[str, Path],
                  size: Tuple[int, int] = (1200, 800), t_limit: Optional[float] = None) -> Path:
    """Draw the panels in a 2x2 grid and save them as a PNG.

    Args:
        results_dir: Directory holding the panel CSVs
        out_path: PNG file to write
        size: Image size in pixels
        t_limit: Core-temperature limit drawn as a red line, if given

    Returns:
        Path of the written image
    """
    frames = load_panels(results_dir)
    if not frames:
        raise FileNotFoundError(f"No panel CSVs in {results_dir}")

    pygame.init()
    try:
        screen = pygame.Surface(size)
        screen.fill(BACKGROUND)
        font = pygame.font.Font(None, 20)
        methods = _methods(frames)
        colors = {m: METHOD_COLORS[i % len(METHOD_COLORS)] for i, m in enumerate(methods)}

        width, height = size
        margin_x, margin_top, margin_bottom = 70, 40, 60
        cell_w = (width - margin_x) // 2
        cell_h = (height - margin_bottom) // 2
        for index, panel in enumerate(PANELS):
            frame = frames.get(panel)
            if frame is None or frame.empty:
                continue
            column, row = index % 2, index // 2
            rect = pygame.Rect(margin_x + column * cell_w, margin_top + row * cell_h,
                               cell_w - margin_x, cell_h - margin_top - 20)
            values = frame['value'].to_numpy(dtype=float)
            finite = values[np.isfinite(values)]
            y_range = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
            if panel == 'core_temperature' and t_limit is not None:
                y_range = (y_range[0], max(y_range[1], t_limit))
            t = frame['t_s'].to_numpy(dtype=float)
            axes = Panel(rect, PANEL_TITLES[panel], (0.0, float(np.nanmax(t))), y_range)
            axes.draw_axes(screen, font)
            for method, group in frame.groupby('method', sort=False):
                axes.draw_series(screen, group['t_s'].to_numpy(dtype=float),
                                 group['value'].to_numpy(dtype=float), colors[str(method)])
            if panel == 'core_temperature' and t_limit is not None:
                axes.draw_limit(screen, t_limit)

        x = margin_x
        for method in methods:
            label = font.render(method, True, colors[method])
            pygame.draw.line(screen, colors[method], (x, height - 20), (x + 20, height - 20), 3)
            screen.blit(label, (x + 26, height - 28))
            x += 46 + label.get_width()

        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        pygame.image.save(screen, str(out_path))
    finally:
        pygame.quit()
    logger.info(f"Panels rendered to {out_path}")
    return out_path


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Render benchmark panel CSVs to a PNG")
    parser.add_argument('results_dir')
    parser.add_argument('--out', default=None, help="PNG path (default: <results_dir>/panels.png)")
    parser.add_argument('--t-limit', type=float, default=None, help="Core temperature limit to mark")
    args = parser.parse_args(argv)
    out = args.out or Path(args.results_dir) / 'panels.png'
    render_panels(args.results_dir, out, t_limit=args.t_limit)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
