"""Command-line entry point: simulate, benchmark, synthesize."""
import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from config import DEFAULT_CONFIG_PATH, DEFAULT_OUTPUT_DIR, TOOL_NAME, TOOL_VERSION
from core.benchmark import (
    BenchmarkRow, build_benchmark_configs, format_table, plant_and_model, run_benchmark,
    synthesize_from_settings,
)
from core.controller_factory import KIND_MPC
from core.errors import ConfigurationError, DischargeError, OverTightenedError
from core.polytope import bounding_box
from core.robust_mpc import CONSTRAINT_LABELS
from core.settings import Settings, load_settings
from core.simulation import STATUS_FAILED, run_closed_loop
from utils.formatters import format_duration, format_vector
from utils.logger import setup_logging
from utils.trace_io import header_lines, summary_frame, write_csv, write_panels, write_trace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


@dataclass(frozen=True)
class RunManifest:
    """What the user asked for on the command line."""

    command: str
    config: Path
    out: Path
    seed: Optional[int] = None
    quiet: bool = False
    epsilon: Optional[float] = None
    controller: Optional[str] = None


def _load(manifest: RunManifest) -> Settings:
    return load_settings(manifest.config).with_seed(manifest.seed)


def _summary_line(row: BenchmarkRow) -> str:
    time_text = format_duration(row.discharge_time) if np.isfinite(row.discharge_time) else row.status
    return f"{row.method}: {time_text}, {row.max_core_temp:.2f} °C, {row.verdict}"


def cmd_simulate(manifest: RunManifest) -> int:
    """Run one controller and write its trace."""
    settings = _load(manifest)
    if manifest.controller is not None:
        name = settings.controller(manifest.controller).name
    elif len(settings.controllers) == 1:
        name = settings.controllers[0].name
    else:
        raise ConfigurationError(
            f"simulate needs exactly one controller; pass --controller "
            f"({', '.join(e.name for e in settings.controllers) or 'none configured'})", path=settings.path)

    cfg = build_benchmark_configs(settings, [name])[0]
    trace = run_closed_loop(cfg)
    header = header_lines(settings.config_hash, settings.noise_seed)
    path = write_trace(trace, manifest.out, header)
    write_panels([trace], manifest.out, header)
    logger.info(f"Trace written to {path}")
    print(_summary_line(BenchmarkRow.from_trace(trace)))
    if trace.status == STATUS_FAILED:
        print(f"Run failed: {trace.failure}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_benchmark(manifest: RunManifest) -> int:
    """Run every configured controller and write the comparison table."""
    settings = _load(manifest)
    if not settings.controllers:
        raise ConfigurationError("benchmark needs at least one controller section", path=settings.path)
    configs = build_benchmark_configs(settings)
    result = run_benchmark(configs, settings.workers)

    header = header_lines(settings.config_hash, settings.noise_seed)
    write_csv(summary_frame(result.rows), manifest.out / 'summary.csv', header)
    table = format_table(result.rows)
    (manifest.out / 'summary.txt').write_text(
        ''.join(f"# {line}\n" for line in header) + table + '\n', encoding='utf-8')
    for trace in result.traces:
        write_trace(trace, manifest.out, header)
    write_panels(result.traces, manifest.out, header)

    print(table)
    for row in result.rows:
        if row.status == STATUS_FAILED:
            print(f"{row.method} failed: {row.failure}", file=sys.stderr)
    logger.info(f"Benchmark results written to {manifest.out}")
    return EXIT_FAILURE if result.any_failed else EXIT_OK


def cmd_synthesize(manifest: RunManifest) -> int:
    """Identify the disturbance set, synthesize the tube MPC and dump its sets."""
    settings = _load(manifest)
    if not any(entry.kind == KIND_MPC for entry in settings.controllers):
        raise ConfigurationError("synthesize needs an mpc controller section", path=settings.path)
    plant, model = plant_and_model(settings)
    try:
        report = synthesize_from_settings(settings, plant, model, manifest.epsilon)
    except OverTightenedError as exc:
        labels = [CONSTRAINT_LABELS[i] if i < len(CONSTRAINT_LABELS) else f"row {i}" for i in exc.rows]
        print(f"Over-tightened: constraint rows {list(exc.rows)} ({', '.join(labels)}) are empty "
              f"after tightening", file=sys.stderr)
        return EXIT_FAILURE

    mpc = report.mpc
    scale = mpc.state_scale
    lower, upper = bounding_box(mpc.rpi.set)
    header = header_lines(settings.config_hash, settings.noise_seed,
                          {'s_steps': mpc.rpi.s_steps, 'alpha': f"{mpc.rpi.alpha:.6g}",
                           'epsilon': f"{mpc.rpi.epsilon:.6g}"})

    print(f"Feedback gain K (scaled states): {format_vector(mpc.k_gain[0], 6)}")
    print(f"RPI set: s = {mpc.rpi.s_steps}, alpha = {mpc.rpi.alpha:.3e}, "
          f"achieved epsilon = {mpc.rpi.epsilon:.3e}, {mpc.rpi.set.n_rows} facets")
    print("Tube extents per state (physical units):")
    for name, low, high in zip(('SoC', 'V1 [V]', 'Ts [C]', 'Tc [C]'), lower * scale, upper * scale):
        print(f"  {name:8s} [{low: .6g}, {high: .6g}]")
    print("Tightening margins:")
    for label, margin, row_scale in zip(CONSTRAINT_LABELS, mpc.margins, (scale[3], scale[0], 1.0, 1.0)):
        print(f"  {label:14s} {margin * row_scale:.6g}")
    input_low, input_high = mpc.input_bounds
    print(f"Nominal input range: [{input_low:.4f}, {input_high:.4f}] A")

    out = manifest.out
    write_csv(report.w_set.to_csv_rows(), out / 'disturbance_set.csv', header)
    write_csv(mpc.rpi.set.to_csv_rows(), out / 'rpi_set.csv', header)
    write_csv(mpc.constraints.to_csv_rows(), out / 'constraint_set.csv', header)
    write_csv(mpc.tightened.to_csv_rows(), out / 'tightened_set.csv', header)
    logger.info(f"Synthesis sets written to {out}")
    return EXIT_OK


COMMANDS = {
    'simulate': cmd_simulate,
    'benchmark': cmd_benchmark,
    'synthesize': cmd_synthesize,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=TOOL_NAME, description="Safe battery discharge studies")
    parser.add_argument('--version', action='version', version=f"{TOOL_NAME} {TOOL_VERSION}")
    subparsers = parser.add_subparsers(dest='command', required=True)
    for name, handler in COMMANDS.items():
        sub = subparsers.add_parser(name, help=handler.__doc__)
        sub.add_argument('--config', default=DEFAULT_CONFIG_PATH, help="YAML configuration file")
        sub.add_argument('--out', default=DEFAULT_OUTPUT_DIR, help="Output directory")
        sub.add_argument('--seed', type=int, default=None, help="Override the noise seed")
        sub.add_argument('--quiet', action='store_true', help="Only log warnings and errors")
        if name == 'simulate':
            sub.add_argument('--controller', default=None, help="Controller name from the config")
        if name == 'synthesize':
            sub.add_argument('--epsilon', type=float, default=None, help="RPI accuracy override")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG

    setup_logging(log_to_file=False, log_to_console=True, level='WARNING' if args.quiet else None)
    manifest = RunManifest(
        command=args.command,
        config=Path(args.config),
        out=Path(args.out),
        seed=args.seed,
        quiet=args.quiet,
        epsilon=getattr(args, 'epsilon', None),
        controller=getattr(args, 'controller', None),
    )
    if manifest.epsilon is not None and not manifest.epsilon > 0.0:
        print("Configuration error: --epsilon must be positive", file=sys.stderr)
        return EXIT_CONFIG

    try:
        manifest.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[manifest.command](manifest)
    except ConfigurationError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DischargeError as e:
        logger.error(f"{manifest.command} failed: {e}", exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as e:
        print(f"Error: cannot write output: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
