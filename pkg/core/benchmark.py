"""Benchmark assembly: plant draw, MPC synthesis, parallel closed-loop runs."""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import BENCHMARK_WORKERS
from core.battery_model import make_perturbed_plant
from core.controller_factory import KIND_DP, KIND_MPC, ControllerSpec
from core.data_models import BatteryParams, LinearModel
from core.errors import ConfigurationError
from core.polytope import Polytope
from core.robust_mpc import MpcConfig, build_constraint_set, synthesis_model, synthesize_mpc
from core.settings import ControllerEntry, Settings
from core.simulation import (
    STATUS_COMPLETED, STATUS_FAILED, SimConfig, SimTrace, calibrate_nominal_energy,
    current_profile_library, identify_disturbance_set, run_closed_loop,
)
from utils.formatters import format_duration

logger = logging.getLogger(__name__)

TABLE_COLUMNS = ('Method', 'Discharge time', 'Max. temp.', 'Cons. satis.')
VERDICT_NONE = 'n/a'


def plant_and_model(settings: Settings) -> Tuple[BatteryParams, BatteryParams]:
    """Perturbed plant and design model, both carrying the nominal energy."""
    plant = make_perturbed_plant(settings.design, settings.perturbation, settings.plant_seed)
    if settings.energy_auto:
        energy = calibrate_nominal_energy(plant)
    else:
        energy = settings.design.energy_nominal
    return plant.with_energy(energy), settings.design.with_energy(energy)


@dataclass(frozen=True)
class SynthesisReport:
    """Everything the MPC synthesis produced, for printing and dumping."""

    model: LinearModel
    w_set: Polytope
    constraints: Polytope
    mpc: MpcConfig


def synthesize_from_settings(settings: Settings, plant: BatteryParams, model: BatteryParams,
                             epsilon: Optional[float] = None) -> SynthesisReport:
    """Identify the disturbance box on the plant and synthesize the tube MPC.

    Args:
        settings: Validated configuration
        plant: Perturbed plant used for identification
        model: Design model
        epsilon: Overrides the configured RPI accuracy

    Raises:
        OverTightenedError: The tightened constraint set is empty
        RpiConvergenceError: The tube cross-section did not converge
    """
    mpc_settings = settings.mpc if epsilon is None else replace(settings.mpc, epsilon=epsilon)
    synthesis = settings.synthesis
    profiles = current_profile_library(synthesis.profile_seed, synthesis.profile_count,
                                       synthesis.profile_duration, mpc_settings.dt,
                                       settings.dp.u_max, synthesis.profile_step)
    w_set = identify_disturbance_set(plant, model, profiles, mpc_settings.dt,
                                     mpc_settings.state_scale, synthesis.inflation, synthesis.floor)
    linear = synthesis_model(model, synthesis.soc, synthesis.current, mpc_settings.dt, synthesis.t_core)
    constraints = build_constraint_set(settings.t_constraint, settings.dp.u_max, mpc_settings.state_scale)
    mpc = synthesize_mpc(linear, constraints, w_set, mpc_settings)
    return SynthesisReport(linear, w_set, constraints, mpc)


def controller_spec(entry: ControllerEntry, settings: Settings,
                    synthesis: Optional[SynthesisReport] = None) -> ControllerSpec:
    if entry.kind == KIND_MPC:
        if synthesis is None:
            raise ConfigurationError(f"Controller '{entry.name}' needs the MPC synthesis", line=entry.line,
                                     path=settings.path)
        return ControllerSpec(entry.kind, entry.name, entry.dt, settings.dp.u_max, mpc=synthesis.mpc)
    if entry.kind == KIND_DP:
        return ControllerSpec(entry.kind, entry.name, entry.dt, settings.dp.u_max, dp=settings.dp)
    return ControllerSpec(entry.kind, entry.name, entry.dt, settings.dp.u_max, options=dict(entry.options))


def build_benchmark_configs(settings: Settings, names: Optional[Sequence[str]] = None) -> List[SimConfig]:
    """One SimConfig per configured controller (or per requested name), in file order.

    Raises:
        ConfigurationError: No controllers selected
    """
    entries = [settings.controller(name) for name in names] if names else list(settings.controllers)
    if not entries:
        raise ConfigurationError("No controllers configured", path=settings.path)
    plant, model = plant_and_model(settings)
    synthesis = None
    if any(entry.kind == KIND_MPC for entry in entries):
        synthesis = synthesize_from_settings(settings, plant, model)
    configs = []
    for entry in entries:
        configs.append(SimConfig(
            plant_params=plant,
            model_params=model,
            controller=controller_spec(entry, settings, synthesis),
            kalman=settings.kalman,
            dt_plant=settings.dt_plant,
            t_max_sim=settings.t_max_sim,
            soe_stop=settings.soe_stop,
            noise_seed=settings.noise_seed,
            t_constraint=settings.t_constraint,
            noise=settings.noise,
        ))
    return configs


@dataclass(frozen=True)
class BenchmarkRow:
    method: str
    discharge_time: float
    max_core_temp: float
    constraint_satisfied: bool
    status: str = STATUS_COMPLETED
    failure: Optional[str] = None
    tube_violations: int = 0

    @classmethod
    def from_trace(cls, trace: SimTrace) -> 'BenchmarkRow':
        return cls(trace.name, trace.discharge_time, trace.max_core_temp, trace.constraint_satisfied,
                   trace.status, trace.failure, trace.tube_violations)

    @property
    def verdict(self) -> str:
        """Yes or No for a completed discharge, n/a when the run failed or timed out."""
        if self.status != STATUS_COMPLETED:
            return VERDICT_NONE
        return 'Yes' if self.constraint_satisfied else 'No'


@dataclass
class BenchmarkResult:
    rows: List[BenchmarkRow]
    traces: List[SimTrace]

    @property
    def any_failed(self) -> bool:
        return any(row.status == STATUS_FAILED for row in self.rows)


def _run_captured(cfg: SimConfig) -> SimTrace:
    try:
        return run_closed_loop(cfg)
    except Exception as exc:
        # Faults outside the loop (controller construction) still yield a row
        logger.error(f"{cfg.name}: run aborted: {exc}", exc_info=True)
        return SimTrace(cfg.name, cfg.dt_control, cfg.t_constraint, status=STATUS_FAILED,
                        failure=f"{type(exc).__name__}: {exc}")


def run_benchmark(cfgs: Sequence[SimConfig], workers: int = BENCHMARK_WORKERS) -> BenchmarkResult:
    """Run every configuration; rows come back in configuration order.

    Raises:
        ConfigurationError: Empty configuration list
    """
    if not cfgs:
        raise ConfigurationError("Benchmark needs at least one configuration")
    workers = max(1, min(workers, len(cfgs)))
    logger.info(f"Running {len(cfgs)} simulations on {workers} workers")
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix='benchmark') as pool:
        traces = list(pool.map(_run_captured, cfgs))
    rows = [BenchmarkRow.from_trace(trace) for trace in traces]
    return BenchmarkResult(rows, traces)


def format_table(rows: Sequence[BenchmarkRow]) -> str:
    """Aligned text table in the column layout of the comparison table."""
    body = []
    for row in rows:
        time_text = format_duration(row.discharge_time) if math.isfinite(row.discharge_time) else row.status
        temp_text = f"{row.max_core_temp:.2f} °C" if np.isfinite(row.max_core_temp) else '-'
        body.append((row.method, time_text, temp_text, row.verdict))
    widths = [max([len(title)] + [len(line[i]) for line in body]) for i, title in enumerate(TABLE_COLUMNS)]
    lines = ['  '.join(title.ljust(width) for title, width in zip(TABLE_COLUMNS, widths)).rstrip(),
             '  '.join('-' * width for width in widths)]
    lines += ['  '.join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip() for line in body]
    return '\n'.join(lines)
