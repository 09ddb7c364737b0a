"""Offline dynamic programming for minimum-time discharge under Tc <= T_max.

The grid model is reduced to (SoC, Tc): V1 sits at its quasi-static value
R1*I and the surface temperature is frozen at its value when the plan is
made. SoE along the grid is a function of SoC through the worst-case-sag
energy map, so "discharged" is a region of the SoC axis.

Cost structure per trajectory:
  finishes at step N_f (first SoE < 0):  w3*N_f + w4*sum(u)
  unfinished after the horizon N:        w3*N + w1*|SoE(N)| + w2*sum(u)
The recursion charges w3 + w4*u per undone step and w1*|SoE| at the horizon.
Every step is priced at w3 on both branches, so a plan that finishes inside
the horizon always ranks ahead of one that does not. The current penalty is
shared, hence w2 must equal w4.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from config import DP_HORIZON, DP_WEIGHTS, T_MAX, U_MAX
from core.battery_model import SECONDS_PER_HOUR
from core.controller_base import Controller, ControllerCommand, Observation
from core.data_models import BatteryParams, BatteryState
from core.errors import ConfigurationError, DpInfeasibleError, InvalidArgumentError

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-9


def _grid(values: Sequence[float], name: str) -> np.ndarray:
    grid = np.asarray(values, dtype=float).reshape(-1)
    if grid.size < 2 or np.any(np.diff(grid) <= 0.0) or not np.all(np.isfinite(grid)):
        raise ConfigurationError(f"{name} must be a strictly increasing list of at least two finite nodes")
    return grid


@dataclass(frozen=True)
class DpConfig:
    w1: float = DP_WEIGHTS[0]
    w2: float = DP_WEIGHTS[1]
    w3: float = DP_WEIGHTS[2]
    w4: float = DP_WEIGHTS[3]
    t_max: float = T_MAX
    u_max: float = U_MAX
    dt: float = 20.0
    soc_grid: Tuple[float, ...] = tuple(np.linspace(0.0, 1.0, 51))
    tc_grid: Tuple[float, ...] = tuple(np.linspace(15.0, 55.0, 41))
    u_grid: Tuple[float, ...] = tuple(np.linspace(0.0, U_MAX, 21))
    horizon_steps: int = int(round(DP_HORIZON / 20.0))

    def __post_init__(self):
        for name in ('soc_grid', 'tc_grid', 'u_grid'):
            object.__setattr__(self, name, tuple(float(v) for v in _grid(getattr(self, name), name)))
        if not self.dt > 0.0:
            raise ConfigurationError(f"dp dt must be positive, got {self.dt}")
        if self.horizon_steps < 1:
            raise ConfigurationError("dp horizon must cover at least one step")
        if self.u_grid[0] < 0.0 or self.u_grid[-1] > self.u_max + 1e-12:
            raise ConfigurationError("u_grid must lie within [0, u_max]")
        if self.w2 != self.w4:
            raise ConfigurationError(
                f"dp weights w2={self.w2} and w4={self.w4} must match; both price the current on every step")


class SoeMap:
    """SoE(SoC) = soe0 - eta*3600*Cn*integral_{SoC}^{SoC0} (phi - (R0+R1)*u_max) / En."""

    def __init__(self, params: BatteryParams, soc0: float, soe0: float, u_max: float):
        if params.energy_nominal <= 0.0:
            raise ConfigurationError("energy_nominal is not set; calibrate the cell first")
        knots = params.ocv_soc
        grid = np.union1d(np.linspace(0.0, 1.0, 2001), knots)
        emf = np.interp(grid, knots, params.ocv_voltage) - params.total_resistance * u_max
        self._grid = grid
        self._cumulative = cumulative_trapezoid(emf, grid, initial=0.0)
        self._factor = params.eta * SECONDS_PER_HOUR * params.capacity_nominal / params.energy_nominal
        self._soe0 = soe0
        self._anchor = float(np.interp(soc0, grid, self._cumulative))

    def __call__(self, soc):
        return self._soe0 - self._factor * (self._anchor - np.interp(soc, self._grid, self._cumulative))


@dataclass
class DpSolution:
    """Greedy rollout of the optimal policy plus the stage-0 value function."""

    currents: np.ndarray
    soc: np.ndarray
    t_c: np.ndarray
    soe: np.ndarray
    value_function: np.ndarray
    cost: float
    finished: bool
    t_s_frozen: float
    stages: int = field(default=0)


def dp_transition(soc, tc, u, t_s: float, params: BatteryParams, dt: float):
    """One step of the reduced (SoC, Tc) model; exact for frozen Ts and quasi-static V1."""
    soc_next = soc - u * dt / (SECONDS_PER_HOUR * params.capacity_nominal)
    tc_inf = t_s + params.r_c * u * u * params.total_resistance
    decay = math.exp(-dt / (params.r_c * params.c_c))
    tc_next = tc_inf + (tc - tc_inf) * decay
    return soc_next, tc_next


def _stencil(grid: np.ndarray, values: np.ndarray):
    """Lower index and upper weight for linear interpolation, clamped to the grid."""
    clamped = np.clip(values, grid[0], grid[-1])
    index = np.clip(np.searchsorted(grid, clamped, side='right') - 1, 0, grid.size - 2)
    weight = (clamped - grid[index]) / (grid[index + 1] - grid[index])
    return index, weight


def _weighted(weight, values):
    # Zero weight must not propagate an infinite node value
    return np.where(weight > 0.0, weight * values, 0.0)


def _interpolate(table: np.ndarray, si, sw, ti, tw) -> np.ndarray:
    with np.errstate(invalid='ignore'):
        return (_weighted((1.0 - sw) * (1.0 - tw), table[si, ti])
                + _weighted(sw * (1.0 - tw), table[si + 1, ti])
                + _weighted((1.0 - sw) * tw, table[si, ti + 1])
                + _weighted(sw * tw, table[si + 1, ti + 1]))


def dp_solve(x0: BatteryState, cfg: DpConfig, params: BatteryParams,
             soe0: float = 1.0) -> DpSolution:
    """Backward value iteration on the (SoC, Tc) grid, then a greedy forward rollout.

    Args:
        x0: Initial state; its surface temperature is frozen over the plan
        cfg: Weights, limits and grids
        params: Model parameters
        soe0: State of energy at x0

    Returns:
        DpSolution with the open-loop current sequence

    Raises:
        InvalidArgumentError: x0 lies outside the grid hull
        DpInfeasibleError: The rollout reaches a state with no admissible action
    """
    soc_grid = np.asarray(cfg.soc_grid)
    tc_grid = np.asarray(cfg.tc_grid)
    u_grid = np.asarray(cfg.u_grid)
    if not (soc_grid[0] <= x0.soc <= soc_grid[-1] and tc_grid[0] <= x0.t_c <= tc_grid[-1]):
        raise InvalidArgumentError(
            f"Initial state (SoC={x0.soc:.4f}, Tc={x0.t_c:.2f}) outside the DP grid hull")

    t_s = x0.t_s
    n_steps = cfg.horizon_steps
    soe_of = SoeMap(params, x0.soc, soe0, cfg.u_max)
    node_soe = soe_of(soc_grid)
    done_nodes = node_soe < 0.0

    # Time-invariant transitions on the grid: SoC depends on (SoC, u), Tc on (Tc, u)
    soc_next, _ = dp_transition(soc_grid[:, None], 0.0, u_grid[None, :], t_s, params, cfg.dt)
    _, tc_next = dp_transition(0.0, tc_grid[:, None], u_grid[None, :], t_s, params, cfg.dt)
    s_index, s_weight = _stencil(soc_grid, soc_next)
    t_index, t_weight = _stencil(tc_grid, tc_next)
    next_done = soe_of(soc_next) < 0.0
    tc_ok = tc_next <= cfg.t_max + FEASIBILITY_TOL
    node_ok = tc_grid <= cfg.t_max + FEASIBILITY_TOL

    si = s_index[:, None, :]
    sw = s_weight[:, None, :]
    ti = t_index[None, :, :]
    tw = t_weight[None, :, :]
    stage_cost = cfg.w3 + cfg.w4 * u_grid[None, None, :]
    feasible = tc_ok[None, :, :] & np.ones((soc_grid.size, 1, 1), dtype=bool)

    terminal = cfg.w1 * np.abs(node_soe)
    value = np.where(node_ok[None, :], terminal[:, None], np.inf)
    value[done_nodes, :] = 0.0
    value[:, ~node_ok] = np.inf
    values = [value]

    for _ in range(n_steps):
        continuation = _interpolate(value, si, sw, ti, tw)
        continuation = np.where(next_done[:, None, :], 0.0, continuation)
        q_values = np.where(feasible, stage_cost + continuation, np.inf)
        value = np.min(q_values, axis=2)
        value[done_nodes, :] = 0.0
        value[:, ~node_ok] = np.inf
        values.append(value)
    values.reverse()        # values[k] is the cost-to-go with k steps elapsed

    currents, socs, tcs = [], [x0.soc], [x0.t_c]
    soc, tc = x0.soc, x0.t_c
    finished = bool(soe_of(soc) < 0.0)
    for k in range(n_steps):
        if finished:
            break
        soc_u, tc_u = dp_transition(soc, tc, u_grid, t_s, params, cfg.dt)
        si_u, sw_u = _stencil(soc_grid, soc_u)
        ti_u, tw_u = _stencil(tc_grid, tc_u)
        continuation = _interpolate(values[k + 1], si_u, sw_u, ti_u, tw_u)
        continuation = np.where(soe_of(soc_u) < 0.0, 0.0, continuation)
        q_values = np.where(tc_u <= cfg.t_max + FEASIBILITY_TOL,
                            cfg.w3 + cfg.w4 * u_grid + continuation, np.inf)
        best = int(np.argmin(q_values))
        if not np.isfinite(q_values[best]):
            raise DpInfeasibleError(
                f"No admissible current at step {k} (SoC={soc:.4f}, Tc={tc:.2f})", node=(soc, tc))
        soc, tc = float(soc_u[best]), float(tc_u[best])
        currents.append(float(u_grid[best]))
        socs.append(soc)
        tcs.append(tc)
        finished = bool(soe_of(soc) < 0.0)

    si0, sw0 = _stencil(soc_grid, np.array([x0.soc]))
    ti0, tw0 = _stencil(tc_grid, np.array([x0.t_c]))
    cost = float(_interpolate(values[0], si0, sw0, ti0, tw0)[0])
    socs = np.array(socs)
    logger.info(f"DP plan: {len(currents)} steps, finished={finished}, cost={cost:.4g}, "
                f"peak predicted Tc={max(tcs):.2f} C")
    return DpSolution(np.array(currents), socs, np.array(tcs), soe_of(socs), values[0],
                      cost, finished, t_s, stages=n_steps)


class DpController(Controller):
    """Applies the DP plan open loop; replans from the estimate once it runs out."""

    def __init__(self, cfg: DpConfig, params: BatteryParams, name: str = 'DP'):
        super().__init__(name, cfg.dt, cfg.u_max)
        self.cfg = cfg
        self.params = params
        self.plan: Optional[DpSolution] = None
        self.index = 0
        self.replans = 0

    def compute(self, observation: Observation) -> ControllerCommand:
        if self.plan is None or self.index >= self.plan.currents.size:
            if self.plan is not None:
                self.replans += 1
                logger.warning(f"DP plan exhausted at t={observation.t:.0f} s "
                               f"(SoE={observation.soe:.4f}); replanning")
            x_hat = observation.x_hat
            grid_soc = (self.cfg.soc_grid[0], self.cfg.soc_grid[-1])
            grid_tc = (self.cfg.tc_grid[0], self.cfg.tc_grid[-1])
            start = BatteryState(min(max(x_hat.soc, grid_soc[0]), grid_soc[1]), x_hat.v1,
                                 x_hat.t_s, min(max(x_hat.t_c, grid_tc[0]), grid_tc[1]))
            try:
                plan = dp_solve(start, self.cfg, self.params, soe0=observation.soe)
            except DpInfeasibleError as exc:
                if self.plan is None:
                    raise
                # A replan from a hot core has no admissible action yet; rest and retry
                logger.warning(f"DP replan infeasible at t={observation.t:.0f} s: {exc}; resting at 0 A")
                return ControllerCommand(0.0, {'phase': 'DP-cool', 'plan_step': self.index,
                                               'replans': self.replans})
            self.plan = plan
            self.index = 0
            if self.plan.currents.size == 0:
                return ControllerCommand(0.0, {'phase': 'DP', 'plan_step': 0, 'replans': self.replans})
        current = float(self.plan.currents[self.index])
        diagnostics = {'phase': 'DP', 'plan_step': self.index, 'replans': self.replans}
        self.index += 1
        return ControllerCommand(current, diagnostics)

    def reset(self):
        self.plan = None
        self.index = 0
        self.replans = 0
