"""YAML run configuration with line-numbered validation errors.

Every section and key is checked against a fixed schema; unknown keys are
rejected so a typo never silently falls back to a default.
"""
import hashlib
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

import numpy as np
import yaml

from config import (
    CC_CURRENT, CT_KI, CT_KP, CV_CUTOFF_VOLTAGE, CV_KI, CV_KP, DISTURBANCE_FLOOR,
    DISTURBANCE_INFLATION, DP_HORIZON, DP_WEIGHTS, LQR_INPUT_WEIGHT, LQR_STATE_WEIGHT,
    MPC_HORIZON, MPC_INPUT_WEIGHT, MPC_OUTPUT_WEIGHT, MPC_RATE_LIMIT, PLANT_STEP, RPI_EPSILON,
    RPI_MAX_STEPS, SIM_TIMEOUT, SOE_STOP, T_MAX, U_MAX, BENCHMARK_WORKERS,
)
from core.battery_model import make_perturbed_plant
from core.controller_factory import CONTROLLER_KINDS, KIND_CC_CT, KIND_CC_CV, KIND_DP, KIND_MPC
from core.data_models import BatteryParams
from core.dp_controller import DpConfig
from core.errors import ConfigurationError
from core.estimation import KalmanConfig
from core.robust_mpc import MpcSettings

logger = logging.getLogger(__name__)

AUTO = 'auto'


class LineDict(dict):
    """Mapping that remembers the source line of itself and of each key."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.line: Optional[int] = None
        self.lines: Dict[Any, int] = {}

    def line_of(self, key) -> Optional[int]:
        return self.lines.get(key, self.line)


class _LineLoader(yaml.SafeLoader):
    pass


# YAML 1.1 needs a dot in a float, so 1e5 and 1.0e5 would load as strings.
_LineLoader.add_implicit_resolver(
    'tag:yaml.org,2002:float',
    re.compile(r'''^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?[0-9][0-9_]*(?::[0-5]?[0-9])+\.[0-9_]*
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$''', re.X),
    list('-+0123456789.'))


def _construct_mapping(loader: _LineLoader, node: yaml.MappingNode) -> LineDict:
    loader.flatten_mapping(node)
    mapping = LineDict()
    mapping.line = node.start_mark.line + 1
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in mapping:
            raise ConfigurationError(f"Duplicate key '{key}'", line=key_node.start_mark.line + 1)
        mapping[key] = loader.construct_object(value_node, deep=True)
        mapping.lines[key] = key_node.start_mark.line + 1
    return mapping


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


class _Section:
    """Typed reads from one mapping with line-aware errors."""

    def __init__(self, data: Any, name: str, path: str, line: Optional[int] = None):
        if data is None:
            data = LineDict()
        if not isinstance(data, dict):
            raise ConfigurationError(f"Section '{name}' must be a mapping", line=line, path=path)
        self.data = data
        self.name = name
        self.path = path
        self.line = getattr(data, 'line', line)

    def _line(self, key) -> Optional[int]:
        if isinstance(self.data, LineDict):
            return self.data.line_of(key)
        return self.line

    def error(self, key, message: str) -> ConfigurationError:
        return ConfigurationError(f"{self.name}.{key}: {message}", line=self._line(key), path=self.path)

    def check_keys(self, allowed):
        for key in self.data:
            if key not in allowed:
                raise self.error(key, f"unknown key (allowed: {', '.join(sorted(allowed))})")

    def has(self, key) -> bool:
        return key in self.data

    def number(self, key, default=None, positive: bool = False, minimum: Optional[float] = None) -> float:
        value = self.data.get(key, default)
        if value is None:
            raise self.error(key, "is required")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.error(key, f"expected a number, got {value!r}")
        value = float(value)
        if not np.isfinite(value) and not (value == np.inf and not positive):
            raise self.error(key, f"must be finite, got {value}")
        if positive and not value > 0.0:
            raise self.error(key, f"must be positive, got {value}")
        if minimum is not None and value < minimum:
            raise self.error(key, f"must be >= {minimum}, got {value}")
        return value

    def integer(self, key, default=None, minimum: Optional[int] = None) -> int:
        value = self.data.get(key, default)
        if isinstance(value, bool) or not isinstance(value, int):
            raise self.error(key, f"expected an integer, got {value!r}")
        if minimum is not None and value < minimum:
            raise self.error(key, f"must be >= {minimum}, got {value}")
        return value

    def flag(self, key, default: bool) -> bool:
        value = self.data.get(key, default)
        if not isinstance(value, bool):
            raise self.error(key, f"expected true or false, got {value!r}")
        return value

    def text(self, key, default=None) -> str:
        value = self.data.get(key, default)
        if not isinstance(value, str):
            raise self.error(key, f"expected a string, got {value!r}")
        return value

    def vector(self, key, default=None, length: Optional[int] = None) -> Tuple[float, ...]:
        value = self.data.get(key, default)
        if value is None:
            raise self.error(key, "is required")
        if not isinstance(value, (list, tuple)) or any(
                isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            raise self.error(key, f"expected a list of numbers, got {value!r}")
        if length is not None and len(value) != length:
            raise self.error(key, f"expected {length} entries, got {len(value)}")
        return tuple(float(v) for v in value)

    def grid(self, key, default: Tuple[float, float, int]) -> Tuple[float, ...]:
        value = self.data.get(key)
        if value is None:
            start, stop, num = default
        elif isinstance(value, dict):
            sub = self.sub(key)
            sub.check_keys({'start', 'stop', 'num'})
            start, stop, num = sub.number('start'), sub.number('stop'), sub.integer('num', minimum=2)
        else:
            return self.vector(key)
        return tuple(float(v) for v in np.linspace(start, stop, num))

    def sub(self, key) -> '_Section':
        return _Section(self.data.get(key), f"{self.name}.{key}", self.path, self._line(key))

    def wrap(self, key, build):
        """Run a constructor and attach this key's line to its ConfigurationError."""
        try:
            return build()
        except ConfigurationError as exc:
            if exc.line is not None:
                raise
            raise ConfigurationError(f"{self.name}.{key}: {exc.message}", line=self._line(key), path=self.path) from None


SECTIONS = ('battery', 'plant', 'estimator', 'simulation', 'synthesis', 'dp', 'mpc', 'controllers')


@dataclass(frozen=True)
class ControllerEntry:
    """One controller section as written in the file."""

    name: str
    kind: str
    dt: float
    options: Dict[str, float] = field(default_factory=dict)
    line: Optional[int] = None


@dataclass(frozen=True)
class SynthesisSettings:
    soc: float = 0.5
    current: float = 20.0
    t_core: Optional[float] = None
    profile_seed: int = 7
    profile_count: int = 8
    profile_duration: float = 4 * 3600.0
    profile_step: float = 4.0
    inflation: float = DISTURBANCE_INFLATION
    floor: float = DISTURBANCE_FLOOR


@dataclass(frozen=True)
class Settings:
    """Validated run configuration."""

    path: str
    config_hash: str
    design: BatteryParams
    energy_auto: bool
    perturbation: Union[float, Mapping[str, float]]
    plant_seed: int
    kalman: KalmanConfig
    noise: bool
    dt_plant: float
    t_max_sim: float
    soe_stop: float
    noise_seed: int
    t_constraint: float
    workers: int
    synthesis: SynthesisSettings
    dp: DpConfig
    mpc: MpcSettings
    controllers: Tuple[ControllerEntry, ...]

    def with_seed(self, seed: Optional[int]) -> 'Settings':
        """Override the noise seed; the config hash still names the file."""
        if seed is None:
            return self
        return replace(self, noise_seed=int(seed))

    def controller(self, name: str) -> ControllerEntry:
        for entry in self.controllers:
            if entry.name == name:
                return entry
        raise ConfigurationError(f"No controller named '{name}' "
                                 f"(configured: {', '.join(e.name for e in self.controllers)})",
                                 path=self.path)


def _parse_battery(section: _Section) -> Tuple[BatteryParams, bool]:
    fields_ = ('capacity_nominal', 'r0', 'r1', 'c1', 'r_u', 'r_c', 'c_s', 'c_c')
    section.check_keys(set(fields_) | {'t_ambient', 'ocv_curve', 'energy_nominal', 'eta'})
    default = BatteryParams.default()
    values = {name: section.number(name, getattr(default, name), positive=True) for name in fields_}
    t_ambient = section.number('t_ambient', default.t_ambient)
    eta = section.number('eta', 1.0, positive=True)

    raw_curve = section.data.get('ocv_curve', default.ocv_curve)
    if not isinstance(raw_curve, (list, tuple)) or not all(
            isinstance(p, (list, tuple)) and len(p) == 2 for p in raw_curve):
        raise section.error('ocv_curve', "expected a list of [soc, voltage] pairs")
    try:
        curve = tuple((float(s), float(v)) for s, v in raw_curve)
    except (TypeError, ValueError):
        raise section.error('ocv_curve', "breakpoints must be numbers") from None

    energy = section.data.get('energy_nominal', AUTO)
    energy_auto = energy == AUTO
    energy_value = 0.0 if energy_auto else section.number('energy_nominal', positive=True)
    params = section.wrap('battery', lambda: BatteryParams(
        ocv_curve=curve, t_ambient=t_ambient, energy_nominal=energy_value, eta=eta, **values))
    return params, energy_auto


def _parse_plant(section: _Section) -> Tuple[Union[float, Dict[str, float]], int]:
    section.check_keys({'perturbation', 'seed'})
    seed = section.integer('seed', 1, minimum=0)
    raw = section.data.get('perturbation', 0.05)
    if isinstance(raw, dict):
        sub = section.sub('perturbation')
        return {key: sub.number(key, minimum=0.0) for key in sub.data}, seed
    return section.number('perturbation', 0.05, minimum=0.0), seed


def _parse_estimator(section: _Section) -> Tuple[KalmanConfig, bool]:
    section.check_keys({'process_cov', 'measurement_cov', 'initial_cov', 'noise'})
    process = section.vector('process_cov', (1e-10, 1e-6, 1e-4, 1e-4), 4)
    measurement = section.vector('measurement_cov', (1e-2, 1e-4), 2)
    initial = section.vector('initial_cov', (1e-2, 1e-4, 1.0, 1.0), 4)
    kalman = section.wrap('process_cov', lambda: KalmanConfig.from_diagonals(process, measurement, initial))
    return kalman, section.flag('noise', True)


def _parse_synthesis(section: _Section) -> SynthesisSettings:
    section.check_keys({'soc', 'current', 't_core', 'profile_seed', 'profile_count',
                        'profile_duration', 'profile_step', 'inflation', 'floor', 'epsilon', 'max_steps'})
    defaults = SynthesisSettings()
    t_core = section.number('t_core') if section.has('t_core') else None
    return SynthesisSettings(
        soc=section.number('soc', defaults.soc, minimum=0.0),
        current=section.number('current', defaults.current, minimum=0.0),
        t_core=t_core,
        profile_seed=section.integer('profile_seed', defaults.profile_seed, minimum=0),
        profile_count=section.integer('profile_count', defaults.profile_count, minimum=1),
        profile_duration=section.number('profile_duration', defaults.profile_duration, positive=True),
        profile_step=section.number('profile_step', defaults.profile_step, positive=True),
        inflation=section.number('inflation', defaults.inflation, minimum=0.0),
        floor=section.number('floor', defaults.floor, positive=True),
    )


def _parse_dp(section: _Section) -> DpConfig:
    section.check_keys({'weights', 't_max', 'u_max', 'dt', 'soc_grid', 'tc_grid', 'u_grid', 'horizon'})
    weights = section.vector('weights', DP_WEIGHTS, 4)
    dt = section.number('dt', 20.0, positive=True)
    u_max = section.number('u_max', U_MAX, positive=True)
    horizon = section.number('horizon', DP_HORIZON, positive=True)
    soc_grid = section.grid('soc_grid', (0.0, 1.0, 51))
    tc_grid = section.grid('tc_grid', (15.0, 55.0, 41))
    u_grid = section.grid('u_grid', (0.0, u_max, 21))
    return section.wrap('dp', lambda: DpConfig(
        *weights, t_max=section.number('t_max', T_MAX), u_max=u_max, dt=dt,
        soc_grid=soc_grid, tc_grid=tc_grid, u_grid=u_grid,
        horizon_steps=int(round(horizon / dt))))


def _parse_mpc(section: _Section, synthesis_section: _Section) -> MpcSettings:
    section.check_keys({'horizon', 'q_weight', 'r_weight', 'rate_limit', 'y_target', 'dt',
                        'lqr_state_weight', 'lqr_input_weight', 'delta_u_weight'})
    return section.wrap('mpc', lambda: MpcSettings(
        horizon=section.integer('horizon', MPC_HORIZON, minimum=1),
        q_weight=section.vector('q_weight', MPC_OUTPUT_WEIGHT, 2),
        r_weight=section.number('r_weight', MPC_INPUT_WEIGHT, minimum=0.0),
        rate_limit=section.number('rate_limit', MPC_RATE_LIMIT, positive=True),
        y_target=section.vector('y_target', (0.0, T_MAX), 2),
        dt=section.number('dt', 20.0, positive=True),
        state_weight=section.vector('lqr_state_weight', LQR_STATE_WEIGHT, 4),
        input_weight=section.number('lqr_input_weight', LQR_INPUT_WEIGHT, positive=True),
        epsilon=synthesis_section.number('epsilon', RPI_EPSILON, positive=True),
        max_steps=synthesis_section.integer('max_steps', RPI_MAX_STEPS, minimum=1),
        delta_u_weight=section.number('delta_u_weight', 0.0, minimum=0.0),
    ))


PI_OPTIONS = {
    KIND_CC_CV: {'cc_current': CC_CURRENT, 'v_cutoff': CV_CUTOFF_VOLTAGE, 'kp': CV_KP, 'ki': CV_KI},
    KIND_CC_CT: {'cc_current': CC_CURRENT, 't_ref': T_MAX, 'kp': CT_KP, 'ki': CT_KI},
}


def _parse_controllers(raw: Any, path: str, line: Optional[int],
                       sampled_dt: Mapping[str, float]) -> Tuple[ControllerEntry, ...]:
    """PI schemes choose their own sampling time; DP and MPC use their section's dt."""
    if raw is None:
        raw = []
    if not isinstance(raw, list):
        raise ConfigurationError("controllers: expected a list of controller sections", line=line, path=path)
    entries: List[ControllerEntry] = []
    for index, item in enumerate(raw):
        section = _Section(item, f"controllers[{index}]", path, line)
        kind = section.text('kind')
        if kind not in CONTROLLER_KINDS:
            raise section.error('kind', f"unknown controller kind '{kind}' (expected one of {CONTROLLER_KINDS})")
        allowed_options = PI_OPTIONS.get(kind, {})
        own_dt = {'dt'} if kind not in sampled_dt else set()
        section.check_keys({'name', 'kind'} | own_dt | set(allowed_options))
        name = section.text('name', kind.upper())
        dt = sampled_dt[kind] if kind in sampled_dt else section.number('dt', 1.0, positive=True)
        options = {key: section.number(key, default) for key, default in allowed_options.items()}
        if any(entry.name == name for entry in entries):
            raise section.error('name', f"duplicate controller name '{name}'")
        entries.append(ControllerEntry(name, kind, dt, options, section.line))
    return tuple(entries)


def parse_settings(data: Any, path: str = '<string>', config_hash: str = '') -> Settings:
    """Validate a loaded document against the schema."""
    root = _Section(data, 'config', path, 1)
    root.check_keys(set(SECTIONS))

    design, energy_auto = _parse_battery(root.sub('battery'))
    perturbation, plant_seed = _parse_plant(root.sub('plant'))
    perturbation = root.wrap('plant', lambda: _validated_perturbation(perturbation))
    kalman, noise = _parse_estimator(root.sub('estimator'))

    sim = root.sub('simulation')
    sim.check_keys({'dt_plant', 't_max_sim', 'soe_stop', 'noise_seed', 't_constraint', 'workers'})

    synthesis_section = root.sub('synthesis')
    synthesis = _parse_synthesis(synthesis_section)
    dp = _parse_dp(root.sub('dp'))
    mpc = _parse_mpc(root.sub('mpc'), synthesis_section)
    controllers = _parse_controllers(root.data.get('controllers'), path, root._line('controllers'),
                                     {KIND_DP: dp.dt, KIND_MPC: mpc.dt})

    return Settings(
        path=path,
        config_hash=config_hash,
        design=design,
        energy_auto=energy_auto,
        perturbation=perturbation,
        plant_seed=plant_seed,
        kalman=kalman,
        noise=noise,
        dt_plant=sim.number('dt_plant', PLANT_STEP, positive=True),
        t_max_sim=sim.number('t_max_sim', SIM_TIMEOUT, positive=True),
        soe_stop=sim.number('soe_stop', SOE_STOP, minimum=0.0),
        noise_seed=sim.integer('noise_seed', 0, minimum=0),
        t_constraint=sim.number('t_constraint', T_MAX),
        workers=sim.integer('workers', BENCHMARK_WORKERS, minimum=1),
        synthesis=synthesis,
        dp=dp,
        mpc=mpc,
        controllers=controllers,
    )


def _validated_perturbation(perturbation):
    # The plant generator owns the key and range checks
    make_perturbed_plant(BatteryParams.default(), perturbation, 0)
    return perturbation


def load_settings(path: Union[str, Path]) -> Settings:
    """Read and validate a YAML configuration file.

    Raises:
        ConfigurationError: Missing file, YAML syntax error or schema violation
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Configuration file not found: {path}", path=str(path))
    raw = path.read_bytes()
    try:
        data = yaml.load(raw.decode('utf-8'), Loader=_LineLoader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise ConfigurationError(f"YAML syntax error: {exc.problem}", line=line, path=str(path)) from None
    except (yaml.YAMLError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"Unreadable configuration: {exc}", path=str(path)) from None
    except ConfigurationError as exc:
        raise ConfigurationError(exc.message, line=exc.line, path=str(path)) from None
    settings = parse_settings(data, str(path), hashlib.sha256(raw).hexdigest()[:16])
    logger.info(f"Loaded configuration {path} (hash {settings.config_hash}, "
                f"{len(settings.controllers)} controllers)")
    return settings
