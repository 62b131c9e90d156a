"""Run configuration: settings groups, JSON loading, overrides and logging setup."""

import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from errors import ConfigurationError
from models import CohortConfig, FitWindow


OUTPUT_ROOT_ENV = "QPC07_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "./qpc07_runs"
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def _from_known(cls, data: Dict[str, Any], group: str):
    """Build a settings dataclass, rejecting unknown keys."""
    known = {f.name for f in fields(cls) if f.init}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"Unknown {group} keys: {sorted(unknown)}")
    return cls(**data)


@dataclass
class VanHoveSettings:
    """Tight-binding discretisation of the barrier."""

    site_spacing: float = 2.0
    effective_mass: float = 0.067
    hopping: Optional[float] = None
    n_sites: Optional[int] = None
    floor_depth: float = 10.0
    central_half_width: float = 0.5
    kappa_range: Tuple[float, float] = (-3.0, 9.0)
    kappa_points: int = 601
    map_points: int = 2401
    broadening: float = 1e-6

    def __post_init__(self):
        self.kappa_range = tuple(float(k) for k in self.kappa_range)
        if len(self.kappa_range) != 2 or self.kappa_range[0] >= self.kappa_range[1]:
            raise ConfigurationError("kappa_range must be an increasing pair")
        if self.kappa_points < 11 or self.map_points < 11:
            raise ConfigurationError("LDOS and map grids need at least 11 points")
        if self.floor_depth <= 0 or self.central_half_width <= 0:
            raise ConfigurationError("Floor depth and central half width must be positive")

    def to_dict(self) -> dict:
        data = asdict(self)
        data['kappa_range'] = list(self.kappa_range)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'VanHoveSettings':
        return _from_known(cls, data, "vanhove")


@dataclass
class SynthesisSettings:
    """Trace rendering: grids, interaction weights, noise and bias families."""

    n_subbands: int = 3
    subband_weights: Tuple[float, ...] = (1.0, 0.4, 0.03)
    gate_points: int = 3001
    kappa_margin: float = 3.0
    noise_sigma: float = 0.005
    hysteresis_shift: float = 0.0
    hartree_coordinate: str = "bare"
    family_gate_points: int = 1201
    bias_max: float = 0.005
    bias_step: float = 0.0002
    antiderivative_step: float = 0.002

    def __post_init__(self):
        self.subband_weights = tuple(float(w) for w in self.subband_weights)
        if self.n_subbands < 1:
            raise ConfigurationError("n_subbands must be >= 1")
        if any(w < 0 for w in self.subband_weights):
            raise ConfigurationError("Subband interaction weights must be >= 0")
        if self.gate_points < 11 or self.family_gate_points < 11:
            raise ConfigurationError("Gate grids need at least 11 points")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if self.hartree_coordinate not in ("bare", "effective"):
            raise ConfigurationError(f"Unknown Hartree coordinate: {self.hartree_coordinate}")
        if self.bias_max < 0 or self.bias_step <= 0:
            raise ConfigurationError("Bias range must be non-negative with a positive step")

    def weight(self, subband: int) -> float:
        """Interaction weight of subband N; zero beyond the configured list."""
        if subband - 1 < len(self.subband_weights):
            return self.subband_weights[subband - 1]
        return 0.0

    def bias_list(self) -> List[float]:
        n = int(round(self.bias_max / self.bias_step))
        return [round(k * self.bias_step, 12) for k in range(n + 1)]

    def to_dict(self) -> dict:
        data = asdict(self)
        data['subband_weights'] = list(self.subband_weights)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'SynthesisSettings':
        return _from_known(cls, data, "synthesis")


@dataclass
class AnalysisSettings:
    """Thresholds and windows of the extraction pipeline."""

    smoothing_window: int = 11
    smoothing_order: int = 3
    plateau_window: int = 51
    plateau_g_range: Tuple[float, float] = (0.8, 1.2)
    min_plateau_samples: int = 5
    fit_window: FitWindow = field(default_factory=FitWindow)
    min_fit_points: int = 10
    good_fit_rms: float = 0.02
    ex_bounds: Tuple[float, float] = (0.01, 50.0)
    restart_factors: Tuple[float, ...] = (1.0, 0.5, 2.0, 0.25)
    lever_arm: Optional[float] = None
    fixed_ex: Optional[float] = None
    kappa_step: float = 0.02
    n_subbands: int = 3
    reference: str = "matched"
    riser_window: Tuple[float, float] = (-1.5, 4.0)
    g_window: Tuple[float, float] = (0.15, 0.95)
    tc_floor: float = 1e-6
    g_floor: float = 0.05
    s_g_kappas: Tuple[float, ...] = (1.0, 2.0, 3.0, 4.0)
    split_g_range: Tuple[float, float] = (0.02, 0.98)
    prominence_fraction: float = 0.1
    prominence_sigma: float = 3.0
    suppression_sigma: float = 3.0
    peak_separation: float = 1.6
    min_correlation_devices: int = 10

    def __post_init__(self):
        if isinstance(self.fit_window, dict):
            self.fit_window = FitWindow.from_dict(self.fit_window)
        for name in ('plateau_g_range', 'ex_bounds', 'riser_window', 'g_window', 'split_g_range'):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 2 or value[0] >= value[1]:
                raise ConfigurationError(f"{name} must be an increasing pair")
            setattr(self, name, value)
        self.restart_factors = tuple(float(v) for v in self.restart_factors)
        self.s_g_kappas = tuple(float(v) for v in self.s_g_kappas)
        if self.smoothing_window % 2 == 0 or self.plateau_window % 2 == 0:
            raise ConfigurationError("Smoothing windows must be odd")
        if self.reference not in ("matched", "aligned"):
            raise ConfigurationError(f"Unknown S_TC reference: {self.reference}")
        if self.good_fit_rms <= 0 or self.kappa_step <= 0:
            raise ConfigurationError("good_fit_rms and kappa_step must be positive")
        if self.lever_arm is not None and not 0 < self.lever_arm <= 1:
            raise ConfigurationError("Lever arm must lie in (0, 1]")
        if self.fixed_ex is not None and self.fixed_ex <= 0:
            raise ConfigurationError("fixed_ex must be positive")
        if self.min_correlation_devices < 3:
            raise ConfigurationError("Correlations need at least 3 devices")

    def to_dict(self) -> dict:
        data = asdict(self)
        data['fit_window'] = self.fit_window.to_dict()
        for name in ('plateau_g_range', 'ex_bounds', 'restart_factors', 'riser_window',
                     'g_window', 's_g_kappas', 'split_g_range'):
            data[name] = list(getattr(self, name))
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'AnalysisSettings':
        return _from_known(cls, data, "analysis")


@dataclass
class RunConfig:
    """Fully resolved configuration of one command invocation."""

    cohort: CohortConfig = field(default_factory=CohortConfig)
    synthesis: SynthesisSettings = field(default_factory=SynthesisSettings)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    vanhove: VanHoveSettings = field(default_factory=VanHoveSettings)
    output_dir: Optional[str] = None
    cooldowns: int = 1
    illuminated: bool = False
    workers: int = 1
    chips: Optional[List[int]] = None
    mux_faults: List[Dict[str, Any]] = field(default_factory=list)
    save_traces: bool = False

    def __post_init__(self):
        if self.cooldowns < 1:
            raise ConfigurationError("cooldowns must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.chips is not None:
            self.chips = [int(c) for c in self.chips]
            bad = [c for c in self.chips if not 1 <= c <= self.cohort.n_chips]
            if bad:
                raise ConfigurationError(f"Chips out of range: {bad}")

    @property
    def seed(self) -> int:
        return self.cohort.seed

    @property
    def chip_list(self) -> List[int]:
        return self.chips if self.chips else list(range(1, self.cohort.n_chips + 1))

    def resolved_output_dir(self) -> Path:
        """Output directory: explicit value, else the env root plus a seed-named run."""
        if self.output_dir:
            return Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT)
        return Path(root) / f"run_seed{self.seed}"

    def to_dict(self) -> dict:
        return {
            'cohort': self.cohort.to_dict(),
            'synthesis': self.synthesis.to_dict(),
            'analysis': self.analysis.to_dict(),
            'vanhove': self.vanhove.to_dict(),
            'output_dir': self.output_dir,
            'cooldowns': self.cooldowns,
            'illuminated': self.illuminated,
            'workers': self.workers,
            'chips': self.chips,
            'mux_faults': list(self.mux_faults),
            'save_traces': self.save_traces,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'RunConfig':
        data = dict(data)
        groups = {
            'cohort': CohortConfig,
            'synthesis': SynthesisSettings,
            'analysis': AnalysisSettings,
            'vanhove': VanHoveSettings,
        }
        for name, group in groups.items():
            if isinstance(data.get(name), dict):
                data[name] = group.from_dict(data[name])
        try:
            return _from_known(cls, data, "run")
        except TypeError as e:
            raise ConfigurationError(f"Invalid configuration: {e}") from e


def _parse_value(raw: str) -> Any:
    """Interpret an override value as JSON, falling back to the raw string."""
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, TypeError):
        return raw


def apply_overrides(data: Dict[str, Any], overrides: Dict[str, str]) -> Dict[str, Any]:
    """Apply dotted ``group.key=value`` overrides to a raw configuration dict."""
    for dotted, raw in overrides.items():
        parts = dotted.split('.')
        target = data
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigurationError(f"Cannot override {dotted}: {part} is not a group")
        target[parts[-1]] = _parse_value(raw) if isinstance(raw, str) else raw
    return data


def parse_set_flags(pairs: Optional[List[str]]) -> Dict[str, str]:
    """Turn ``["a.b=1", ...]`` into an override dict."""
    overrides = {}
    for pair in pairs or []:
        if '=' not in pair:
            raise ConfigurationError(f"Override must look like key=value, got {pair!r}")
        key, value = pair.split('=', 1)
        overrides[key.strip()] = value.strip()
    return overrides


def load_run_config(path: Optional[str] = None,
                    overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Read a JSON configuration, apply overrides and validate.

    A manifest written by a previous run is accepted too; its ``config``
    block is used.

    Raises:
        ConfigurationError: For unreadable files, unknown keys or invalid values
    """
    data: Dict[str, Any] = {}
    if path:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"Cannot read configuration {path}: {e}") from e
        if 'config' in data and 'files' in data:
            data = data['config']
    data = apply_overrides(data, overrides or {})
    return RunConfig.from_dict(data)


def setup_logging(level: str = "INFO", log_file: Optional[Path] = None):
    """Configure the root logger with a stdout handler and an optional run log."""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file))
    numeric = getattr(logging, str(level).upper(), None)
    if not isinstance(numeric, int):
        raise ConfigurationError(f"Unknown log level: {level}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, handlers=handlers, force=True)
