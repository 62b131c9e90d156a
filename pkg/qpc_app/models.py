"""Data models for the QPC 0.7-anomaly toolkit."""

import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import ConfigurationError


SWEEP_DIRECTIONS = ("forward", "backward")


@dataclass
class SaddlePotential:
    """Saddle-point barrier of one device.

    E_x and E_y are the harmonic-oscillator energies (meV) along and across
    the channel. ``v_c`` is the bare saddle height; subband N opens at
    v_c + E_y (N - 1/2). Kappa is measured from the first subband bottom.
    """

    e_x: float
    e_y: float
    lever_arm: float
    v_riser: float = 0.0
    v_c: float = 0.0

    def __post_init__(self):
        if not self.e_x > 0:
            raise ValueError(f"E_x must be positive, got {self.e_x}")
        if not self.e_y > 0:
            raise ValueError(f"E_y must be positive, got {self.e_y}")
        if not 0 < self.lever_arm <= 1:
            raise ValueError(f"Lever arm must lie in (0, 1], got {self.lever_arm}")

    @property
    def u_e(self) -> float:
        """Confinement ratio U_E = E_y / E_x."""
        return self.e_y / self.e_x

    def subband_bottom(self, n: int) -> float:
        """Saddle energy of subband ``n`` (1-based)."""
        if n < 1:
            raise ValueError(f"Subband index must be >= 1, got {n}")
        return self.v_c + self.e_y * (n - 0.5)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'SaddlePotential':
        return cls(**data)


@dataclass
class ThermalState:
    """Electron temperature (K) and chemical potential (meV)."""

    temperature: float
    chemical_potential: float = 0.0

    def __post_init__(self):
        if not self.temperature >= 0:
            raise ValueError(f"Temperature must be >= 0, got {self.temperature}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'ThermalState':
        return cls(**data)


@dataclass(frozen=True, order=True)
class DeviceId:
    """Position of a device: chip 1-5, row and column 1-16."""

    chip: int
    row: int
    column: int

    @property
    def label(self) -> str:
        return f"QFET ({self.row}, {self.column})"

    @property
    def key(self) -> str:
        """File-name friendly identifier."""
        return f"chip{self.chip}_r{self.row:02d}_c{self.column:02d}"

    def to_dict(self) -> dict:
        return {'chip': self.chip, 'row': self.row, 'column': self.column}

    @classmethod
    def from_dict(cls, data: dict) -> 'DeviceId':
        return cls(int(data['chip']), int(data['row']), int(data['column']))


@dataclass
class SaddleDevice:
    """Physical ground truth of one device in one cooldown."""

    device_id: DeviceId
    width: float
    length: float
    e_x: float
    e_y: float
    lever_arm: float
    U: float
    series_resistance: float = 1000.0
    functional: bool = True
    v_riser: float = -1.0
    cooldown: int = 1
    illuminated: bool = False

    def __post_init__(self):
        if self.width <= 0 or self.length <= 0:
            raise ValueError("Device width and length must be positive")
        if self.U < 0:
            raise ValueError(f"Interaction strength U must be >= 0, got {self.U}")
        if self.series_resistance < 0:
            raise ValueError("Series resistance must be >= 0")

    @property
    def potential(self) -> SaddlePotential:
        return SaddlePotential(self.e_x, self.e_y, self.lever_arm, self.v_riser)

    @property
    def u_e(self) -> float:
        return self.e_y / self.e_x

    def to_dict(self) -> dict:
        data = asdict(self)
        data['device_id'] = self.device_id.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'SaddleDevice':
        data = dict(data)
        data['device_id'] = DeviceId.from_dict(data['device_id'])
        return cls(**data)


@dataclass
class ChipPlan:
    """Geometry plan for one chip.

    ``fixed_width`` alternates the widths by column and cycles the lengths by
    row; ``aspect_ratio`` cycles the lengths and sets W = L / aspect_ratio.
    """

    chip: int
    mode: str = "fixed_width"
    widths: Tuple[float, ...] = (0.6, 0.4)
    lengths: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
    aspect_ratio: float = 1.0

    def __post_init__(self):
        if self.mode not in ("fixed_width", "aspect_ratio"):
            raise ConfigurationError(f"Unknown chip plan mode: {self.mode}")
        self.widths = tuple(float(w) for w in self.widths)
        self.lengths = tuple(float(v) for v in self.lengths)
        if not self.lengths or any(v <= 0 for v in self.lengths):
            raise ConfigurationError("Chip plan lengths must be positive")
        if self.mode == "fixed_width" and (not self.widths or any(w <= 0 for w in self.widths)):
            raise ConfigurationError("Chip plan widths must be positive")
        if self.aspect_ratio <= 0:
            raise ConfigurationError("Aspect ratio must be positive")

    def geometry(self, row: int, column: int) -> Tuple[float, float]:
        """Return (width, length) in micrometres for a device position."""
        length = self.lengths[(row - 1) % len(self.lengths)]
        if self.mode == "aspect_ratio":
            return length / self.aspect_ratio, length
        return self.widths[(column - 1) % len(self.widths)], length

    def to_dict(self) -> dict:
        return {
            'chip': self.chip,
            'mode': self.mode,
            'widths': list(self.widths),
            'lengths': list(self.lengths),
            'aspect_ratio': self.aspect_ratio,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ChipPlan':
        return cls(**data)


def default_chip_plans(n_chips: int = 5) -> List[ChipPlan]:
    """Fixed-width plans on all chips but the last, which fixes L/W."""
    if n_chips == 1:
        return [ChipPlan(chip=1)]
    plans = [ChipPlan(chip=i) for i in range(1, n_chips)]
    plans.append(ChipPlan(chip=n_chips, mode="aspect_ratio"))
    return plans


@dataclass
class CohortConfig:
    """Distribution parameters for a multiplexed device cohort."""

    n_chips: int = 5
    mux_depth: int = 4
    chip_plans: List[ChipPlan] = field(default_factory=list)
    ex_median: float = 1.0
    ex_log_sigma: float = 0.3
    ey_intercept: float = 2.5
    ey_length_slope: float = 0.5
    ey_width_slope: float = 1.0
    ey_noise_sigma: float = 0.2
    illumination_factor: float = 1.6
    u_mode: str = "sqrt_ey"
    u_coefficient: float = 15.0
    temperatures: Tuple[float, ...] = (0.04,)
    defect_probability: float = 0.554
    seed: int = 20240607
    lever_arm: float = 0.05
    v_riser: float = -1.0
    series_resistance: float = 1000.0
    series_resistance_sigma: float = 0.0

    def __post_init__(self):
        if not self.chip_plans:
            self.chip_plans = default_chip_plans(self.n_chips)
        self.chip_plans = [p if isinstance(p, ChipPlan) else ChipPlan.from_dict(p)
                           for p in self.chip_plans]
        self.temperatures = tuple(float(t) for t in self.temperatures)
        self.validate()

    @property
    def grid_size(self) -> int:
        """Rows (and columns) per chip."""
        return 2 ** self.mux_depth

    def plan_for(self, chip: int) -> ChipPlan:
        for plan in self.chip_plans:
            if plan.chip == chip:
                return plan
        raise ConfigurationError(f"No geometry plan for chip {chip}")

    def validate(self):
        if self.n_chips < 1:
            raise ConfigurationError("Cohort needs at least one chip")
        if self.mux_depth < 0:
            raise ConfigurationError("MUX depth must be >= 0")
        for name in ('ex_log_sigma', 'ey_noise_sigma', 'series_resistance_sigma'):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.ex_median <= 0:
            raise ConfigurationError("E_x median must be positive")
        if not 0.0 <= self.defect_probability <= 1.0:
            raise ConfigurationError("Defect probability must lie in [0, 1]")
        if self.u_mode not in ("fixed", "sqrt_ey"):
            raise ConfigurationError(f"Unknown U mode: {self.u_mode}")
        if self.u_coefficient < 0:
            raise ConfigurationError("U coefficient must be >= 0")
        if self.illumination_factor <= 0:
            raise ConfigurationError("Illumination factor must be positive")
        if not 0 < self.lever_arm <= 1:
            raise ConfigurationError("Lever arm must lie in (0, 1]")
        if any(t < 0 for t in self.temperatures):
            raise ConfigurationError("Temperatures must be >= 0")
        for chip in range(1, self.n_chips + 1):
            self.plan_for(chip)

    def to_dict(self) -> dict:
        data = asdict(self)
        data['chip_plans'] = [p.to_dict() for p in self.chip_plans]
        data['temperatures'] = list(self.temperatures)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'CohortConfig':
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Unknown cohort keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class ConductanceTrace:
    """A sampled conductance sweep with its measurement metadata.

    ``g_sd`` is in units of G_Q. ``gate_voltage`` is stored in sweep order:
    decreasing for forward sweeps, increasing for backward ones.
    """

    gate_voltage: np.ndarray
    g_sd: np.ndarray
    sweep_direction: str = "forward"
    temperature: float = 0.0
    v_sd_dc: float = 0.0
    device_id: Optional[DeviceId] = None
    cooldown: int = 1
    illuminated: bool = False
    lever_arm: Optional[float] = None
    v_sd_internal: Optional[np.ndarray] = None

    def __post_init__(self):
        self.gate_voltage = np.asarray(self.gate_voltage, dtype=float)
        self.g_sd = np.asarray(self.g_sd, dtype=float)
        if self.gate_voltage.ndim != 1 or self.gate_voltage.shape != self.g_sd.shape:
            raise ValueError("Gate voltage and conductance arrays must have equal length")
        if len(self.gate_voltage) < 2:
            raise ValueError("A trace needs at least two samples")
        if self.sweep_direction not in SWEEP_DIRECTIONS:
            raise ValueError(f"Unknown sweep direction: {self.sweep_direction}")
        steps = np.diff(self.gate_voltage)
        expected = steps < 0 if self.sweep_direction == "forward" else steps > 0
        if not np.all(expected):
            raise ValueError(
                f"Gate voltage must be strictly monotone for a {self.sweep_direction} sweep")
        if self.v_sd_internal is not None:
            self.v_sd_internal = np.asarray(self.v_sd_internal, dtype=float)

    def __len__(self) -> int:
        return len(self.gate_voltage)

    def ascending(self) -> Tuple[np.ndarray, np.ndarray]:
        """Gate voltage and conductance sorted by increasing gate voltage."""
        if self.sweep_direction == "forward":
            return self.gate_voltage[::-1], self.g_sd[::-1]
        return self.gate_voltage, self.g_sd

    def metadata(self) -> Dict[str, object]:
        return {
            'device_id': self.device_id.label if self.device_id else "",
            'chip': self.device_id.chip if self.device_id else 0,
            'row': self.device_id.row if self.device_id else 0,
            'column': self.device_id.column if self.device_id else 0,
            'cooldown': self.cooldown,
            'temperature_K': self.temperature,
            'sweep_direction': self.sweep_direction,
            'illuminated': self.illuminated,
            'v_sd_dc': self.v_sd_dc,
            'lever_arm': self.lever_arm if self.lever_arm is not None else "",
        }


@dataclass
class FitWindow:
    """Conductance bounds (G_Q, relative to the subband offset) of a fit."""

    lower: float = 0.02
    upper: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.lower < self.upper <= 1.0:
            raise ValueError(
                f"Fit window needs 0 <= lower < upper <= 1, got [{self.lower}, {self.upper}]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'FitWindow':
        return cls(**data)


@dataclass
class FitResult:
    """Saddle-point fit of one lower half step."""

    subband: int
    e_x: float
    v_riser: float
    lever_arm: float
    rms: float
    n_points: int
    good_fit: bool
    at_bound: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> 'FitResult':
        return cls(**data)


def _clean(value):
    """Make floats JSON friendly (NaN and inf become None)."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _restore(value):
    """Inverse of ``_clean`` for numeric lists."""
    if value is None:
        return float('nan')
    if isinstance(value, list):
        return [_restore(v) for v in value]
    return value


@dataclass
class AnalysisResult:
    """Everything extracted from one device measurement pass."""

    device_id: Optional[DeviceId] = None
    cooldown: int = 1
    temperature: float = 0.0
    illuminated: bool = False
    width: Optional[float] = None
    length: Optional[float] = None
    status: str = "ok"
    error_kind: str = ""
    error_message: str = ""
    series_resistance_est: float = float('nan')
    e_x: Dict[str, Dict[int, float]] = field(default_factory=dict)
    fit_quality: Dict[str, Dict[int, float]] = field(default_factory=dict)
    delta_e: float = float('nan')
    lever_arm_est: float = float('nan')
    s_tc_curves: Dict[int, Tuple[List[float], List[float]]] = field(default_factory=dict)
    s_tc_07_by_subband: Dict[int, float] = field(default_factory=dict)
    s_tc_07: float = float('nan')
    s_tc_sigma: float = float('nan')
    kappa_07: float = float('nan')
    g_07: float = float('nan')
    riser_split: bool = False
    split_peaks: List[float] = field(default_factory=list)
    s_g_at: Dict[float, float] = field(default_factory=dict)
    s_g_curve: Tuple[List[float], List[float]] = field(default_factory=lambda: ([], []))
    flags: Dict[str, bool] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def good_fit(self) -> bool:
        return self.ok and bool(self.flags.get('good_fit', False))

    def e_x_first(self, direction: str = "forward") -> float:
        """E_x of the first subband in the given sweep direction."""
        return self.e_x.get(direction, {}).get(1, float('nan'))

    @property
    def u_e(self) -> float:
        e_x = self.e_x_first()
        if not (math.isfinite(self.delta_e) and math.isfinite(e_x) and e_x > 0):
            return float('nan')
        return self.delta_e / e_x

    def to_dict(self) -> dict:
        data = {
            'device_id': self.device_id.to_dict() if self.device_id else None,
            'cooldown': self.cooldown,
            'temperature': self.temperature,
            'illuminated': self.illuminated,
            'width': self.width,
            'length': self.length,
            'status': self.status,
            'error_kind': self.error_kind,
            'error_message': self.error_message,
            'series_resistance_est': self.series_resistance_est,
            'e_x': self.e_x,
            'fit_quality': self.fit_quality,
            'delta_e': self.delta_e,
            'lever_arm_est': self.lever_arm_est,
            's_tc_curves': {n: {'kappa': k, 's_tc': s} for n, (k, s) in self.s_tc_curves.items()},
            's_tc_07_by_subband': self.s_tc_07_by_subband,
            's_tc_07': self.s_tc_07,
            's_tc_sigma': self.s_tc_sigma,
            'kappa_07': self.kappa_07,
            'g_07': self.g_07,
            'riser_split': self.riser_split,
            'split_peaks': self.split_peaks,
            's_g_at': {repr(float(k)): v for k, v in self.s_g_at.items()},
            's_g_curve': {'kappa': self.s_g_curve[0], 's_g': self.s_g_curve[1]},
            'flags': self.flags,
        }
        return _clean(data)

    @classmethod
    def from_dict(cls, data: dict) -> 'AnalysisResult':
        def per_direction(block):
            return {d: {int(n): _restore(v) for n, v in values.items()}
                    for d, values in (block or {}).items()}

        curves = {int(n): (_restore(c['kappa']), _restore(c['s_tc']))
                  for n, c in (data.get('s_tc_curves') or {}).items()}
        s_g_curve = data.get('s_g_curve') or {'kappa': [], 's_g': []}
        return cls(
            device_id=DeviceId.from_dict(data['device_id']) if data.get('device_id') else None,
            cooldown=int(data.get('cooldown', 1)),
            temperature=float(data.get('temperature', 0.0)),
            illuminated=bool(data.get('illuminated', False)),
            width=data.get('width'),
            length=data.get('length'),
            status=data.get('status', "ok"),
            error_kind=data.get('error_kind', ""),
            error_message=data.get('error_message', ""),
            series_resistance_est=_restore(data.get('series_resistance_est')),
            e_x=per_direction(data.get('e_x')),
            fit_quality=per_direction(data.get('fit_quality')),
            delta_e=_restore(data.get('delta_e')),
            lever_arm_est=_restore(data.get('lever_arm_est')),
            s_tc_curves=curves,
            s_tc_07_by_subband={int(n): _restore(v)
                                for n, v in (data.get('s_tc_07_by_subband') or {}).items()},
            s_tc_07=_restore(data.get('s_tc_07')),
            s_tc_sigma=_restore(data.get('s_tc_sigma')),
            kappa_07=_restore(data.get('kappa_07')),
            g_07=_restore(data.get('g_07')),
            riser_split=bool(data.get('riser_split', False)),
            split_peaks=list(data.get('split_peaks') or []),
            s_g_at={float(k): _restore(v) for k, v in (data.get('s_g_at') or {}).items()},
            s_g_curve=(_restore(s_g_curve['kappa']), _restore(s_g_curve['s_g'])),
            flags=dict(data.get('flags') or {}),
        )
