"""
Ground-truth factory: interacting conductance traces and device cohorts.

Interacting transport is rendered through the effective Hartree barrier:
G_int(kappa) = G^0(kappa_h(kappa)), so dG_int/dkappa = TC^0 (1 - U_eff)
holds by construction and the plateaus are untouched.
"""

import logging
import zlib
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid

from config import SynthesisSettings, VanHoveSettings
from errors import DeviceDefectError, ModelValidityError
from models import (CohortConfig, ConductanceTrace, DeviceId, SaddleDevice, SaddlePotential,
                    ThermalState, SWEEP_DIRECTIONS)
from transport import G_Q, SaddleTransport, bias_shift, gate_from_kappa, thermal_energy
from vanhove import HartreeMap, LdosCurve, build_barrier, hartree_map, ldos_ridge


logger = logging.getLogger(__name__)


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for a named purpose and integer keys under one root seed."""
    entropy = [int(seed), zlib.crc32(name.encode('utf-8'))] + [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def derived_seed(seed: int, name: str, *keys: int) -> int:
    """Integer seed drawn from ``substream`` for APIs that take plain seeds."""
    return int(substream(seed, name, *keys).integers(0, 2 ** 31 - 1))


@dataclass
class IntrinsicConductance:
    """Two-terminal-free conductance of one device at one temperature."""

    theta: float
    u_e: float
    maps: List[Optional[HartreeMap]]

    @property
    def n_subbands(self) -> int:
        return len(self.maps)

    def effective_kappa(self, subband: int, kappa: np.ndarray) -> np.ndarray:
        """kappa_h of subband N, kappa measured from the first riser."""
        local = np.asarray(kappa, dtype=float) - (subband - 1) * self.u_e
        hmap = self.maps[subband - 1]
        return local if hmap is None else hmap.effective_kappa(local)

    def u_eff(self, kappa: np.ndarray, subband: int = 1) -> np.ndarray:
        local = np.asarray(kappa, dtype=float) - (subband - 1) * self.u_e
        hmap = self.maps[subband - 1]
        return np.zeros_like(local) if hmap is None else hmap.u_eff_at(local)

    def conductance(self, kappa: np.ndarray) -> np.ndarray:
        kappa = np.asarray(kappa, dtype=float)
        total = np.zeros_like(kappa)
        for n in range(1, self.n_subbands + 1):
            total = total + SaddleTransport.step_conductance(self.effective_kappa(n, kappa),
                                                             self.theta)
        return total

    def transconductance(self, kappa: np.ndarray) -> np.ndarray:
        """Exact dG_int/dkappa by the chain rule."""
        kappa = np.asarray(kappa, dtype=float)
        total = np.zeros_like(kappa)
        for n in range(1, self.n_subbands + 1):
            tc0 = SaddleTransport.step_transconductance(self.effective_kappa(n, kappa), self.theta)
            total = total + tc0 * (1.0 - self.u_eff(kappa, n))
        return total


class TraceSynthesizer:
    """Renders conductance traces for devices, caching LDOS ridges and Hartree maps."""

    def __init__(self, settings: Optional[SynthesisSettings] = None,
                 vanhove: Optional[VanHoveSettings] = None):
        self.settings = settings or SynthesisSettings()
        self.vanhove = vanhove or VanHoveSettings()
        self._ldos_cache: Dict[Tuple[float, float], LdosCurve] = {}
        self._map_cache: Dict[Tuple[float, float, float], HartreeMap] = {}

    def ldos_curve(self, e_x: float, temperature: float, e_y: float = 1.0) -> LdosCurve:
        """LDOS ridge of a barrier with curvature ``e_x``, cached by (E_x, T)."""
        key = (float(e_x), float(temperature))
        if key not in self._ldos_cache:
            vh = self.vanhove
            profile = build_barrier(e_x, e_y, 0.0, n_sites=vh.n_sites, hopping=vh.hopping,
                                    site_spacing=vh.site_spacing,
                                    effective_mass=vh.effective_mass,
                                    floor_depth=vh.floor_depth,
                                    central_half_width=vh.central_half_width,
                                    kappa_range=vh.kappa_range, broadening=vh.broadening)
            grid = np.linspace(*vh.kappa_range, vh.kappa_points)
            self._ldos_cache[key] = ldos_ridge(profile, 0.0, temperature, kappa_grid=grid)
        return self._ldos_cache[key]

    def interaction_for_peak(self, e_x: float, temperature: float, u_eff_max: float) -> float:
        """U (meV) that gives the first subband a ridge height of ``u_eff_max``."""
        if u_eff_max < 0:
            raise ValueError("Target U_eff must be >= 0")
        return u_eff_max / self.ldos_curve(e_x, temperature).ldos_max

    def _map(self, e_x: float, temperature: float, U: float) -> HartreeMap:
        key = (float(e_x), float(temperature), float(U))
        if key not in self._map_cache:
            curve = self.ldos_curve(e_x, temperature)
            self._map_cache[key] = hartree_map(
                None, U, 0.0, temperature, coordinate=self.settings.hartree_coordinate,
                curve=curve, n_points=self.vanhove.map_points)
        return self._map_cache[key]

    def intrinsic(self, dev: SaddleDevice, th: ThermalState) -> IntrinsicConductance:
        """
        Interacting conductance model of a device.

        Raises:
            ModelValidityError: If any subband's U_eff reaches 1
        """
        maps: List[Optional[HartreeMap]] = []
        for n in range(1, self.settings.n_subbands + 1):
            U_n = self.settings.weight(n) * dev.U
            maps.append(self._map(dev.e_x, th.temperature, U_n) if U_n > 0 else None)
        theta = thermal_energy(th.temperature) / dev.e_x
        return IntrinsicConductance(theta, dev.u_e, maps)

    def kappa_grid(self, dev: SaddleDevice, n_points: Optional[int] = None) -> np.ndarray:
        margin = self.settings.kappa_margin
        top = (self.settings.n_subbands - 1) * dev.u_e + margin
        return np.linspace(-margin, top, n_points or self.settings.gate_points)

    def _potential(self, dev: SaddleDevice, sweep: str) -> SaddlePotential:
        shift = self.settings.hysteresis_shift if sweep == "backward" else 0.0
        return SaddlePotential(dev.e_x, dev.e_y, dev.lever_arm, dev.v_riser + shift)

    def _internal_bias(self, model: IntrinsicConductance, kappa: np.ndarray, v_dc: float,
                       dev: SaddleDevice) -> np.ndarray:
        """
        Solve V_DC = V_SD + R_s I(V_SD) pointwise by fixed-point iteration.

        The current is G_Q (E_x/e) times the integral of G_int over the bias
        window, read from a dense antiderivative table.
        """
        r = dev.series_resistance * G_Q
        if r == 0:
            return np.full_like(kappa, v_dc)
        reach = abs(bias_shift(v_dc, dev.e_x)) + 0.1
        step = self.settings.antiderivative_step
        n = int(np.ceil((kappa[-1] - kappa[0] + 2 * reach) / step)) + 1
        dense = np.linspace(kappa[0] - reach, kappa[-1] + reach, n)
        phi = cumulative_trapezoid(model.conductance(dense), dense, initial=0.0)

        v_sd = np.full_like(kappa, v_dc)
        for _ in range(200):
            delta = bias_shift(v_sd, dev.e_x)
            window = np.interp(kappa + delta, dense, phi) - np.interp(kappa - delta, dense, phi)
            updated = v_dc - r * (dev.e_x / 1000.0) * window
            converged = np.max(np.abs(updated - v_sd)) < 1e-13
            v_sd = updated
            if converged:
                break
        return v_sd

    def synthesize_trace(self, dev: SaddleDevice, th: ThermalState, sweep: str = "forward",
                         v_sd_dc: float = 0.0, noise_sigma: Optional[float] = None,
                         rng_seed: int = 0, gate_points: Optional[int] = None) -> ConductanceTrace:
        """
        Render one measured trace.

        Args:
            dev: Device ground truth
            th: Thermal state
            sweep: "forward" (decreasing gate voltage) or "backward"
            v_sd_dc: Applied DC bias across device and series resistance (V)
            noise_sigma: Additive Gaussian noise (G_Q); settings default when None
            rng_seed: Seed of the noise generator
            gate_points: Gate grid size; settings default when None

        Raises:
            DeviceDefectError: If the device is nonfunctional
            ModelValidityError: If U_eff reaches 1 on any subband
        """
        if not dev.functional:
            raise DeviceDefectError(f"{dev.device_id.label} is nonfunctional")
        if sweep not in SWEEP_DIRECTIONS:
            raise ValueError(f"Unknown sweep direction: {sweep}")
        sigma = self.settings.noise_sigma if noise_sigma is None else noise_sigma
        if sigma < 0:
            raise ValueError("Noise sigma must be >= 0")

        model = self.intrinsic(dev, th)
        kappa = self.kappa_grid(dev, gate_points)
        if v_sd_dc == 0:
            v_internal = np.zeros_like(kappa)
            g_int = model.conductance(kappa)
        else:
            v_internal = self._internal_bias(model, kappa, v_sd_dc, dev)
            delta = bias_shift(v_internal, dev.e_x)
            g_int = 0.5 * (model.conductance(kappa + delta) + model.conductance(kappa - delta))

        r = dev.series_resistance * G_Q
        g_meas = g_int / (1.0 + r * g_int)
        if sigma > 0:
            g_meas = g_meas + np.random.default_rng(rng_seed).normal(0.0, sigma, len(kappa))

        gate = gate_from_kappa(kappa, self._potential(dev, sweep))
        if sweep == "forward":
            gate, g_meas, v_internal = gate[::-1], g_meas[::-1], v_internal[::-1]
        logger.debug("Synthesized %s %s sweep at %.3f K, V_DC=%.4f V",
                     dev.device_id.label, sweep, th.temperature, v_sd_dc)
        return ConductanceTrace(gate, g_meas, sweep, th.temperature, v_sd_dc, dev.device_id,
                                dev.cooldown, dev.illuminated, dev.lever_arm, v_internal)

    def bias_sweep_family(self, dev: SaddleDevice, th: ThermalState, v_sd_list: Sequence[float],
                          sweep: str = "forward", noise_sigma: Optional[float] = None,
                          rng_seed: int = 0,
                          gate_points: Optional[int] = None) -> List[ConductanceTrace]:
        """One trace per DC bias; trace k draws its noise from seed ``rng_seed + k``."""
        if len(v_sd_list) == 0:
            raise ValueError("Bias list must not be empty")
        return [self.synthesize_trace(dev, th, sweep, float(v), noise_sigma, rng_seed + k,
                                      gate_points)
                for k, v in enumerate(v_sd_list)]


def synthesize_trace(dev: SaddleDevice, th: ThermalState, sweep: str = "forward",
                     v_sd_dc: float = 0.0, noise_sigma: float = 0.005,
                     rng_seed: int = 0) -> ConductanceTrace:
    """Module-level shortcut with default settings."""
    return TraceSynthesizer().synthesize_trace(dev, th, sweep, v_sd_dc, noise_sigma, rng_seed)


def bias_sweep_family(dev: SaddleDevice, th: ThermalState, v_sd_list: Sequence[float],
                      noise_sigma: float = 0.005, rng_seed: int = 0) -> List[ConductanceTrace]:
    return TraceSynthesizer().bias_sweep_family(dev, th, v_sd_list, noise_sigma=noise_sigma,
                                                rng_seed=rng_seed)


def _draw_e_y(cfg: CohortConfig, rng: np.random.Generator, width: float, length: float) -> float:
    """Geometry model plus device noise, redrawn until positive."""
    base = cfg.ey_intercept - cfg.ey_length_slope * length - cfg.ey_width_slope * width
    for _ in range(1000):
        e_y = base + cfg.ey_noise_sigma * rng.standard_normal()
        if e_y > 0:
            return float(e_y)
    raise ModelValidityError(f"E_y geometry model stays non-positive at W={width}, L={length}")


def generate_cohort(cfg: CohortConfig, cooldown_index: int = 1, illuminated: bool = False,
                    chips: Optional[Sequence[int]] = None) -> List[SaddleDevice]:
    """
    Draw the devices of every chip for one cooldown.

    Device-fixed quantities (E_y, functional flag, series resistance) come
    from streams keyed by position only, so they repeat across cooldowns;
    E_x comes from a stream that also carries the cooldown index.

    Args:
        cfg: Cohort distribution parameters
        cooldown_index: Cooldown number (>= 1)
        illuminated: Multiply E_y by the illumination factor
        chips: Subset of chips to generate; all when None

    Returns:
        Devices in (chip, row, column) order
    """
    if cooldown_index < 1:
        raise ValueError("Cooldown index must be >= 1")
    chip_list = list(chips) if chips else list(range(1, cfg.n_chips + 1))
    size = cfg.grid_size
    devices = []
    for chip in chip_list:
        plan = cfg.plan_for(chip)
        for row in range(1, size + 1):
            for column in range(1, size + 1):
                width, length = plan.geometry(row, column)
                e_y = _draw_e_y(cfg, substream(cfg.seed, "device", chip, row, column),
                                width, length)
                if illuminated:
                    e_y *= cfg.illumination_factor
                ex_rng = substream(cfg.seed, "ex", chip, row, column, cooldown_index)
                e_x = float(cfg.ex_median * np.exp(cfg.ex_log_sigma * ex_rng.standard_normal()))
                functional = bool(substream(cfg.seed, "defect", chip, row, column).random()
                                  >= cfg.defect_probability)
                rs_rng = substream(cfg.seed, "rs", chip, row, column)
                r_s = max(0.0, cfg.series_resistance
                          + cfg.series_resistance_sigma * rs_rng.standard_normal())
                U = cfg.u_coefficient * (np.sqrt(e_y) if cfg.u_mode == "sqrt_ey" else 1.0)
                devices.append(SaddleDevice(
                    DeviceId(chip, row, column), width, length, e_x, e_y, cfg.lever_arm,
                    float(U), r_s, functional, cfg.v_riser, cooldown_index, illuminated))
    logger.info("Generated %d devices (%d functional) for cooldown %d%s",
                len(devices), sum(d.functional for d in devices), cooldown_index,
                ", illuminated" if illuminated else "")
    return devices
