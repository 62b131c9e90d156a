"""
Extraction pipeline for conductance traces.

Series-resistance calibration, lower-half-step E_x fits, the kappa
transform, transconductance suppression metrics, riser splitting and
DC-bias spectroscopy.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import least_squares
from scipy.signal import find_peaks, peak_widths

from config import AnalysisSettings
from data_processor import DataProcessor
from errors import (CalibrationError, ExtractionError, FitError, QpcError, TransformError)
from models import AnalysisResult, ConductanceTrace, FitResult, FitWindow
from transport import G_Q, SaddleTransport, thermal_energy


logger = logging.getLogger(__name__)

# systematic floor on the S_TC uncertainty (smoothing bias of noiseless traces)
S_TC_SIGMA_FLOOR = 0.005


@dataclass
class KappaTrace:
    """Conductance resampled on a uniform kappa grid with kappa = 0 at the riser midpoint."""

    kappa: np.ndarray
    g: np.ndarray
    e_x: float
    subband: int = 1
    step: float = 0.02
    v_half: float = 0.0
    lever_arm: float = 1.0
    temperature: float = 0.0

    @property
    def offset(self) -> int:
        return self.subband - 1

    def gate_to_kappa(self, gate_voltage) -> np.ndarray:
        gate = np.asarray(gate_voltage, dtype=float)
        return self.lever_arm * 1e3 * (gate - self.v_half) / self.e_x


@dataclass
class SuppressionMetrics:
    """S_TC and S_G of one riser with the location of the deepest suppression."""

    kappa: np.ndarray
    tc: np.ndarray
    tc0: np.ndarray
    s_tc: np.ndarray
    s_g: np.ndarray
    masked: np.ndarray
    s_tc_07: float = float('nan')
    kappa_07: float = float('nan')
    g_07: float = float('nan')
    sigma: float = float('nan')
    s_g_at: Dict[float, float] = field(default_factory=dict)


@dataclass
class SpectroscopyResult:
    """Subband spacing from the crossing of tracked transconductance peaks."""

    delta_e: float
    v_star: float
    lever_arm: float
    n_points: int
    low_line: Tuple[float, float]
    high_line: Tuple[float, float]
    bias_points: List[Tuple[float, float, float, float]] = field(default_factory=list)


def reference_conductance(kappa: np.ndarray, theta: float, subband: int = 1,
                          u_e: Optional[float] = None,
                          n_subbands: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Noninteracting G^0 and TC^0 around the riser of ``subband``.

    Kappa is measured from that riser. Without a known U_E the lower
    subbands count as a flat offset and higher ones are ignored.
    """
    kappa = np.asarray(kappa, dtype=float)
    if u_e is None or not np.isfinite(u_e):
        g0 = (subband - 1) + SaddleTransport.step_conductance(kappa, theta)
        return g0, SaddleTransport.step_transconductance(kappa, theta)
    g0 = np.zeros_like(kappa)
    tc0 = np.zeros_like(kappa)
    for m in range(1, max(n_subbands, subband) + 1):
        local = kappa + (subband - m) * u_e
        g0 = g0 + SaddleTransport.step_conductance(local, theta)
        tc0 = tc0 + SaddleTransport.step_transconductance(local, theta)
    return g0, tc0


class TraceAnalyzer:
    """Runs the extraction steps on single traces and bias families."""

    def __init__(self, settings: Optional[AnalysisSettings] = None):
        self.settings = settings or AnalysisSettings()

    # -- calibration -----------------------------------------------------

    def calibrate_series_resistance(self, trace: ConductanceTrace
                                    ) -> Tuple[float, ConductanceTrace]:
        """
        Align the first plateau to 1 G_Q.

        Plateau samples have raw conductance within the plateau range and a
        smoothed slope that is small against the steepest riser.

        Returns:
            (R_s in ohms, corrected trace)

        Raises:
            CalibrationError: If no first plateau is found
        """
        s = self.settings
        v, g = trace.ascending()
        if len(g) < s.plateau_window:
            raise CalibrationError(f"Trace of {len(g)} samples is too short to find a plateau")
        smooth = DataProcessor.smooth(g, s.plateau_window, s.smoothing_order)
        slope = np.abs(np.gradient(smooth, v))
        lo, hi = s.plateau_g_range
        in_range = (g >= lo) & (g <= hi)
        if not np.any(in_range):
            raise CalibrationError("Trace never reaches the first plateau")

        step = float(np.mean(np.diff(v)))
        noise = DataProcessor.robust_noise(g - smooth)
        slope_noise = noise * DataProcessor.derivative_noise_gain(s.plateau_window,
                                                                  s.smoothing_order, step)
        s_max = float(slope.max())
        threshold = min(0.1 * s_max,
                        max(4.0 * float(slope[in_range].min()), 3.0 * slope_noise, 0.01 * s_max))
        plateau = in_range & (slope <= threshold)
        if plateau.sum() < s.min_plateau_samples:
            raise CalibrationError(
                f"Only {int(plateau.sum())} plateau samples found, need {s.min_plateau_samples}")

        g_med = float(np.median(g[plateau]))
        r = max(0.0, 1.0 / g_med - 1.0)
        r_s = r / G_Q
        logger.debug("Plateau median %.5f G_Q over %d samples: R_s = %.1f ohm",
                     g_med, int(plateau.sum()), r_s)
        return r_s, self.correct_series_resistance(trace, r_s)

    @staticmethod
    def correct_series_resistance(trace: ConductanceTrace, r_s: float) -> ConductanceTrace:
        """Invert the two-terminal division G_meas = G / (1 + R_s G)."""
        r = r_s * G_Q
        denominator = 1.0 - r * trace.g_sd
        if np.any(denominator <= 0):
            raise CalibrationError("Series resistance exceeds the measured resistance")
        return ConductanceTrace(trace.gate_voltage.copy(), trace.g_sd / denominator,
                                trace.sweep_direction, trace.temperature, trace.v_sd_dc,
                                trace.device_id, trace.cooldown, trace.illuminated,
                                trace.lever_arm, trace.v_sd_internal)

    # -- E_x fit ---------------------------------------------------------

    def _lever_arm(self, trace: ConductanceTrace, lever_arm: Optional[float]) -> float:
        for candidate in (lever_arm, self.settings.lever_arm, trace.lever_arm):
            if candidate is not None and np.isfinite(candidate):
                return float(candidate)
        raise FitError("Lever arm unknown: set it in the analysis settings or trace metadata")

    def fit_window_indices(self, v: np.ndarray, smooth: np.ndarray, subband: int,
                           window: FitWindow) -> Tuple[int, int]:
        """Contiguous lower-half-step run of the given subband, as an index range."""
        offset = subband - 1
        v_up = DataProcessor.level_crossing(v, smooth, offset + window.upper)
        if v_up is None:
            raise FitError(f"Trace never reaches {offset + window.upper:.2f} G_Q")
        top = int(np.searchsorted(v, v_up, side='right')) - 1
        bottom = top
        while bottom > 0 and smooth[bottom - 1] >= offset + window.lower:
            bottom -= 1
        return bottom, top

    def fit_ex(self, trace: ConductanceTrace, subband: int = 1,
               window: Optional[FitWindow] = None,
               lever_arm: Optional[float] = None) -> FitResult:
        """
        Least-squares fit of the saddle-point step to the lower half step.

        Free parameters are E_x and the riser voltage; the lever arm is
        taken from the argument, the settings or the trace metadata.

        Raises:
            ValueError: If the subband index is below 1
            FitError: If the window is too small, the lever arm is unknown
                or no restart converges
        """
        if subband < 1:
            raise ValueError(f"Subband index must be >= 1, got {subband}")
        s = self.settings
        window = window or s.fit_window
        alpha = self._lever_arm(trace, lever_arm)
        v, g = trace.ascending()
        if len(g) < s.smoothing_window:
            raise FitError("Trace shorter than the smoothing window")
        smooth = DataProcessor.smooth(g, s.smoothing_window, s.smoothing_order)
        bottom, top = self.fit_window_indices(v, smooth, subband, window)
        n_points = top - bottom + 1
        if n_points < s.min_fit_points:
            raise FitError(f"Only {n_points} samples in the fit window, need {s.min_fit_points}")

        v_fit, g_fit = v[bottom:top + 1], g[bottom:top + 1]
        offset = subband - 1
        k_t = thermal_energy(trace.temperature)
        v_half = DataProcessor.level_crossing(v, smooth, offset + 0.5)
        v0 = v_half if v_half is not None else float(v_fit[-1])

        def model(e_x, v_r):
            kappa = alpha * 1e3 * (v_fit - v_r) / e_x
            return offset + SaddleTransport.step_conductance(kappa, k_t / e_x)

        fixed = s.fixed_ex
        lo, hi = s.ex_bounds
        if fixed is not None:
            solution = least_squares(lambda p: model(fixed, p[0]) - g_fit, [v0], method='trf',
                                     x_scale='jac')
            if not solution.success:
                raise FitError(f"Riser fit failed: {solution.message}")
            e_x, v_r, residual = fixed, float(solution.x[0]), solution.fun
        else:
            slope = np.gradient(DataProcessor.smooth(g, s.smoothing_window, s.smoothing_order), v)
            peak = float(np.max(slope[bottom:top + 1]))
            if peak <= 0:
                raise FitError("Conductance does not rise inside the fit window")
            e0 = float(np.clip(0.5 * np.pi * alpha * 1e3 / peak, lo, hi))
            best = None
            for factor in s.restart_factors:
                start = float(np.clip(e0 * factor, lo * (1 + 1e-9), hi * (1 - 1e-9)))
                try:
                    solution = least_squares(lambda p: model(p[0], p[1]) - g_fit, [start, v0],
                                             bounds=([lo, -np.inf], [hi, np.inf]),
                                             method='trf', x_scale='jac')
                except ValueError as e:
                    logger.debug("Restart at E_x=%.4f failed: %s", start, e)
                    continue
                if solution.success and (best is None or solution.cost < best.cost):
                    best = solution
            if best is None:
                raise FitError("E_x fit did not converge after restarts")
            e_x, v_r, residual = float(best.x[0]), float(best.x[1]), best.fun

        rms = float(np.sqrt(np.mean(residual ** 2)))
        at_bound = fixed is None and bool(np.isclose(e_x, [lo, hi], rtol=1e-6).any())
        good = rms < s.good_fit_rms and not at_bound
        logger.debug("Subband %d fit: E_x=%.5f meV, V_r=%.6f V, rms=%.2e over %d points",
                     subband, e_x, v_r, rms, n_points)
        return FitResult(subband, e_x, v_r, alpha, rms, n_points, bool(good), bool(at_bound))

    # -- kappa domain ----------------------------------------------------

    def to_kappa(self, trace: ConductanceTrace, fit: FitResult) -> KappaTrace:
        """
        Resample onto a uniform kappa grid with kappa = 0 at the half-step crossing.

        Raises:
            TransformError: If the trace never crosses the half step
        """
        s = self.settings
        v, g = trace.ascending()
        smooth = DataProcessor.smooth(g, s.smoothing_window, s.smoothing_order)
        level = (fit.subband - 1) + 0.5
        v_half = DataProcessor.level_crossing(v, smooth, level)
        if v_half is None:
            raise TransformError(f"Trace never crosses {level:.1f} G_Q")
        kappa_raw = fit.lever_arm * 1e3 * (v - v_half) / fit.e_x
        step = s.kappa_step
        first = int(np.ceil(kappa_raw[0] / step - 1e-9))
        last = int(np.floor(kappa_raw[-1] / step + 1e-9))
        grid = step * np.arange(first, last + 1)
        grid = grid[(grid >= kappa_raw[0]) & (grid <= kappa_raw[-1])]
        resampled = DataProcessor.resample_uniform(kappa_raw, g, grid)
        return KappaTrace(grid, resampled, fit.e_x, fit.subband, step, v_half, fit.lever_arm,
                          trace.temperature)

    def transconductance_noise(self, kt: KappaTrace) -> float:
        """Standard deviation of the transconductance from the trace noise level."""
        s = self.settings
        noise = DataProcessor.noise_level(kt.g, s.smoothing_window, s.smoothing_order)
        return DataProcessor.derivative_noise_gain(s.smoothing_window, s.smoothing_order,
                                                   kt.step) * noise

    def transconductance(self, kt: KappaTrace) -> np.ndarray:
        """Smoothed dG/dkappa.

        Raises:
            ValueError: If the smoothing window exceeds the trace
        """
        s = self.settings
        return DataProcessor.smoothed_derivative(kt.kappa, kt.g, s.smoothing_window,
                                                 s.smoothing_order)

    def suppression_metrics(self, kt: KappaTrace, tc: np.ndarray, fit: FitResult,
                            u_e: Optional[float] = None) -> SuppressionMetrics:
        """
        S_TC = TC_SD / TC^0 and S_G = G_SD / G^0 on the kappa grid.

        With the "matched" reference TC^0 is read where the fitted G^0
        equals the smoothed measured conductance; "aligned" uses the same
        kappa. Points where the reference falls below its floor are masked.
        """
        s = self.settings
        theta = thermal_energy(kt.temperature) / fit.e_x
        kappa_r = fit.lever_arm * 1e3 * (fit.v_riser - kt.v_half) / fit.e_x
        local = kt.kappa - kappa_r
        n_ref = s.n_subbands
        g0_aligned, tc0_aligned = reference_conductance(local, theta, kt.subband, u_e, n_ref)
        smooth = DataProcessor.smooth(kt.g, s.smoothing_window, s.smoothing_order)

        if s.reference == "matched":
            table = np.linspace(-6.0, 6.0, 6001)
            g_tab, tc_tab = reference_conductance(table, theta, kt.subband, u_e, n_ref)
            g_tab = np.maximum.accumulate(g_tab)
            inside = (smooth > g_tab[0]) & (smooth < g_tab[-1])
            kappa_ref = np.interp(smooth, g_tab, table)
            tc0 = np.where(inside, np.interp(kappa_ref, table, tc_tab), 0.0)
        else:
            tc0 = tc0_aligned

        masked = ~(tc0 >= s.tc_floor)
        s_tc = np.divide(tc, tc0, out=np.full_like(tc, np.nan), where=~masked)
        g_ok = g0_aligned > s.g_floor
        s_g = np.divide(kt.g, g0_aligned, out=np.full_like(kt.g, np.nan), where=g_ok)

        metrics = SuppressionMetrics(kt.kappa, tc, tc0, s_tc, s_g, masked)
        lo, hi = s.riser_window
        g_lo, g_hi = s.g_window
        rel = smooth - kt.offset
        candidates = ((kt.kappa >= lo) & (kt.kappa <= hi) & (rel >= g_lo) & (rel <= g_hi)
                      & np.isfinite(s_tc))
        if np.any(candidates):
            search = np.where(candidates, s_tc, np.inf)
            i = int(np.argmin(search))
            metrics.s_tc_07 = float(s_tc[i])
            metrics.kappa_07 = float(kt.kappa[i])
            metrics.g_07 = float(smooth[i])
            propagated = self.transconductance_noise(kt) / tc0[i]
            metrics.sigma = float(np.hypot(propagated, S_TC_SIGMA_FLOOR))

        for k in s.s_g_kappas:
            finite = np.isfinite(s_g)
            if kt.kappa[0] <= k <= kt.kappa[-1] and finite.any():
                metrics.s_g_at[k] = float(np.interp(k, kt.kappa[finite], s_g[finite]))
            else:
                metrics.s_g_at[k] = float('nan')
        return metrics

    def detect_riser_splitting(self, kt: KappaTrace, tc: np.ndarray,
                               sigma_tc: float = 0.0) -> Tuple[bool, List[float]]:
        """
        Look for two or more prominent transconductance maxima on one riser.

        The window is the contiguous run around the half-step crossing where
        the smoothed conductance stays inside the split range.
        """
        s = self.settings
        smooth = DataProcessor.smooth(kt.g, s.smoothing_window, s.smoothing_order) - kt.offset
        lo, hi = s.split_g_range
        above = np.flatnonzero(smooth >= 0.5)
        if len(above) == 0:
            return False, []
        left = right = int(above[0])
        while left > 0 and smooth[left - 1] >= lo:
            left -= 1
        while right < len(smooth) - 1 and smooth[right + 1] <= hi:
            right += 1
        window = tc[left:right + 1]
        if len(window) < 3 or not np.any(np.isfinite(window)):
            return False, []
        prominence = max(s.prominence_fraction * float(np.nanmax(window)),
                         s.prominence_sigma * sigma_tc)
        peaks, _ = find_peaks(window, prominence=prominence)
        positions = [float(kt.kappa[left + p]) for p in peaks]
        return len(peaks) >= 2, positions

    # -- device pass -----------------------------------------------------

    def analyze_device(self, forward: ConductanceTrace, backward: Optional[ConductanceTrace] = None,
                       family: Optional[Sequence[ConductanceTrace]] = None,
                       width: Optional[float] = None,
                       length: Optional[float] = None) -> AnalysisResult:
        """
        Full extraction for one device; pipeline failures become an error record.
        """
        result = AnalysisResult(forward.device_id, forward.cooldown, forward.temperature,
                                forward.illuminated, width, length)
        try:
            self._analyze_into(result, forward, backward, family)
        except QpcError as e:
            result.status = "error"
            result.error_kind = e.kind
            result.error_message = str(e)
            logger.warning("%s: %s error: %s",
                           forward.device_id.label if forward.device_id else "trace", e.kind, e)
        return result

    def _analyze_into(self, result: AnalysisResult, forward: ConductanceTrace,
                      backward: Optional[ConductanceTrace],
                      family: Optional[Sequence[ConductanceTrace]]):
        s = self.settings
        r_s, corrected = self.calibrate_series_resistance(forward)
        result.series_resistance_est = r_s
        result.flags['calibrated'] = True

        spectro_alpha = None
        if family:
            try:
                spectro = extract_subband_spacing(family, r_s, settings=s)
                result.delta_e = spectro.delta_e
                result.lever_arm_est = spectro.lever_arm
                spectro_alpha = spectro.lever_arm
                result.flags['spectroscopy'] = True
            except ExtractionError as e:
                result.flags['spectroscopy'] = False
                logger.info("%s: spectroscopy skipped: %s",
                            forward.device_id.label if forward.device_id else "trace", e)
        known = s.lever_arm is not None or forward.lever_arm is not None
        lever_arm = None if known else spectro_alpha

        traces = {'forward': corrected}
        if backward is not None:
            traces['backward'] = self.correct_series_resistance(backward, r_s)
        fits: Dict[int, FitResult] = {}
        for direction, trace in traces.items():
            result.e_x[direction] = {}
            result.fit_quality[direction] = {}
            for n in range(1, s.n_subbands + 1):
                try:
                    fit = self.fit_ex(trace, n, lever_arm=lever_arm)
                except FitError:
                    if direction == 'forward' and n == 1:
                        raise
                    continue
                result.e_x[direction][n] = fit.e_x
                result.fit_quality[direction][n] = fit.rms
                if direction == 'forward':
                    fits[n] = fit
        first = fits[1]
        result.flags['good_fit'] = first.good_fit
        result.flags['at_bound'] = first.at_bound

        u_e = result.delta_e / first.e_x if np.isfinite(result.delta_e) else None
        for n, fit in fits.items():
            try:
                kt = self.to_kappa(corrected, fit)
            except TransformError:
                if n == 1:
                    raise
                continue
            tc = self.transconductance(kt)
            metrics = self.suppression_metrics(kt, tc, fit, u_e)
            result.s_tc_curves[n] = (kt.kappa.tolist(), metrics.s_tc.tolist())
            result.s_tc_07_by_subband[n] = metrics.s_tc_07
            if n != 1:
                continue
            result.s_tc_07 = metrics.s_tc_07
            result.kappa_07 = metrics.kappa_07
            result.g_07 = metrics.g_07
            result.s_tc_sigma = metrics.sigma
            result.s_g_at = dict(metrics.s_g_at)
            result.s_g_curve = (kt.kappa.tolist(), metrics.s_g.tolist())
            found = np.isfinite(metrics.s_tc_07)
            result.flags['suppression_window'] = bool(found)
            result.flags['suppressed'] = bool(
                found and metrics.s_tc_07 < 1.0 - s.suppression_sigma * metrics.sigma)
            split, peaks = self.detect_riser_splitting(kt, tc, self.transconductance_noise(kt))
            result.riser_split = split
            result.split_peaks = peaks
            result.flags['riser_split'] = split


def correct_dc_bias(v_dc: float, family: Sequence[ConductanceTrace], r_s: float) -> np.ndarray:
    """
    Internal bias V_SD = V_DC (1 - R_s G_avg) for every gate point of a family.

    G_avg is the measured conductance averaged over the applied bias from 0
    to V_DC by the trapezoid rule over the family's biases of the same sign.

    Raises:
        ValueError: For an empty family, mismatched gate grids, a missing
            zero-bias trace or a bias beyond the family's range
    """
    if not family:
        raise ValueError("Bias family is empty")
    gate = family[0].gate_voltage
    for trace in family:
        if trace.gate_voltage.shape != gate.shape or not np.allclose(trace.gate_voltage, gate):
            raise ValueError("All family traces must share the gate grid")
    if v_dc == 0:
        return np.zeros_like(gate)
    sign = np.sign(v_dc)
    same_side = [t for t in family if t.v_sd_dc == 0 or np.sign(t.v_sd_dc) == sign]
    same_side.sort(key=lambda t: abs(t.v_sd_dc))
    if not same_side or same_side[0].v_sd_dc != 0:
        raise ValueError("Bias family needs a zero-bias trace")
    biases = np.array([abs(t.v_sd_dc) for t in same_side])
    rows = np.vstack([t.g_sd for t in same_side])
    target = abs(v_dc)
    if target > biases[-1] + 1e-15:
        raise ValueError(f"V_DC={v_dc} lies outside the family's bias range")
    below = biases < target
    x = np.append(biases[below], target)
    last = np.array([np.interp(target, biases, rows[:, j]) for j in range(rows.shape[1])])
    y = np.vstack([rows[below], last])
    g_avg = trapezoid(y, x, axis=0) / target
    return v_dc * (1.0 - r_s * G_Q * g_avg)


def extract_subband_spacing(family: Sequence[ConductanceTrace], r_s: float = 0.0,
                            subband: int = 1,
                            settings: Optional[AnalysisSettings] = None) -> SpectroscopyResult:
    """
    Subband spacing Delta E_{N,N+1} from DC-bias spectroscopy.

    The upper peak of riser N and the lower peak of riser N+1 are tracked
    between the zero-bias risers, starting at zero bias and stopping at the
    first bias that does not show exactly two peaks. Points where the peaks
    are not resolved from each other or from the zero-bias risers are
    dropped. Straight lines through the two loci intersect at eV* = Delta E.

    Raises:
        ExtractionError: If the family cannot resolve a crossing
    """
    s = settings or AnalysisSettings()
    traces = sorted([t for t in family if t.v_sd_dc >= 0], key=lambda t: t.v_sd_dc)
    if len(traces) < 2 or traces[0].v_sd_dc != 0:
        raise ExtractionError("Spectroscopy needs a zero-bias trace and at least one finite bias")

    r = r_s * G_Q

    def corrected_tc(trace):
        v, g = trace.ascending()
        g = g / (1.0 - r * g)
        return v, DataProcessor.smoothed_derivative(v, g, s.smoothing_window, s.smoothing_order), \
            DataProcessor.smooth(g, s.smoothing_window, s.smoothing_order)

    v, tc_zero, g_zero = corrected_tc(traces[0])
    v_n = DataProcessor.level_crossing(v, g_zero, subband - 0.5)
    v_next = DataProcessor.level_crossing(v, g_zero, subband + 0.5)
    if v_n is None or v_next is None:
        raise ExtractionError(f"Zero-bias trace does not show risers {subband} and {subband + 1}")
    step = float(np.mean(np.diff(v)))
    peak_index = int(np.argmin(np.abs(v - v_n)))
    lo_idx = max(peak_index - 5 * s.smoothing_window, 0)
    hi_idx = min(peak_index + 5 * s.smoothing_window, len(v) - 1)
    peak_index = lo_idx + int(np.argmax(tc_zero[lo_idx:hi_idx + 1]))
    width = float(peak_widths(tc_zero, [peak_index], rel_height=0.5)[0][0]) * step
    gap = s.peak_separation * width

    points = []
    started = False
    for trace in traces[1:]:
        v_b, tc_b, _ = corrected_tc(trace)
        inside = (v_b > v_n) & (v_b < v_next)
        region = np.flatnonzero(inside)
        if len(region) < 3:
            break
        segment = tc_b[region]
        prominence = s.prominence_fraction * float(np.max(segment))
        peaks, _ = find_peaks(segment, prominence=prominence)
        if len(peaks) != 2:
            if started:
                break
            continue
        started = True
        p_low, p_high = float(v_b[region[peaks[0]]]), float(v_b[region[peaks[1]]])
        internal = correct_dc_bias(trace.v_sd_dc, traces, r_s)
        gate_sorted, internal_sorted = trace.gate_voltage, internal
        if trace.sweep_direction == "forward":
            gate_sorted, internal_sorted = gate_sorted[::-1], internal_sorted[::-1]
        b_low = float(np.interp(p_low, gate_sorted, internal_sorted))
        b_high = float(np.interp(p_high, gate_sorted, internal_sorted))
        resolved = (2 * (p_low - v_n) >= gap and p_high - p_low >= gap
                    and 2 * (v_next - p_high) >= gap)
        if resolved:
            points.append((b_low, p_low, b_high, p_high))

    if len(points) < 3:
        raise ExtractionError(f"Only {len(points)} resolved bias points, need 3")
    data = np.array(points)
    b1, a1 = np.polyfit(data[:, 0], data[:, 1], 1)
    b2, a2 = np.polyfit(data[:, 2], data[:, 3], 1)
    if b1 - b2 <= 0:
        raise ExtractionError("Tracked peaks do not converge")
    v_star = (a2 - a1) / (b1 - b2)
    v_max = max(abs(t.v_sd_dc) for t in traces)
    if not 0 < v_star <= v_max:
        raise ExtractionError(
            f"Peak crossing at {v_star * 1e3:.3f} mV lies outside the family "
            f"(max {v_max * 1e3:.3f} mV)")
    logger.debug("Spectroscopy: V*=%.4f mV from %d points", v_star * 1e3, len(points))
    return SpectroscopyResult(1e3 * v_star, v_star, 1.0 / (b1 - b2), len(points),
                              (float(a1), float(b1)), (float(a2), float(b2)), points)
