"""Cohort statistics: yields, Pearson correlations, scatter tables and the cohort report."""

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import mannwhitneyu, pearsonr

from errors import StatisticsError
from models import AnalysisResult, _clean


logger = logging.getLogger(__name__)

DEFAULT_S_G_KAPPAS = (1.0, 2.0, 3.0, 4.0)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Sample Pearson coefficient over pairwise-complete entries.

    Raises:
        ValueError: If the inputs differ in length
        StatisticsError: If fewer than 3 complete pairs remain or an input is constant
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("Pearson inputs must have equal length")
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    if len(x) < 3:
        raise StatisticsError(f"Need at least 3 complete pairs, got {len(x)}", count=len(x))
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise StatisticsError("Correlation undefined for constant input", count=len(x))
    rho, _ = pearsonr(x, y)
    return float(np.clip(rho, -1.0, 1.0))


def bootstrap_interval(x: Sequence[float], y: Sequence[float], n_resamples: int = 1000,
                       confidence: float = 0.95, seed: int = 0) -> Tuple[float, float]:
    """Percentile bootstrap interval of the Pearson coefficient, resampling pairs."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    n = len(x)
    if n < 3:
        raise StatisticsError(f"Need at least 3 complete pairs, got {n}", count=n)
    rng = np.random.default_rng(seed)
    values = np.full(n_resamples, np.nan)
    for i in range(n_resamples):
        idx = rng.integers(0, n, n)
        xs, ys = x[idx], y[idx]
        if np.ptp(xs) > 0 and np.ptp(ys) > 0:
            values[i] = np.corrcoef(xs, ys)[0, 1]
    if np.all(np.isnan(values)):
        return float('nan'), float('nan')
    alpha = 1.0 - confidence
    lo, hi = np.nanpercentile(values, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(lo), float(hi)


@dataclass
class Correlation:
    """A Pearson coefficient with its bootstrap interval and sample size."""

    rho: Optional[float]
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    n: int = 0
    note: str = ""

    def to_dict(self) -> dict:
        return {'rho': self.rho, 'ci_low': self.ci_low, 'ci_high': self.ci_high,
                'n': self.n, 'note': self.note}


def correlate(x: Sequence[float], y: Sequence[float], seed: int = 0,
              n_resamples: int = 1000) -> Correlation:
    """Pearson coefficient plus interval; undefined correlations become a note."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = int(np.sum(np.isfinite(x) & np.isfinite(y)))
    try:
        rho = pearson(x, y)
    except StatisticsError as e:
        return Correlation(None, n=n, note=str(e))
    lo, hi = bootstrap_interval(x, y, n_resamples, seed=seed)
    return Correlation(rho, lo, hi, n)


def is_suppressed(result: AnalysisResult, sigma_factor: float = 3.0) -> bool:
    """S_TC^0.7 lies below 1 by more than ``sigma_factor`` propagated uncertainties."""
    s = result.s_tc_07
    sigma = result.s_tc_sigma if math.isfinite(result.s_tc_sigma) else 0.0
    return math.isfinite(s) and s < 1.0 - sigma_factor * sigma


def yields(results: Sequence[AnalysisResult], sigma_factor: float = 3.0) -> Tuple[float, float]:
    """
    Suppression and riser-splitting yields over good-fit devices.

    Splitting only counts on suppressed devices.

    Raises:
        ValueError: If no results are given
        StatisticsError: If none of them has a good fit
    """
    if not results:
        raise ValueError("Yields need at least one result")
    good = [r for r in results if r.good_fit]
    if not good:
        raise StatisticsError("No good-fit devices", count=0)
    suppressed = [r for r in good if is_suppressed(r, sigma_factor)]
    split = [r for r in suppressed if r.riser_split]
    return len(suppressed) / len(good), len(split) / len(good)


def device_table(results: Sequence[AnalysisResult],
                 s_g_kappas: Sequence[float] = DEFAULT_S_G_KAPPAS,
                 sigma_factor: float = 3.0) -> pd.DataFrame:
    """One row per analysed trace with the extracted scalars."""
    rows = []
    for r in results:
        dev = r.device_id
        row = {
            'chip': dev.chip if dev else 0,
            'row': dev.row if dev else 0,
            'column': dev.column if dev else 0,
            'cooldown': r.cooldown,
            'temperature_K': r.temperature,
            'illuminated': r.illuminated,
            'width_um': r.width,
            'length_um': r.length,
            'status': r.status,
            'good_fit': r.good_fit,
            'e_x_meV': r.e_x_first(),
            'delta_e_meV': r.delta_e,
            'u_e': r.u_e,
            's_tc_07': r.s_tc_07,
            's_tc_sigma': r.s_tc_sigma,
            'kappa_07': r.kappa_07,
            'g_07': r.g_07,
            'suppressed': r.good_fit and is_suppressed(r, sigma_factor),
            'riser_split': bool(r.riser_split),
        }
        for k in s_g_kappas:
            row[f's_g_k{k:g}'] = r.s_g_at.get(float(k), float('nan'))
        rows.append(row)
    return pd.DataFrame(rows)


def cooldown_scatter(table: pd.DataFrame, quantity: str) -> pd.DataFrame:
    """Per-device values of one quantity side by side for each cooldown."""
    base = table[(table['status'] == 'ok')]
    if base.empty:
        return pd.DataFrame(columns=['chip', 'row', 'column'])
    base = base[base['temperature_K'] == base['temperature_K'].min()]
    wide = base.pivot_table(index=['chip', 'row', 'column'], columns='cooldown',
                            values=quantity, aggfunc='first')
    wide.columns = [f'{quantity}_cooldown{c}' for c in wide.columns]
    return wide.reset_index()


def geometry_summary(table: pd.DataFrame, quantity: str) -> pd.DataFrame:
    """Mean, standard deviation and count of a quantity per cooldown, width and length."""
    base = table[(table['status'] == 'ok') & table['good_fit']]
    grouped = base.groupby(['cooldown', 'width_um', 'length_um'])[quantity]
    summary = grouped.agg(['mean', 'std', 'count']).reset_index()
    return summary.rename(columns={'mean': f'{quantity}_mean', 'std': f'{quantity}_std',
                                   'count': 'n'})


def temperature_table(table: pd.DataFrame) -> pd.DataFrame:
    """S_TC^0.7 and G_TC^0.7 per device at each measured temperature."""
    base = table[table['status'] == 'ok']
    if base.empty:
        return pd.DataFrame()
    wide = base.pivot_table(index=['chip', 'row', 'column', 'cooldown'],
                            columns='temperature_K', values=['s_tc_07', 'g_07'],
                            aggfunc='first')
    wide.columns = [f'{name}_T{temp:g}K' for name, temp in wide.columns]
    return wide.reset_index()


def correlation_suite(results: Sequence[AnalysisResult],
                      s_g_kappas: Sequence[float] = DEFAULT_S_G_KAPPAS,
                      min_devices: int = 10, seed: int = 0,
                      n_resamples: int = 1000) -> Dict[str, object]:
    """
    The three correlation families over good-fit devices with E_x and Delta E.

    Raises:
        StatisticsError: If fewer than ``min_devices`` devices qualify
    """
    eligible = [r for r in results
                if r.good_fit and math.isfinite(r.e_x_first()) and math.isfinite(r.u_e)]
    if len(eligible) < min_devices:
        raise StatisticsError(
            f"Correlations need {min_devices} good-fit devices with E_x and Delta E, "
            f"got {len(eligible)}", count=len(eligible))
    e_x = np.array([r.e_x_first() for r in eligible])
    u_e = np.array([r.u_e for r in eligible])
    depth = np.array([1.0 - r.s_tc_07 for r in eligible])
    suite: Dict[str, object] = {
        'n_devices': len(eligible),
        'depth_vs_sqrt_ue': correlate(depth, np.sqrt(u_e), seed, n_resamples),
        's_g_vs_ex': {},
        's_g_vs_inv_ue': {},
    }
    for i, k in enumerate(s_g_kappas):
        s_g = np.array([r.s_g_at.get(float(k), float('nan')) for r in eligible])
        suite['s_g_vs_ex'][float(k)] = correlate(s_g, e_x, seed + 2 * i + 1, n_resamples)
        suite['s_g_vs_inv_ue'][float(k)] = correlate(s_g, 1.0 / u_e, seed + 2 * i + 2,
                                                     n_resamples)
    return suite


def illumination_comparison(table: pd.DataFrame) -> Dict[str, dict]:
    """Mann-Whitney comparison of Delta E and E_x with and without illumination."""
    base = table[(table['status'] == 'ok') & table['good_fit']]
    dark = base[~base['illuminated'].astype(bool)]
    lit = base[base['illuminated'].astype(bool)]
    comparison = {}
    for quantity in ('delta_e_meV', 'e_x_meV'):
        a = dark[quantity].dropna().to_numpy()
        b = lit[quantity].dropna().to_numpy()
        entry = {'mean_dark': float(a.mean()) if len(a) else None,
                 'mean_illuminated': float(b.mean()) if len(b) else None,
                 'n_dark': int(len(a)), 'n_illuminated': int(len(b)), 'p_value': None}
        if len(a) >= 3 and len(b) >= 3:
            entry['p_value'] = float(mannwhitneyu(a, b, alternative='two-sided').pvalue)
        comparison[quantity] = entry
    return comparison


@dataclass
class CohortReport:
    """Counts, yields and correlations of one cohort run."""

    n_measured: int = 0
    n_failed: int = 0
    n_good_fit: int = 0
    n_suppressed: int = 0
    n_riser_split: int = 0
    y_tc_07: Optional[float] = None
    y_rs_07: Optional[float] = None
    yields_by_cooldown: Dict[int, Dict[str, float]] = field(default_factory=dict)
    correlations: Dict[str, object] = field(default_factory=dict)
    illumination: Dict[str, dict] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        correlations = {}
        for name, value in self.correlations.items():
            if isinstance(value, Correlation):
                correlations[name] = value.to_dict()
            elif isinstance(value, dict):
                correlations[name] = {repr(float(k)): v.to_dict() for k, v in value.items()}
            else:
                correlations[name] = value
        return _clean({
            'n_measured': self.n_measured,
            'n_failed': self.n_failed,
            'n_good_fit': self.n_good_fit,
            'n_suppressed': self.n_suppressed,
            'n_riser_split': self.n_riser_split,
            'y_tc_07': self.y_tc_07,
            'y_rs_07': self.y_rs_07,
            'yields_by_cooldown': self.yields_by_cooldown,
            'correlations': correlations,
            'illumination': self.illumination,
            'warnings': self.warnings,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def build_report(results: Sequence[AnalysisResult],
                 s_g_kappas: Sequence[float] = DEFAULT_S_G_KAPPAS,
                 sigma_factor: float = 3.0, min_devices: int = 10, seed: int = 0,
                 warnings: Optional[List[str]] = None
                 ) -> Tuple[CohortReport, Dict[str, pd.DataFrame]]:
    """
    Aggregate analysis results into a report and its CSV tables.

    Yields and correlations use the lowest measured temperature; the
    temperature table compares every temperature.

    Raises:
        StatisticsError: If there are no results at all
    """
    if not results:
        raise StatisticsError("No analysis results to aggregate", count=0)
    report = CohortReport(warnings=list(warnings or []))
    base_t = min(r.temperature for r in results)
    primary = [r for r in results if r.temperature == base_t]
    report.n_measured = len(primary)
    report.n_failed = sum(1 for r in primary if not r.ok)
    good = [r for r in primary if r.good_fit]
    report.n_good_fit = len(good)
    report.n_suppressed = sum(1 for r in good if is_suppressed(r, sigma_factor))
    report.n_riser_split = sum(1 for r in good if is_suppressed(r, sigma_factor) and r.riser_split)

    if good:
        report.y_tc_07, report.y_rs_07 = yields(primary, sigma_factor)
    for cooldown in sorted({r.cooldown for r in primary}):
        subset = [r for r in primary if r.cooldown == cooldown]
        try:
            y_tc, y_rs = yields(subset, sigma_factor)
        except StatisticsError:
            continue
        report.yields_by_cooldown[cooldown] = {'y_tc_07': y_tc, 'y_rs_07': y_rs,
                                               'n_good_fit': sum(r.good_fit for r in subset)}

    try:
        report.correlations = correlation_suite(primary, s_g_kappas, min_devices, seed)
    except StatisticsError as e:
        report.warnings.append(str(e))
        logger.warning("Correlations skipped: %s", e)

    table = device_table(results, s_g_kappas, sigma_factor)
    primary_table = table[table['temperature_K'] == base_t]
    report.illumination = illumination_comparison(primary_table)
    tables = {
        'devices': table,
        'e_x_cooldowns': cooldown_scatter(table, 'e_x_meV'),
        'delta_e_cooldowns': cooldown_scatter(table, 'delta_e_meV'),
        'e_x_geometry': geometry_summary(primary_table, 'e_x_meV'),
        'delta_e_geometry': geometry_summary(primary_table, 'delta_e_meV'),
        'temperature_comparison': temperature_table(table),
    }
    logger.info("Report: %d measured, %d good fits, y_tc=%s, y_rs=%s", report.n_measured,
                report.n_good_fit, report.y_tc_07, report.y_rs_07)
    return report, tables
