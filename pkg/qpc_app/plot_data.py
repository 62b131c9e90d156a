"""CSV export of the plot tables of a cohort run; rendering is left to external tools."""

import logging
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from cohort_stats import CohortReport, Correlation
from models import AnalysisResult
from trace_io import write_frame


logger = logging.getLogger(__name__)


def _curves(results: Sequence[AnalysisResult], which: str) -> pd.DataFrame:
    """Long-format S_TC (per subband) or S_G curves of good-fit devices."""
    frames = []
    for r in results:
        if not r.good_fit or r.device_id is None:
            continue
        ident = {'chip': r.device_id.chip, 'row': r.device_id.row, 'column': r.device_id.column,
                 'cooldown': r.cooldown, 'temperature_K': r.temperature}
        if which == "s_tc":
            for n, (kappa, values) in sorted(r.s_tc_curves.items()):
                frames.append(pd.DataFrame({**ident, 'subband': n, 'kappa': kappa,
                                            's_tc': values}))
        else:
            kappa, values = r.s_g_curve
            frames.append(pd.DataFrame({**ident, 'kappa': kappa, 's_g': values}))
    if not frames:
        return pd.DataFrame()
    return pd.concat(frames, ignore_index=True)


def _s_g_points(devices: pd.DataFrame, kappas: Sequence[float], x_column: str,
                x_name: str) -> pd.DataFrame:
    base = devices[devices['good_fit']]
    frames = []
    for k in kappas:
        column = f's_g_k{k:g}'
        if column not in base.columns:
            continue
        frames.append(pd.DataFrame({'kappa': k, x_name: base[x_column].to_numpy(),
                                    's_g': base[column].to_numpy()}))
    if not frames:
        return pd.DataFrame(columns=['kappa', x_name, 's_g'])
    return pd.concat(frames, ignore_index=True).dropna()


def _correlation_rows(report: CohortReport) -> pd.DataFrame:
    rows = []
    for family in ('s_g_vs_ex', 's_g_vs_inv_ue'):
        for k, corr in sorted(report.correlations.get(family, {}).items()):
            if isinstance(corr, Correlation):
                rows.append({'family': family, 'kappa': k, 'rho': corr.rho,
                             'ci_low': corr.ci_low, 'ci_high': corr.ci_high, 'n': corr.n})
    return pd.DataFrame(rows, columns=['family', 'kappa', 'rho', 'ci_low', 'ci_high', 'n'])


def export_plot_data(results: Sequence[AnalysisResult], report: CohortReport,
                     tables: Dict[str, pd.DataFrame], out_dir: Path,
                     s_g_kappas: Sequence[float] = (1.0, 2.0, 3.0, 4.0)) -> List[Path]:
    """
    Write one CSV per plot panel.

    Geometry panels carry both the per-device scatter and the per-class
    mean and standard deviation; the cooldown panels pair each device's
    values from the first two cooldowns.
    """
    out_dir = Path(out_dir)
    devices = tables['devices']
    good = devices[devices['good_fit']] if not devices.empty else devices
    geometry_columns = ['chip', 'row', 'column', 'cooldown', 'illuminated', 'width_um',
                        'length_um']

    ratio = good['u_e'].to_numpy(dtype=float) if not good.empty else np.array([])
    depth = pd.DataFrame({
        'chip': good.get('chip', pd.Series(dtype=int)).to_numpy(),
        'row': good.get('row', pd.Series(dtype=int)).to_numpy(),
        'column': good.get('column', pd.Series(dtype=int)).to_numpy(),
        'sqrt_u_e': np.sqrt(ratio),
        'depth_07': 1.0 - good.get('s_tc_07', pd.Series(dtype=float)).to_numpy(dtype=float),
        'riser_split': good.get('riser_split', pd.Series(dtype=bool)).to_numpy(),
    })
    yields = pd.DataFrame([{'cooldown': c, **v}
                           for c, v in sorted(report.yields_by_cooldown.items())],
                          columns=['cooldown', 'y_tc_07', 'y_rs_07', 'n_good_fit'])
    if good.empty:
        s_g_vs_ex = s_g_vs_inv_ue = pd.DataFrame()
        ex_geometry = delta_e_geometry = good
    else:
        s_g_vs_ex = _s_g_points(good, s_g_kappas, 'e_x_meV', 'e_x_meV')
        s_g_vs_inv_ue = _s_g_points(good.assign(inv_u_e=1.0 / ratio), s_g_kappas,
                                    'inv_u_e', 'inv_u_e')
        ex_geometry = good[geometry_columns + ['e_x_meV']]
        delta_e_geometry = good[geometry_columns + ['delta_e_meV']]

    panels = {
        'ex_cooldowns': tables['e_x_cooldowns'],
        'ex_geometry': ex_geometry,
        'ex_geometry_summary': tables['e_x_geometry'],
        'delta_e_cooldowns': tables['delta_e_cooldowns'],
        'delta_e_geometry': delta_e_geometry,
        'delta_e_geometry_summary': tables['delta_e_geometry'],
        'yields': yields,
        's_tc_curves': _curves(results, "s_tc"),
        'depth_vs_sqrt_ue': depth.dropna(subset=['sqrt_u_e', 'depth_07']),
        's_g_curves': _curves(results, "s_g"),
        's_g_vs_ex': s_g_vs_ex,
        's_g_vs_inv_ue': s_g_vs_inv_ue,
        'correlations': _correlation_rows(report),
    }
    paths = [write_frame(frame, out_dir / f"{name}.csv") for name, frame in panels.items()]
    logger.info("Wrote %d plot tables to %s", len(paths), out_dir)
    return paths
