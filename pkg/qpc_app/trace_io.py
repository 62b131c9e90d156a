"""File formats: trace CSV with metadata header rows, JSON records and JSON-lines logs."""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from models import AnalysisResult, ConductanceTrace, DeviceId, _clean


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
HEADER_PREFIX = "# "
TRACE_COLUMNS = ('gate_voltage_V', 'g_sd_GQ')


FAMILY_COLUMNS = ('v_sd_dc_V', 'gate_voltage_V', 'g_sd_GQ', 'v_sd_internal_V')


def measurement_stem(device_id: Optional[DeviceId], cooldown: int, temperature: float,
                     illuminated: bool = False) -> str:
    """Common file stem of everything measured on one device in one pass."""
    key = device_id.key if device_id else "trace"
    light = "_lit" if illuminated else ""
    return f"{key}_cd{cooldown}_T{temperature * 1e3:.0f}mK{light}"


def trace_filename(trace: ConductanceTrace) -> str:
    """Deterministic file name from the trace metadata."""
    bias = f"_vdc{trace.v_sd_dc * 1e3:+.2f}mV" if trace.v_sd_dc else ""
    stem = measurement_stem(trace.device_id, trace.cooldown, trace.temperature,
                            trace.illuminated)
    return f"{stem}_{trace.sweep_direction}{bias}.csv"


def family_filename(trace: ConductanceTrace) -> str:
    stem = measurement_stem(trace.device_id, trace.cooldown, trace.temperature,
                            trace.illuminated)
    return f"{stem}_family.csv"


def _write_with_header(df: pd.DataFrame, meta: Dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        for key, value in meta.items():
            f.write(f"{HEADER_PREFIX}{key},{value}\n")
        df.to_csv(f, index=False)
    return path


def _read_with_header(path: PathLike) -> Tuple[Dict[str, Any], pd.DataFrame]:
    meta: Dict[str, Any] = {}
    n_header = 0
    with open(path, 'r', encoding='utf-8') as f:
        for line in f:
            if not line.startswith(HEADER_PREFIX):
                break
            key, _, value = line[len(HEADER_PREFIX):].rstrip('\n').partition(',')
            meta[key] = _parse_scalar(value)
            n_header += 1
    return meta, pd.read_csv(path, skiprows=n_header)


def write_trace(trace: ConductanceTrace, path: PathLike) -> Path:
    """Write metadata header rows followed by the gate_voltage_V, g_sd_GQ columns."""
    data = {TRACE_COLUMNS[0]: trace.gate_voltage, TRACE_COLUMNS[1]: trace.g_sd}
    if trace.v_sd_internal is not None and trace.v_sd_dc != 0:
        data['v_sd_internal_V'] = trace.v_sd_internal
    return _write_with_header(pd.DataFrame(data), trace.metadata(), path)


def write_family(family: Sequence[ConductanceTrace], path: PathLike) -> Path:
    """
    Write a bias family as one long-format CSV.

    The header rows carry the metadata of the first trace; each row holds
    the applied bias, gate voltage, conductance and internal bias.
    """
    if not family:
        raise ValueError("Bias family is empty")
    frames = []
    for trace in family:
        internal = (trace.v_sd_internal if trace.v_sd_internal is not None
                    else np.full(len(trace), np.nan))
        frames.append(pd.DataFrame({
            FAMILY_COLUMNS[0]: trace.v_sd_dc,
            FAMILY_COLUMNS[1]: trace.gate_voltage,
            FAMILY_COLUMNS[2]: trace.g_sd,
            FAMILY_COLUMNS[3]: internal,
        }))
    meta = family[0].metadata()
    meta.pop('v_sd_dc')
    return _write_with_header(pd.concat(frames, ignore_index=True), meta, path)


def _parse_scalar(value: str) -> Any:
    if value in ("True", "False"):
        return value == "True"
    try:
        number = float(value)
    except ValueError:
        return value
    return int(number) if number.is_integer() and "." not in value and "e" not in value else number


def read_trace(path: PathLike) -> ConductanceTrace:
    """
    Read a trace written by ``write_trace``.

    Raises:
        ValueError: If the file is not a trace file
    """
    path = Path(path)
    meta, df = _read_with_header(path)
    missing = [c for c in TRACE_COLUMNS if c not in df.columns]
    if missing:
        raise ValueError(f"{path.name}: missing columns {missing}")
    internal = df['v_sd_internal_V'].to_numpy() if 'v_sd_internal_V' in df.columns else None
    return _trace_from(meta, df[TRACE_COLUMNS[0]].to_numpy(), df[TRACE_COLUMNS[1]].to_numpy(),
                       float(meta.get('v_sd_dc', 0.0)), internal)


def _trace_from(meta: Dict[str, Any], gate: np.ndarray, g_sd: np.ndarray, v_sd_dc: float,
                internal: Optional[np.ndarray]) -> ConductanceTrace:
    device_id = None
    if meta.get('chip'):
        device_id = DeviceId(int(meta['chip']), int(meta['row']), int(meta['column']))
    lever_arm = meta.get('lever_arm')
    return ConductanceTrace(
        gate, g_sd, meta.get('sweep_direction', "forward"), float(meta.get('temperature_K', 0.0)),
        v_sd_dc, device_id, int(meta.get('cooldown', 1)), bool(meta.get('illuminated', False)),
        float(lever_arm) if isinstance(lever_arm, (int, float)) else None, internal)


def read_family(path: PathLike) -> List[ConductanceTrace]:
    """
    Read a bias family written by ``write_family``, in file order.

    Raises:
        ValueError: If the file is not a family file
    """
    path = Path(path)
    meta, df = _read_with_header(path)
    missing = [c for c in FAMILY_COLUMNS[:3] if c not in df.columns]
    if missing:
        raise ValueError(f"{path.name}: missing columns {missing}")
    family = []
    for bias, group in df.groupby(FAMILY_COLUMNS[0], sort=False):
        internal = group[FAMILY_COLUMNS[3]].to_numpy() if FAMILY_COLUMNS[3] in group else None
        if internal is not None and np.all(np.isnan(internal)):
            internal = None
        family.append(_trace_from(meta, group[FAMILY_COLUMNS[1]].to_numpy(),
                                  group[FAMILY_COLUMNS[2]].to_numpy(), float(bias), internal))
    return family


def dumps(data: Any) -> str:
    """Stable JSON text: sorted keys, NaN and infinities as null."""
    return json.dumps(_clean(data), indent=2, sort_keys=True, allow_nan=False)


def write_json(data: Any, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(data) + "\n", encoding='utf-8')
    return path


def read_json(path: PathLike) -> Any:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_result(result: AnalysisResult, path: PathLike) -> Path:
    return write_json(result.to_dict(), path)


def read_result(path: PathLike) -> AnalysisResult:
    """
    Load one AnalysisResult.

    Raises:
        ValueError: If the file is unreadable or not a result record
    """
    try:
        data = read_json(path)
        return AnalysisResult.from_dict(data)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, AttributeError) as e:
        raise ValueError(f"Corrupt result file {path}: {e}") from e


def write_jsonl(records: Iterable[Any], path: PathLike) -> Path:
    """One compact JSON object per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            data = record.to_dict() if hasattr(record, 'to_dict') else record
            f.write(json.dumps(_clean(data), sort_keys=True, allow_nan=False) + "\n")
    return path


def read_jsonl(path: PathLike) -> List[dict]:
    with open(path, 'r', encoding='utf-8') as f:
        return [json.loads(line) for line in f if line.strip()]


def write_frame(df: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    return path


def build_manifest(config: Dict[str, Any], command: str, devices: List[dict],
                   files: List[str]) -> Dict[str, Any]:
    """Manifest with the resolved configuration, root seed, devices and produced files."""
    return {
        'command': command,
        'seed': config.get('cohort', {}).get('seed'),
        'config': config,
        'devices': devices,
        'files': sorted(files),
    }


def relative_files(root: Path, paths: Iterable[Path]) -> List[str]:
    return [Path(p).relative_to(root).as_posix() for p in paths]

