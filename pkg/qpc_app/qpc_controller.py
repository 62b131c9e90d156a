"""
Run controller for the QPC toolkit.
Handles cohort synthesis, MUX scheduling, per-device analysis, reporting and
every file a command produces.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from analysis import TraceAnalyzer, extract_subband_spacing
from cohort_stats import CohortReport, build_report
from config import RunConfig
from errors import ConfigurationError, QpcError
from models import AnalysisResult, ConductanceTrace, SaddleDevice, ThermalState
from mux import BranchFault, MuxAddress, MuxTree, schedule_sweep
from plot_data import export_plot_data
from synthesis import TraceSynthesizer, derived_seed, generate_cohort
from trace_io import (build_manifest, family_filename, measurement_stem, read_family,
                      read_json, read_result, read_trace, relative_files, trace_filename,
                      write_family, write_frame, write_json, write_jsonl, write_result,
                      write_trace)


logger = logging.getLogger(__name__)

TRACE_DIR = "traces"
FAMILY_DIR = "families"
RESULT_DIR = "results"
REPORT_DIR = "report"
PLOT_DIR = "plots"
INDEX_FILE = "index.json"
MANIFEST_FILE = "manifest.json"
MUX_LOG_FILE = "mux_log.jsonl"

Measurement = Tuple[ConductanceTrace, ConductanceTrace, List[ConductanceTrace]]


def noise_seed(seed: int, purpose: str, device: SaddleDevice, temperature: float) -> int:
    """Noise seed of one trace kind for one device, cooldown and temperature."""
    d = device.device_id
    return derived_seed(seed, purpose, d.chip, d.row, d.column, device.cooldown,
                        int(round(temperature * 1e6)))


def synthesize_measurement(device: SaddleDevice, temperature: float,
                           synthesizer: TraceSynthesizer, seed: int) -> Measurement:
    """Forward and backward zero-bias sweeps plus the forward bias family."""
    th = ThermalState(temperature)
    settings = synthesizer.settings
    forward = synthesizer.synthesize_trace(
        device, th, "forward", rng_seed=noise_seed(seed, "noise-forward", device, temperature))
    backward = synthesizer.synthesize_trace(
        device, th, "backward", rng_seed=noise_seed(seed, "noise-backward", device, temperature))
    family = synthesizer.bias_sweep_family(
        device, th, settings.bias_list(),
        rng_seed=noise_seed(seed, "noise-family", device, temperature),
        gate_points=settings.family_gate_points)
    return forward, backward, family


def planned_files(root: Path, device: SaddleDevice, temperature: float) -> List[Path]:
    stem = measurement_stem(device.device_id, device.cooldown, temperature, device.illuminated)
    return [root / TRACE_DIR / f"{stem}_forward.csv", root / TRACE_DIR / f"{stem}_backward.csv",
            root / FAMILY_DIR / f"{stem}_family.csv"]


def store_measurement(root: Path, measurement: Measurement) -> List[Path]:
    forward, backward, family = measurement
    return [write_trace(forward, root / TRACE_DIR / trace_filename(forward)),
            write_trace(backward, root / TRACE_DIR / trace_filename(backward)),
            write_family(family, root / FAMILY_DIR / family_filename(forward))]


def result_filename(device: SaddleDevice, temperature: float) -> str:
    return measurement_stem(device.device_id, device.cooldown, temperature,
                            device.illuminated) + ".json"


def measure_device_task(task: dict) -> dict:
    """
    Worker entry point: synthesize, optionally store and analyse one device pass.

    Takes and returns plain dicts so it can run in a process pool.
    """
    config = RunConfig.from_dict(task['config'])
    device = SaddleDevice.from_dict(task['device'])
    temperature = float(task['temperature'])
    outcome = {'result': None, 'files': [], 'warning': ""}
    try:
        measurement = synthesize_measurement(
            device, temperature, TraceSynthesizer(config.synthesis, config.vanhove), config.seed)
    except QpcError as e:
        outcome['warning'] = (f"{device.device_id.label} cooldown {device.cooldown} "
                              f"at {temperature:g} K: {e}")
        if task['analyze']:
            outcome['result'] = AnalysisResult(
                device.device_id, device.cooldown, temperature, device.illuminated,
                device.width, device.length, status="error", error_kind=e.kind,
                error_message=str(e)).to_dict()
        return outcome
    if task['store']:
        outcome['files'] = [str(p) for p in store_measurement(Path(task['root']), measurement)]
    if task['analyze']:
        forward, backward, family = measurement
        result = TraceAnalyzer(config.analysis).analyze_device(
            forward, backward, family, device.width, device.length)
        outcome['result'] = result.to_dict()
        if not result.ok:
            outcome['warning'] = (f"{device.device_id.label} cooldown {device.cooldown} "
                                  f"at {temperature:g} K: {result.error_kind}: "
                                  f"{result.error_message}")
    return outcome


class RunController:
    """Controller class that runs the toolkit commands and owns their outputs."""

    def __init__(self, config: Optional[RunConfig] = None):
        self.config = config or RunConfig()
        self.output_dir: Path = self.config.resolved_output_dir()

        # Outputs of the last command
        self.results: List[AnalysisResult] = []
        self.mux_log: List[dict] = []
        self.report: Optional[CohortReport] = None
        self.tables: Dict[str, pd.DataFrame] = {}
        self.manifest: Optional[dict] = None
        self.warnings: List[str] = []

        # Callbacks for progress reporting
        self.on_progress = None
        self.on_warning = None
        self.on_error = None

    def set_callbacks(self, progress=None, warning=None, error=None):
        """Set callback functions for progress, warnings and errors."""
        self.on_progress = progress
        self.on_warning = warning
        self.on_error = error

    def _progress(self, message: str):
        if self.on_progress:
            self.on_progress(message)
        else:
            logger.info(message)

    def _warn(self, message: str):
        self.warnings.append(message)
        if self.on_warning:
            self.on_warning(message)
        else:
            logger.warning(message)

    def _fail(self, message: str):
        if self.on_error:
            self.on_error(message)
        else:
            logger.error(message)

    # -- shared plumbing -------------------------------------------------

    def passes(self) -> List[Tuple[int, bool]]:
        """(cooldown, illuminated) of every measurement pass; illumination adds a final cooldown."""
        passes = [(c, False) for c in range(1, self.config.cooldowns + 1)]
        if self.config.illuminated:
            passes.append((self.config.cooldowns + 1, True))
        return passes

    def _manifest_config(self) -> dict:
        data = self.config.to_dict()
        data['output_dir'] = None
        return data

    def _task(self, device: SaddleDevice, temperature: float, analyze: bool, store: bool) -> dict:
        return {'config': self._manifest_config(), 'device': device.to_dict(),
                'temperature': temperature, 'analyze': analyze, 'store': store,
                'root': str(self.output_dir)}

    def _execute(self, tasks: Sequence[dict]) -> List[dict]:
        """Run tasks in order; a process pool keeps input order when workers > 1."""
        total = len(tasks)
        step = max(1, total // 20)
        outcomes = []
        if self.config.workers > 1 and total > 1:
            with ProcessPoolExecutor(max_workers=self.config.workers) as pool:
                for outcome in pool.map(measure_device_task, tasks):
                    outcomes.append(outcome)
                    if len(outcomes) % step == 0 or len(outcomes) == total:
                        self._progress(f"Measured {len(outcomes)}/{total} device passes")
            return outcomes
        for task in tasks:
            outcomes.append(measure_device_task(task))
            if len(outcomes) % step == 0 or len(outcomes) == total:
                self._progress(f"Measured {len(outcomes)}/{total} device passes")
        return outcomes

    def _faults(self) -> Dict[int, List[BranchFault]]:
        """Configured branch faults per chip; a fault without a chip applies to all chips."""
        faults: Dict[int, List[BranchFault]] = {chip: [] for chip in self.config.chip_list}
        for item in self.config.mux_faults:
            data = dict(item)
            chip = data.pop('chip', None)
            try:
                fault = BranchFault.from_dict(data)
            except (KeyError, TypeError, ValueError) as e:
                raise ConfigurationError(f"Invalid MUX fault {item}: {e}") from e
            for target in ([int(chip)] if chip is not None else self.config.chip_list):
                faults.setdefault(target, []).append(fault)
        return faults

    def _write_index(self, results_dir: Path, results: Sequence[AnalysisResult],
                     names: Sequence[str]) -> Path:
        entries = []
        for result, name in zip(results, names):
            dev = result.device_id
            entries.append({
                'file': name,
                'device': dev.label if dev else "",
                'chip': dev.chip if dev else 0,
                'row': dev.row if dev else 0,
                'column': dev.column if dev else 0,
                'cooldown': result.cooldown,
                'temperature_K': result.temperature,
                'illuminated': result.illuminated,
                'status': result.status,
                'error_kind': result.error_kind,
            })
        return write_json(entries, results_dir / INDEX_FILE)

    def _write_report(self, root: Path, results: Sequence[AnalysisResult],
                      warnings: Optional[List[str]] = None) -> List[Path]:
        s = self.config.analysis
        self.report, self.tables = build_report(
            results, s.s_g_kappas, s.suppression_sigma, s.min_correlation_devices,
            self.config.seed, warnings)
        paths = [write_json(self.report.to_dict(), root / REPORT_DIR / "cohort_report.json")]
        for name, table in self.tables.items():
            paths.append(write_frame(table, root / REPORT_DIR / f"{name}.csv"))
        paths.extend(export_plot_data(results, self.report, self.tables, root / PLOT_DIR,
                                      s.s_g_kappas))
        return paths

    def _write_manifest(self, root: Path, command: str, devices: List[dict],
                        files: Sequence[Path], name: str = MANIFEST_FILE) -> Path:
        self.manifest = build_manifest(self._manifest_config(), command, devices,
                                       relative_files(root, files))
        return write_json(self.manifest, root / name)

    # -- synthesize ------------------------------------------------------

    def synthesize(self) -> bool:
        """
        Write the traces and bias families of every functional device plus a manifest.

        Returns:
            bool: True if successful; partial outputs are removed otherwise
        """
        planned: List[Path] = []
        try:
            self._synthesize(planned)
            return True
        except (QpcError, OSError, ValueError) as e:
            self._remove(planned + [self.output_dir / MANIFEST_FILE])
            self._fail(f"Synthesis failed: {e}")
            return False

    def _synthesize(self, planned: List[Path]):
        root = self.output_dir
        devices, tasks = [], []
        for cooldown, lit in self.passes():
            cohort = generate_cohort(self.config.cohort, cooldown, lit, self.config.chip_list)
            devices.extend(d.to_dict() for d in cohort)
            for temperature in self.config.cohort.temperatures:
                for device in cohort:
                    if device.functional:
                        tasks.append(self._task(device, temperature, analyze=False, store=True))
                        planned.extend(planned_files(root, device, temperature))
        self._progress(f"Synthesizing {len(tasks)} device passes into {root}")
        files: List[Path] = []
        for outcome in self._execute(tasks):
            files.extend(Path(p) for p in outcome['files'])
            if outcome['warning']:
                self._warn(outcome['warning'])
        self._write_manifest(root, "synthesize", devices, files)
        self._progress(f"Wrote {len(files)} trace files and {MANIFEST_FILE}")

    def _remove(self, paths: Sequence[Path]):
        for path in paths:
            path.unlink(missing_ok=True)
        for sub in (TRACE_DIR, FAMILY_DIR):
            directory = self.output_dir / sub
            if directory.is_dir() and not any(directory.iterdir()):
                directory.rmdir()

    # -- run -------------------------------------------------------------

    def run(self) -> bool:
        """
        Full pipeline: MUX schedule, synthesis, analysis and cohort report.

        Per-device failures are recorded in the results and the MUX log.

        Returns:
            bool: True if successful, False otherwise
        """
        try:
            self._run()
            return True
        except (QpcError, OSError, ValueError) as e:
            self._fail(f"Run failed: {e}")
            return False

    def _run(self):
        root = self.output_dir
        tree = MuxTree(self.config.cohort.mux_depth)
        faults = self._faults()
        store = self.config.save_traces
        devices, log, tasks, task_entries = [], [], [], []

        for cooldown, lit in self.passes():
            cohort = generate_cohort(self.config.cohort, cooldown, lit, self.config.chip_list)
            devices.extend(d.to_dict() for d in cohort)
            by_chip: Dict[int, Dict[Tuple[int, int], SaddleDevice]] = {}
            for d in cohort:
                by_chip.setdefault(d.device_id.chip, {})[(d.device_id.row, d.device_id.column)] = d
            for temperature in self.config.cohort.temperatures:
                for chip in self.config.chip_list:
                    chip_devices = by_chip.get(chip, {})
                    entries = schedule_sweep(
                        chip, chip_devices,
                        lambda d, t=temperature: f"{RESULT_DIR}/{result_filename(d, t)}",
                        tree, faults.get(chip, []))
                    for entry in entries:
                        record = entry.to_dict()
                        record.update({'cooldown': cooldown, 'temperature_K': temperature,
                                       'illuminated': lit})
                        log.append(record)
                        if entry.outcome == "measured" and entry.result_path:
                            device = chip_devices[(entry.row, entry.column)]
                            tasks.append(self._task(device, temperature, True, store))
                            task_entries.append(len(log) - 1)

        self._progress(f"MUX schedule: {len(log)} addresses, {len(tasks)} device passes")
        files: List[Path] = []
        results, names = [], []
        for index, outcome in zip(task_entries, self._execute(tasks)):
            if outcome['warning']:
                self._warn(outcome['warning'])
            result = AnalysisResult.from_dict(outcome['result'])
            record = log[index]
            files.append(write_result(result, root / record['result_path']))
            files.extend(Path(p) for p in outcome['files'])
            if not result.ok:
                record['outcome'] = "error"
                record['error_kind'] = result.error_kind
            results.append(result)
            names.append(Path(record['result_path']).name)

        self.results, self.mux_log = results, log
        files.append(self._write_index(root / RESULT_DIR, results, names))
        files.append(write_jsonl(log, root / MUX_LOG_FILE))
        files.extend(self._write_report(root, results))
        self._write_manifest(root, "run", devices, files)
        self._progress(f"Run complete: {len(results)} results in {root}")

    # -- analyze ---------------------------------------------------------

    def analyze(self, source) -> bool:
        """
        Analyse stored traces from a manifest file or a trace directory.

        Returns:
            bool: True if successful, False otherwise
        """
        try:
            self._analyze(Path(source))
            return True
        except (QpcError, OSError, ValueError) as e:
            self._fail(f"Analysis failed: {e}")
            return False

    def _source_files(self, source: Path) -> Tuple[Path, List[Path], List[Path], List[dict]]:
        """Base directory, trace files, family files and device records of a source."""
        if source.is_file():
            manifest = read_json(source)
            base = source.parent
            files = [base / f for f in manifest.get('files', [])]
            traces = [p for p in files if p.parent.name == TRACE_DIR]
            families = [p for p in files if p.parent.name == FAMILY_DIR]
            return base, traces, families, list(manifest.get('devices', []))
        if not source.is_dir():
            raise FileNotFoundError(f"No manifest or trace directory at {source}")
        trace_dir = source / TRACE_DIR if (source / TRACE_DIR).is_dir() else source
        family_dir = source / FAMILY_DIR if (source / FAMILY_DIR).is_dir() else source
        traces = sorted(p for p in trace_dir.glob("*.csv") if not p.name.endswith("_family.csv"))
        families = sorted(family_dir.glob("*_family.csv"))
        return source, traces, families, []

    def _analyze(self, source: Path):
        base, trace_files, family_files, device_records = self._source_files(source)
        root = Path(self.config.output_dir) if self.config.output_dir else base
        geometry = {}
        for record in device_records:
            d = record['device_id']
            geometry[(d['chip'], d['row'], d['column'], record.get('cooldown', 1))] = (
                record.get('width'), record.get('length'))

        groups: Dict[str, dict] = {}
        for path in trace_files:
            try:
                trace = read_trace(path)
            except (OSError, ValueError) as e:
                self._warn(f"Skipping unreadable trace {path.name}: {e}")
                continue
            stem = measurement_stem(trace.device_id, trace.cooldown, trace.temperature,
                                    trace.illuminated)
            groups.setdefault(stem, {})[trace.sweep_direction] = trace
        for path in family_files:
            try:
                family = read_family(path)
            except (OSError, ValueError) as e:
                self._warn(f"Skipping unreadable family {path.name}: {e}")
                continue
            head = family[0]
            stem = measurement_stem(head.device_id, head.cooldown, head.temperature,
                                    head.illuminated)
            groups.setdefault(stem, {})['family'] = family
        if not groups:
            raise ValueError(f"No traces found under {base}")

        analyzer = TraceAnalyzer(self.config.analysis)
        results, names = [], []
        for stem in sorted(groups):
            group = groups[stem]
            forward = group.get('forward')
            if forward is None:
                self._warn(f"{stem}: no forward trace, skipped")
                continue
            d = forward.device_id
            width, length = (geometry.get((d.chip, d.row, d.column, forward.cooldown), (None, None))
                             if d else (None, None))
            results.append(analyzer.analyze_device(forward, group.get('backward'),
                                                   group.get('family'), width, length))
            names.append(f"{stem}.json")
        files = [write_result(r, root / RESULT_DIR / name) for r, name in zip(results, names)]
        files.append(self._write_index(root / RESULT_DIR, results, names))
        self.results = results
        self._write_manifest(root, "analyze", device_records, files, "analyze_manifest.json")
        self._progress(f"Analysed {len(results)} device passes "
                       f"({sum(not r.ok for r in results)} errors)")

    # -- spectroscopy ----------------------------------------------------

    def spectroscopy(self, source) -> bool:
        """
        Subband spacing and lever arm of every stored bias family.

        Returns:
            bool: True if successful, False otherwise
        """
        try:
            self._spectroscopy(Path(source))
            return True
        except (QpcError, OSError, ValueError) as e:
            self._fail(f"Spectroscopy failed: {e}")
            return False

    def _spectroscopy(self, source: Path):
        base, _, family_files, _ = self._source_files(source)
        if not family_files:
            raise ValueError(f"No bias families found under {base}")
        root = Path(self.config.output_dir) if self.config.output_dir else base
        analyzer = TraceAnalyzer(self.config.analysis)
        rows = []
        for path in sorted(family_files):
            family = read_family(path)
            zero = min(family, key=lambda t: abs(t.v_sd_dc))
            d = zero.device_id
            row = {'chip': d.chip if d else 0, 'row': d.row if d else 0,
                   'column': d.column if d else 0, 'cooldown': zero.cooldown,
                   'temperature_K': zero.temperature, 'illuminated': zero.illuminated,
                   'series_resistance_ohm': float('nan'), 'delta_e_meV': float('nan'),
                   'v_star_mV': float('nan'), 'lever_arm': float('nan'), 'n_points': 0,
                   'status': "ok", 'error_kind': ""}
            try:
                r_s, _ = analyzer.calibrate_series_resistance(zero)
                spectro = extract_subband_spacing(family, r_s, settings=self.config.analysis)
                row.update({'series_resistance_ohm': r_s, 'delta_e_meV': spectro.delta_e,
                            'v_star_mV': spectro.v_star * 1e3, 'lever_arm': spectro.lever_arm,
                            'n_points': spectro.n_points})
            except QpcError as e:
                row.update({'status': "error", 'error_kind': e.kind})
                self._warn(f"{path.name}: {e}")
            rows.append(row)
        table = pd.DataFrame(rows)
        files = [write_frame(table, root / REPORT_DIR / "spectroscopy.csv")]
        self.tables = {'spectroscopy': table}
        self._write_manifest(root, "spectroscopy", [], files, "spectroscopy_manifest.json")
        self._progress(f"Spectroscopy: {int((table['status'] == 'ok').sum())} of "
                       f"{len(table)} families resolved")

    # -- report ----------------------------------------------------------

    def aggregate(self, run_dir) -> bool:
        """
        Re-aggregate stored results into the cohort report and plot tables.

        Missing or corrupt result files are skipped with a warning.

        Returns:
            bool: True if successful, False otherwise
        """
        try:
            self._aggregate(Path(run_dir))
            return True
        except (QpcError, OSError, ValueError) as e:
            self._fail(f"Report failed: {e}")
            return False

    def _aggregate(self, run_dir: Path):
        results_dir = run_dir / RESULT_DIR if (run_dir / RESULT_DIR).is_dir() else run_dir
        root = Path(self.config.output_dir) if self.config.output_dir else (
            run_dir if results_dir != run_dir else run_dir.parent)
        index = results_dir / INDEX_FILE
        if index.exists():
            paths = [results_dir / entry['file'] for entry in read_json(index)]
        else:
            paths = sorted(p for p in results_dir.glob("*.json") if p.name != INDEX_FILE)

        warnings, results = [], []
        for path in paths:
            if not path.exists():
                warnings.append(f"Missing result file {path.name}")
                continue
            try:
                results.append(read_result(path))
            except ValueError:
                warnings.append(f"Corrupt result file {path.name}")
        for message in warnings:
            self._warn(message)
        self.results = results
        files = self._write_report(root, results, warnings)
        self._write_manifest(root, "report", [], files, "report_manifest.json")
        self._progress(f"Report from {len(results)} results, {len(warnings)} skipped files")

    # -- mux-check -------------------------------------------------------

    def mux_check(self) -> bool:
        """
        Exhaustive MUX checks plus a dry addressing sweep of every chip.

        Returns:
            bool: True if the healthy tree passes every check
        """
        try:
            return self._mux_check()
        except (QpcError, OSError, ValueError) as e:
            self._fail(f"MUX check failed: {e}")
            return False

    def _mux_check(self) -> bool:
        root = self.output_dir
        tree = MuxTree(self.config.cohort.mux_depth)
        size = tree.leaf_count
        addresses = [MuxAddress(r, c, size) for r in range(1, size + 1)
                     for c in range(1, size + 1)]
        states = [tree.address_to_lines(a) for a in addresses]
        checks = {
            'leaf_count': size,
            'contact_count': tree.contact_count,
            'bijective': len({s.signature() for s in states}) == len(addresses),
            'lines_valid': all(s.is_valid() for s in states),
            'healthy_singleton': all(tree.conduction_path(s).device_count == 1 for s in states),
        }

        faults = self._faults()
        cohort = generate_cohort(self.config.cohort, 1, False, self.config.chip_list)
        log, chips = [], {}
        for chip in self.config.chip_list:
            devices = {(d.device_id.row, d.device_id.column): d
                       for d in cohort if d.device_id.chip == chip}
            entries = schedule_sweep(chip, devices, lambda d: "", tree, faults.get(chip, []))
            log.extend(e.to_dict() for e in entries)
            counts = pd.Series([e.outcome for e in entries]).value_counts()
            classes = pd.Series([e.fault_class for e in entries if e.fault_class]).value_counts()
            chips[str(chip)] = {'outcomes': {k: int(v) for k, v in counts.items()},
                                'fault_classes': {k: int(v) for k, v in classes.items()}}
        checks['chips'] = chips
        self.mux_log = log
        files = [write_json(checks, root / "mux_check.json"), write_jsonl(log, root / MUX_LOG_FILE)]
        self._write_manifest(root, "mux-check", [], files, "mux_check_manifest.json")
        passed = checks['bijective'] and checks['lines_valid'] and checks['healthy_singleton']
        self._progress(f"MUX check: {size}x{size} addresses, {tree.contact_count} contacts, "
                       f"{'passed' if passed else 'FAILED'}")
        if not passed:
            self._fail("Healthy MUX tree failed the addressing checks")
        return passed
