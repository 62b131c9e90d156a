"""
Integration tests for qpc07.

Tests the interaction between synthesis, extraction and the cohort
statistics on model-generated devices. Everything here runs on the
tight-binding LDOS ridge; Gaussian stand-ins live in the unit tests only.
"""

import numpy as np
import pytest
from analysis import TraceAnalyzer
from config import AnalysisSettings, RunConfig, SynthesisSettings
from models import CohortConfig, DeviceId, SaddleDevice, ThermalState
from qpc_controller import RunController
from synthesis import TraceSynthesizer, generate_cohort


def make_device(U: float) -> SaddleDevice:
    """Clean E_x = 1 meV, E_y = 6 meV device without series resistance."""
    return SaddleDevice(DeviceId(1, 1, 1), 0.6, 0.3, 1.0, 6.0, 0.05, U, series_resistance=0.0)


def run_first_riser(analyzer, trace):
    """Fit, kappa transform, S_TC metrics and riser splitting of one trace."""
    fit = analyzer.fit_ex(trace)
    kt = analyzer.to_kappa(trace, fit)
    tc = analyzer.transconductance(kt)
    metrics = analyzer.suppression_metrics(kt, tc, fit)
    split, peaks = analyzer.detect_riser_splitting(kt, tc, analyzer.transconductance_noise(kt))
    return fit, metrics, split, peaks


class TestTightBindingSuppression:
    """S_TC of one riser whose interaction comes from the tight-binding ridge."""

    def setup_method(self):
        """Setup a one-subband synthesizer and an analyzer with E_x known."""
        self.synth = TraceSynthesizer(SynthesisSettings(gate_points=3001, n_subbands=1))
        self.analyzer = TraceAnalyzer(AnalysisSettings(fixed_ex=1.0))
        self.th = ThermalState(0.04)

    def device(self, u_eff_max, temperature=0.04):
        U = self.synth.interaction_for_peak(1.0, temperature, u_eff_max)
        return make_device(U)

    def trace(self, dev, temperature=0.04):
        return self.synth.synthesize_trace(dev, ThermalState(temperature), noise_sigma=0.0)

    def test_moderate_ridge(self):
        """A ridge peaking at U_eff = 0.56 gives S_TC = 0.44 on one unsplit riser."""
        _, metrics, split, peaks = run_first_riser(self.analyzer, self.trace(self.device(0.56)))

        assert metrics.s_tc_07 == pytest.approx(0.44, abs=0.02)
        assert not split
        assert len(peaks) == 1

    def test_strong_ridge_splits_riser(self):
        """A ridge peaking at U_eff = 0.88 gives S_TC = 0.12 between two maxima."""
        _, metrics, split, peaks = run_first_riser(self.analyzer, self.trace(self.device(0.88)))

        assert metrics.s_tc_07 == pytest.approx(0.12, abs=0.02)
        assert split
        assert len(peaks) == 2
        assert peaks[0] < metrics.kappa_07 < peaks[1]

    def test_weak_ridge_anomaly_sits_on_the_upper_riser(self):
        """At U_eff = 0.3 the deepest suppression lies between 0.5 and 0.9 G_Q."""
        _, metrics, split, _ = run_first_riser(self.analyzer, self.trace(self.device(0.3)))

        assert metrics.s_tc_07 == pytest.approx(0.7, abs=0.02)
        assert 0.5 <= metrics.g_07 <= 0.9
        assert not split

    def test_warm_ridge_is_shallower(self):
        """At fixed U the thermally smeared ridge suppresses less."""
        dev = self.device(0.5)
        cold = self.synth.ldos_curve(1.0, 0.04)
        warm = self.synth.ldos_curve(1.0, 4.2)
        _, cold_metrics, _, _ = run_first_riser(self.analyzer, self.trace(dev))
        _, warm_metrics, _, _ = run_first_riser(self.analyzer, self.trace(dev, 4.2))

        assert warm.ldos_max < cold.ldos_max
        assert warm_metrics.s_tc_07 > cold_metrics.s_tc_07

    def test_free_fit_overestimates_ex_under_the_ridge(self):
        """The Hartree shift already compresses the lower half step and inflates E_x."""
        dev = self.device(0.5)
        trace = self.trace(dev)
        fit = TraceAnalyzer().fit_ex(trace)
        bare = TraceAnalyzer().fit_ex(self.trace(self.device(0.0)))

        assert bare.e_x == pytest.approx(1.0, abs=1e-3)
        assert fit.e_x > 1.05


class TestRiserMetrics:
    """Suppression measured through the full synthesis and extraction chain."""

    def setup_method(self):
        """Setup a device whose first-subband ridge reaches U_eff = 0.56."""
        self.synth = TraceSynthesizer(SynthesisSettings(gate_points=3001))
        U = self.synth.interaction_for_peak(1.0, 0.04, 0.56)
        self.dev = make_device(U)
        self.analyzer = TraceAnalyzer(AnalysisSettings(fixed_ex=1.0))

    def metrics(self, subband, u_e=None):
        trace = self.synth.synthesize_trace(self.dev, ThermalState(0.04), noise_sigma=0.0)
        fit = self.analyzer.fit_ex(trace, subband)
        kt = self.analyzer.to_kappa(trace, fit)
        return self.analyzer.suppression_metrics(kt, self.analyzer.transconductance(kt), fit,
                                                 u_e)

    def test_suppression_fades_with_subband(self):
        """The suppression depth drops from plateau to plateau and nearly vanishes on the third."""
        depths = [1.0 - self.metrics(n, u_e=6.0).s_tc_07 for n in (1, 2, 3)]

        assert depths[0] > depths[1] > depths[2]
        assert depths[0] == pytest.approx(0.56, abs=0.03)
        assert depths[1] == pytest.approx(0.4 * 0.56, abs=0.03)
        assert depths[2] < 0.05


@pytest.mark.slow
class TestFitStatistics:
    """Monte Carlo recovery of E_x."""

    def test_noisy_ex_round_trip(self):
        """At sigma = 0.005 G_Q the 95th-percentile E_x error stays below 2%."""
        synth = TraceSynthesizer(SynthesisSettings(gate_points=3001))
        analyzer = TraceAnalyzer()
        dev = SaddleDevice(DeviceId(2, 5, 5), 0.4, 0.2, 1.0, 4.0, 0.05, 0.0)
        th = ThermalState(0.04)

        errors = []
        for seed in range(100):
            trace = synth.synthesize_trace(dev, th, noise_sigma=0.005, rng_seed=seed)
            errors.append(abs(analyzer.fit_ex(trace).e_x - 1.0))

        assert np.percentile(errors, 95) < 0.02


class TestCohortDraws:
    """Test cases for the default cohort distributions."""

    def test_functional_count_over_seeds(self):
        """A 0.554 defect probability leaves about 571 of 1280 devices working."""
        counts = []
        for seed in range(10):
            devices = generate_cohort(CohortConfig(seed=seed))
            assert len(devices) == 1280
            counts.append(sum(d.functional for d in devices))

        assert np.mean(counts) == pytest.approx(571, abs=40)
        assert all(abs(c - 571) < 75 for c in counts)


class TestCohortPipeline:
    """A small cohort run through the controller."""

    def setup_method(self):
        """Setup a healthy 4x4 chip."""
        self.config = RunConfig(
            cohort=CohortConfig(n_chips=1, mux_depth=2, defect_probability=0.0,
                                u_mode="fixed", u_coefficient=20.0, seed=3),
            synthesis=SynthesisSettings(gate_points=801, family_gate_points=401,
                                        bias_max=0.003, bias_step=0.0005),
            analysis=AnalysisSettings(min_correlation_devices=3))

    def test_run_report_invariants(self, tmp_path):
        """Yields are ordered and every correlation is a valid coefficient."""
        self.config.output_dir = str(tmp_path)
        controller = RunController(self.config)

        assert controller.run()
        report = controller.report
        assert report.n_measured == 16
        assert len(controller.mux_log) == 16
        assert report.n_good_fit > 0
        assert report.y_tc_07 is not None
        assert 0.0 <= report.y_rs_07 <= report.y_tc_07 <= 1.0
        for name, value in report.to_dict()['correlations'].items():
            entries = value.values() if name.startswith("s_g") else [value]
            for entry in entries:
                assert entry['rho'] is None or -1.0 <= entry['rho'] <= 1.0

    def test_progress_callbacks(self, tmp_path):
        """Test that the controller reports through its callbacks."""
        self.config.output_dir = str(tmp_path)
        messages, warnings = [], []
        controller = RunController(self.config)
        controller.set_callbacks(progress=messages.append, warning=warnings.append)

        assert controller.synthesize()
        assert any("Synthesizing 16" in m for m in messages)
        assert warnings == controller.warnings
        assert len(controller.manifest["devices"]) == 16


@pytest.fixture(scope="class")
def cohort_report(tmp_path_factory):
    """Two cooldowns of two default-distribution chips."""
    config = RunConfig(cohort=CohortConfig(n_chips=2, mux_depth=3, seed=11),
                       cooldowns=2, output_dir=str(tmp_path_factory.mktemp("cohort")))
    controller = RunController(config)
    assert controller.run()
    return controller.report


@pytest.mark.slow
@pytest.mark.timeout(3600)
class TestCohortStatistics:
    """Yields and correlations of a default cohort."""

    def test_split_yield_below_suppression_yield(self, cohort_report):
        """In every cooldown some suppressed risers stay unsplit."""
        assert set(cohort_report.yields_by_cooldown) == {1, 2}
        for entry in cohort_report.yields_by_cooldown.values():
            assert entry['y_rs_07'] < entry['y_tc_07']

    def test_depth_grows_with_subband_spacing(self, cohort_report):
        correlation = cohort_report.correlations['depth_vs_sqrt_ue']
        assert correlation.rho is not None
        assert correlation.rho > 0

    def test_conductance_suppression_follows_spacing_not_ex(self, cohort_report):
        """S_G tracks 1/U_E more closely than E_x."""
        by_spacing = cohort_report.correlations['s_g_vs_inv_ue']
        by_ex = cohort_report.correlations['s_g_vs_ex']
        for kappa in (1.0, 2.0):
            assert by_spacing[kappa].rho is not None and by_ex[kappa].rho is not None
            assert by_spacing[kappa].rho > by_ex[kappa].rho
