"""
Unit tests for data models.

Covers potentials, device identifiers, geometry plans, cohort
configuration, traces and the analysis result record.
"""

import math

import pytest
import numpy as np
from errors import ConfigurationError
from models import (AnalysisResult, ChipPlan, CohortConfig, ConductanceTrace, DeviceId,
                    FitWindow, SaddleDevice, SaddlePotential, ThermalState, default_chip_plans)


class TestSaddlePotential:
    """Test cases for SaddlePotential."""

    def test_confinement_ratio(self):
        """Test that U_E = E_y / E_x."""
        pot = SaddlePotential(e_x=0.8, e_y=2.0, lever_arm=0.05)
        assert pot.u_e == pytest.approx(2.5)

    def test_subband_bottoms(self):
        """Subband N opens at V_c + E_y (N - 1/2)."""
        pot = SaddlePotential(e_x=1.0, e_y=3.0, lever_arm=0.05, v_c=1.0)

        assert pot.subband_bottom(1) == pytest.approx(2.5)
        assert pot.subband_bottom(2) - pot.subband_bottom(1) == pytest.approx(3.0)

        with pytest.raises(ValueError, match="Subband index"):
            pot.subband_bottom(0)

    @pytest.mark.parametrize("kwargs, message", [
        ({'e_x': 0.0, 'e_y': 1.0, 'lever_arm': 0.05}, "E_x"),
        ({'e_x': 1.0, 'e_y': -1.0, 'lever_arm': 0.05}, "E_y"),
        ({'e_x': 1.0, 'e_y': 1.0, 'lever_arm': 1.5}, "Lever arm"),
        ({'e_x': 1.0, 'e_y': 1.0, 'lever_arm': 0.0}, "Lever arm"),
    ])
    def test_validation(self, kwargs, message):
        """Test that unphysical parameters are rejected."""
        with pytest.raises(ValueError, match=message):
            SaddlePotential(**kwargs)

    def test_dict_round_trip(self):
        """Test serialization to and from dictionary."""
        pot = SaddlePotential(1.2, 2.4, 0.04, -0.9, 0.3)
        assert SaddlePotential.from_dict(pot.to_dict()) == pot


class TestThermalState:
    """Test cases for ThermalState."""

    def test_negative_temperature(self):
        """Test that negative temperatures are rejected."""
        with pytest.raises(ValueError, match="Temperature"):
            ThermalState(-0.1)

    def test_zero_temperature_allowed(self):
        """Test that T = 0 is a valid state."""
        assert ThermalState(0.0).temperature == 0.0


class TestDeviceId:
    """Test cases for DeviceId."""

    def test_label_and_key(self):
        """Test the display label and file key."""
        dev = DeviceId(2, 3, 14)

        assert dev.label == "QFET (3, 14)"
        assert dev.key == "chip2_r03_c14"

    def test_ordering_and_hashing(self):
        """Device ids sort by chip, row, column and work as dict keys."""
        ids = [DeviceId(1, 2, 1), DeviceId(1, 1, 2), DeviceId(0, 5, 5)]
        assert sorted(ids) == [DeviceId(0, 5, 5), DeviceId(1, 1, 2), DeviceId(1, 2, 1)]
        assert {DeviceId(1, 1, 1): "a"}[DeviceId(1, 1, 1)] == "a"

    def test_dict_round_trip(self):
        """Test serialization to and from dictionary."""
        dev = DeviceId(5, 16, 16)
        assert DeviceId.from_dict(dev.to_dict()) == dev


class TestSaddleDevice:
    """Test cases for SaddleDevice."""

    def setup_method(self):
        """Setup a test device."""
        self.device = SaddleDevice(DeviceId(1, 2, 3), 0.6, 0.3, e_x=0.8, e_y=2.0,
                                   lever_arm=0.05, U=12.0)

    def test_potential(self):
        """Test that the device potential carries its energies and riser."""
        pot = self.device.potential

        assert pot.e_x == 0.8
        assert pot.e_y == 2.0
        assert pot.v_riser == self.device.v_riser
        assert self.device.u_e == pytest.approx(2.5)

    def test_validation(self):
        """Test that negative interaction, resistance or geometry is rejected."""
        with pytest.raises(ValueError, match="U must be >= 0"):
            SaddleDevice(DeviceId(1, 1, 1), 0.6, 0.3, 1.0, 2.0, 0.05, U=-1.0)

        with pytest.raises(ValueError, match="Series resistance"):
            SaddleDevice(DeviceId(1, 1, 1), 0.6, 0.3, 1.0, 2.0, 0.05, 1.0,
                         series_resistance=-5.0)

        with pytest.raises(ValueError, match="width and length"):
            SaddleDevice(DeviceId(1, 1, 1), 0.0, 0.3, 1.0, 2.0, 0.05, 1.0)

    def test_dict_round_trip(self):
        """Test serialization to and from dictionary."""
        restored = SaddleDevice.from_dict(self.device.to_dict())

        assert restored == self.device
        assert isinstance(restored.device_id, DeviceId)


class TestChipPlan:
    """Test cases for chip geometry plans."""

    def test_fixed_width_plan(self):
        """Widths alternate by column and lengths cycle by row."""
        plan = ChipPlan(chip=1)

        assert plan.geometry(1, 1) == (0.6, 0.1)
        assert plan.geometry(1, 2) == (0.4, 0.1)
        assert plan.geometry(8, 3) == (0.6, 0.8)
        assert plan.geometry(9, 4) == (0.4, 0.1)

    def test_aspect_ratio_plan(self):
        """Test that the aspect-ratio plan fixes L / W."""
        plan = ChipPlan(chip=5, mode="aspect_ratio", aspect_ratio=2.0)
        width, length = plan.geometry(3, 7)

        assert length == pytest.approx(0.3)
        assert length / width == pytest.approx(2.0)

    def test_invalid_plans(self):
        """Test that unknown modes and non-positive sizes are rejected."""
        with pytest.raises(ConfigurationError, match="Unknown chip plan mode"):
            ChipPlan(chip=1, mode="random")

        with pytest.raises(ConfigurationError, match="lengths"):
            ChipPlan(chip=1, lengths=(0.1, -0.2))

        with pytest.raises(ConfigurationError, match="Aspect ratio"):
            ChipPlan(chip=1, aspect_ratio=0.0)

    def test_default_plans(self):
        """All chips but the last use fixed widths; the last fixes L / W."""
        plans = default_chip_plans(5)

        assert [p.chip for p in plans] == [1, 2, 3, 4, 5]
        assert [p.mode for p in plans] == ["fixed_width"] * 4 + ["aspect_ratio"]
        assert default_chip_plans(1)[0].mode == "fixed_width"

    def test_dict_round_trip(self):
        """Test serialization to and from dictionary."""
        plan = ChipPlan(chip=3, widths=(0.5,), lengths=(0.2, 0.4))
        assert ChipPlan.from_dict(plan.to_dict()) == plan


class TestCohortConfig:
    """Test cases for CohortConfig."""

    def test_defaults(self):
        """The default cohort is five chips of 16 x 16 devices."""
        cfg = CohortConfig()

        assert cfg.n_chips == 5
        assert cfg.grid_size == 16
        assert len(cfg.chip_plans) == 5
        assert cfg.defect_probability == pytest.approx(0.554)

    def test_grid_size_follows_depth(self):
        """Test that the grid has 2^depth rows."""
        assert CohortConfig(n_chips=1, mux_depth=2).grid_size == 4

    @pytest.mark.parametrize("kwargs", [
        {'n_chips': 0},
        {'mux_depth': -1},
        {'ex_median': 0.0},
        {'defect_probability': 1.5},
        {'u_mode': "linear"},
        {'u_coefficient': -1.0},
        {'illumination_factor': 0.0},
        {'lever_arm': 2.0},
        {'temperatures': (-1.0,)},
        {'ex_log_sigma': -0.1},
    ])
    def test_validation(self, kwargs):
        """Test that invalid distribution parameters are rejected."""
        with pytest.raises(ConfigurationError):
            CohortConfig(**kwargs)

    def test_missing_plan(self):
        """Every chip needs a geometry plan."""
        with pytest.raises(ConfigurationError, match="No geometry plan"):
            CohortConfig(n_chips=2, chip_plans=[ChipPlan(chip=1)])

    def test_unknown_keys(self):
        """Test that from_dict rejects unknown keys."""
        with pytest.raises(ConfigurationError, match="Unknown cohort keys"):
            CohortConfig.from_dict({'n_chips': 1, 'flavour': "up"})

    def test_dict_round_trip(self):
        """Test serialization to and from dictionary."""
        cfg = CohortConfig(n_chips=2, temperatures=(0.04, 1.4), seed=11)
        restored = CohortConfig.from_dict(cfg.to_dict())

        assert restored == cfg
        assert restored.temperatures == (0.04, 1.4)


class TestConductanceTrace:
    """Test cases for ConductanceTrace."""

    def test_forward_sweep_ascending(self):
        """Forward sweeps are stored decreasing and returned ascending."""
        trace = ConductanceTrace([3.0, 2.0, 1.0], [0.9, 0.5, 0.1], "forward")
        v, g = trace.ascending()

        np.testing.assert_array_equal(v, [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(g, [0.1, 0.5, 0.9])
        assert len(trace) == 3

    def test_backward_sweep_ascending(self):
        """Test that backward sweeps are already ascending."""
        trace = ConductanceTrace([1.0, 2.0], [0.1, 0.9], "backward")
        v, _ = trace.ascending()
        np.testing.assert_array_equal(v, [1.0, 2.0])

    def test_direction_must_match_gate_order(self):
        """Test that the gate order must match the sweep direction."""
        with pytest.raises(ValueError, match="strictly monotone"):
            ConductanceTrace([1.0, 2.0, 3.0], [0.1, 0.5, 0.9], "forward")

        with pytest.raises(ValueError, match="strictly monotone"):
            ConductanceTrace([1.0, 1.0, 3.0], [0.1, 0.5, 0.9], "backward")

    def test_invalid_arrays(self):
        """Test mismatched lengths, too few samples and unknown directions."""
        with pytest.raises(ValueError, match="equal length"):
            ConductanceTrace([2.0, 1.0], [0.1], "forward")

        with pytest.raises(ValueError, match="two samples"):
            ConductanceTrace([1.0], [0.1], "backward")

        with pytest.raises(ValueError, match="Unknown sweep direction"):
            ConductanceTrace([1.0, 2.0], [0.1, 0.2], "sideways")

    def test_metadata(self):
        """Test the metadata header values."""
        trace = ConductanceTrace([2.0, 1.0], [0.9, 0.1], "forward", 0.04, 0.001,
                                 DeviceId(1, 2, 3), cooldown=2, illuminated=True, lever_arm=0.05)
        meta = trace.metadata()

        assert meta['device_id'] == "QFET (2, 3)"
        assert (meta['chip'], meta['row'], meta['column']) == (1, 2, 3)
        assert meta['cooldown'] == 2
        assert meta['temperature_K'] == 0.04
        assert meta['illuminated'] is True
        assert meta['v_sd_dc'] == 0.001
        assert meta['lever_arm'] == 0.05

    def test_metadata_without_device(self):
        """Test that anonymous traces get empty identifiers."""
        meta = ConductanceTrace([1.0, 2.0], [0.1, 0.9], "backward").metadata()

        assert meta['device_id'] == ""
        assert meta['chip'] == 0
        assert meta['lever_arm'] == ""


class TestFitWindow:
    """Test cases for FitWindow."""

    def test_defaults(self):
        """The default window is the lower half step."""
        window = FitWindow()
        assert (window.lower, window.upper) == (0.02, 0.5)

    @pytest.mark.parametrize("lower, upper", [(0.5, 0.5), (-0.1, 0.5), (0.1, 1.1)])
    def test_invalid(self, lower, upper):
        """Test that inverted or out-of-range windows are rejected."""
        with pytest.raises(ValueError, match="Fit window"):
            FitWindow(lower, upper)


class TestAnalysisResult:
    """Test cases for AnalysisResult."""

    def setup_method(self):
        """Setup a filled-in result."""
        self.result = AnalysisResult(
            DeviceId(1, 4, 5), cooldown=2, temperature=0.04, width=0.6, length=0.3,
            series_resistance_est=1000.0,
            e_x={'forward': {1: 0.9, 2: 1.1}, 'backward': {1: 0.95}},
            fit_quality={'forward': {1: 0.004, 2: 0.006}, 'backward': {1: 0.005}},
            delta_e=2.7, lever_arm_est=0.05,
            s_tc_curves={1: ([0.0, 0.02], [0.9, float('nan')])},
            s_tc_07_by_subband={1: 0.44, 2: 0.8},
            s_tc_07=0.44, s_tc_sigma=0.01, kappa_07=0.3, g_07=0.7,
            riser_split=True, split_peaks=[-0.2, 0.5],
            s_g_at={1.0: 0.95, 2.0: float('nan')},
            s_g_curve=([0.0, 1.0], [0.8, 0.95]),
            flags={'good_fit': True, 'calibrated': True})

    def test_derived_properties(self):
        """Test ok, good_fit, first-subband E_x and U_E."""
        assert self.result.ok
        assert self.result.good_fit
        assert self.result.e_x_first() == 0.9
        assert self.result.e_x_first("backward") == 0.95
        assert self.result.u_e == pytest.approx(3.0)

    def test_u_e_undefined_without_spacing(self):
        """Test that U_E is NaN without a subband spacing."""
        assert math.isnan(AnalysisResult(e_x={'forward': {1: 1.0}}).u_e)

    def test_error_record_is_not_good_fit(self):
        """Test that error records never count as good fits."""
        result = AnalysisResult(status="error", flags={'good_fit': True})
        assert not result.ok
        assert not result.good_fit

    def test_to_dict_is_json_clean(self):
        """NaN values become None and integer keys become strings."""
        data = self.result.to_dict()

        assert data['s_tc_curves']['1']['s_tc'][1] is None
        assert data['s_g_at']['2.0'] is None
        assert data['e_x']['forward']['2'] == 1.1
        assert data['device_id'] == {'chip': 1, 'row': 4, 'column': 5}

    def test_dict_round_trip(self):
        """Test that from_dict restores every field, NaN included."""
        restored = AnalysisResult.from_dict(self.result.to_dict())

        assert restored.device_id == self.result.device_id
        assert restored.e_x == self.result.e_x
        assert restored.s_tc_07_by_subband == {1: 0.44, 2: 0.8}
        assert restored.split_peaks == [-0.2, 0.5]
        assert restored.s_g_at[1.0] == 0.95
        assert math.isnan(restored.s_g_at[2.0])
        assert math.isnan(restored.s_tc_curves[1][1][1])
        assert restored.flags == self.result.flags
        assert restored.to_dict() == self.result.to_dict()
