"""
Unit tests for trace, family, result and log files.
"""

import json
from pathlib import Path

import numpy as np
import pytest
from models import AnalysisResult, ConductanceTrace, DeviceId
from trace_io import (build_manifest, dumps, family_filename, read_family, read_jsonl,
                      read_result, read_trace, relative_files, trace_filename, write_family,
                      write_jsonl, write_result, write_trace)


def make_trace(direction: str = "forward", v_sd_dc: float = 0.0, internal=None,
               illuminated: bool = False) -> ConductanceTrace:
    gate = np.linspace(-0.5, -1.5, 21)
    if direction == "backward":
        gate = gate[::-1]
    g_sd = np.clip((gate + 1.5) * 1.2, 0.0, 1.0) + 0.001 * np.arange(21)
    return ConductanceTrace(gate, g_sd, direction, 0.04, v_sd_dc, DeviceId(1, 2, 3), 1,
                            illuminated, 0.05, internal)


class TestFileNames:
    """Test cases for deterministic file names."""

    def test_trace_filename(self):
        assert trace_filename(make_trace()) == "chip1_r02_c03_cd1_T40mK_forward.csv"

    def test_bias_and_illumination_in_name(self):
        """Test the bias and illumination suffixes."""
        name = trace_filename(make_trace("backward", v_sd_dc=0.0005, illuminated=True))
        assert name == "chip1_r02_c03_cd1_T40mK_lit_backward_vdc+0.50mV.csv"

    def test_family_filename(self):
        assert family_filename(make_trace()) == "chip1_r02_c03_cd1_T40mK_family.csv"


class TestTraceFiles:
    """Test cases for trace CSV files with metadata header rows."""

    def test_header_rows(self, tmp_path):
        """Test that metadata precedes the column header."""
        path = write_trace(make_trace(), tmp_path / "t.csv")
        lines = path.read_text().splitlines()

        assert lines[0].startswith("# device_id,QFET (2, 3)")
        assert "gate_voltage_V,g_sd_GQ" in lines
        assert any(line == "# sweep_direction,forward" for line in lines)

    def test_read_back(self, tmp_path):
        """Test that data and metadata survive a write and read."""
        trace = make_trace("backward")
        restored = read_trace(write_trace(trace, tmp_path / "t.csv"))

        np.testing.assert_allclose(restored.gate_voltage, trace.gate_voltage, rtol=1e-12)
        np.testing.assert_allclose(restored.g_sd, trace.g_sd, rtol=1e-12)
        assert restored.device_id == DeviceId(1, 2, 3)
        assert restored.sweep_direction == "backward"
        assert restored.temperature == pytest.approx(0.04)
        assert restored.lever_arm == pytest.approx(0.05)
        assert restored.v_sd_internal is None

    def test_biased_trace_keeps_internal_bias(self, tmp_path):
        internal = np.full(21, 0.0004)
        restored = read_trace(write_trace(make_trace(v_sd_dc=0.0005, internal=internal),
                                          tmp_path / "t.csv"))

        assert restored.v_sd_dc == pytest.approx(0.0005)
        np.testing.assert_allclose(restored.v_sd_internal, internal)

    def test_missing_columns(self, tmp_path):
        """Test that a foreign CSV is rejected."""
        path = tmp_path / "other.csv"
        path.write_text("# chip,1\ntime,value\n0,1\n1,2\n")
        with pytest.raises(ValueError, match="missing columns"):
            read_trace(path)


class TestFamilyFiles:
    """Test cases for long-format bias families."""

    def setup_method(self):
        """Setup a three-bias family."""
        self.family = [make_trace(v_sd_dc=v, internal=None if v == 0 else np.full(21, 0.8 * v))
                       for v in (0.0, 0.0005, 0.001)]

    def test_read_back_in_order(self, tmp_path):
        family = read_family(write_family(self.family, tmp_path / "f.csv"))

        assert [t.v_sd_dc for t in family] == pytest.approx([0.0, 0.0005, 0.001])
        assert family[0].v_sd_internal is None
        np.testing.assert_allclose(family[2].v_sd_internal, 0.0008)
        np.testing.assert_allclose(family[1].g_sd, self.family[1].g_sd, rtol=1e-12)
        assert all(t.device_id == DeviceId(1, 2, 3) for t in family)

    def test_empty_family(self, tmp_path):
        with pytest.raises(ValueError, match="empty"):
            write_family([], tmp_path / "f.csv")

    def test_trace_file_is_not_a_family(self, tmp_path):
        path = write_trace(make_trace(), tmp_path / "t.csv")
        with pytest.raises(ValueError, match="missing columns"):
            read_family(path)


class TestJsonFiles:
    """Test cases for result records, logs and manifests."""

    def test_result_round_trip(self, tmp_path):
        """Test that NaN fields come back as NaN."""
        result = AnalysisResult(device_id=DeviceId(2, 1, 16), e_x={'forward': {1: 0.9}},
                                s_g_at={1.0: 0.93}, flags={'good_fit': True})
        restored = read_result(write_result(result, tmp_path / "r.json"))

        assert restored.device_id == DeviceId(2, 1, 16)
        assert restored.e_x_first() == pytest.approx(0.9)
        assert np.isnan(restored.delta_e)
        assert restored.s_g_at == {1.0: pytest.approx(0.93)}

    def test_nan_written_as_null(self, tmp_path):
        path = write_result(AnalysisResult(), tmp_path / "r.json")
        assert json.loads(path.read_text())['delta_e'] is None

    @pytest.mark.parametrize("content", ["{", "[1, 2]", '"text"'])
    def test_corrupt_result(self, tmp_path, content):
        """Test that unreadable records raise ValueError."""
        path = tmp_path / "r.json"
        path.write_text(content)
        with pytest.raises(ValueError, match="Corrupt"):
            read_result(path)

    def test_missing_result(self, tmp_path):
        with pytest.raises(ValueError, match="Corrupt"):
            read_result(tmp_path / "absent.json")

    def test_jsonl(self, tmp_path):
        """One JSON object per line, NaN as null."""
        path = write_jsonl([{'a': 1}, {'b': float('nan')}], tmp_path / "log.jsonl")

        assert len(path.read_text().splitlines()) == 2
        assert read_jsonl(path) == [{'a': 1}, {'b': None}]

    def test_dumps_is_sorted(self):
        assert dumps({'b': 1, 'a': float('inf')}) == '{\n  "a": null,\n  "b": 1\n}'

    def test_manifest(self, tmp_path):
        """Test the manifest layout and file ordering."""
        files = relative_files(tmp_path, [tmp_path / "traces" / "b.csv", tmp_path / "a.json"])
        manifest = build_manifest({'cohort': {'seed': 5}}, "synthesize", [], files)

        assert manifest['seed'] == 5
        assert manifest['files'] == ["a.json", "traces/b.csv"]
        assert Path(manifest['files'][1]).parts == ("traces", "b.csv")
