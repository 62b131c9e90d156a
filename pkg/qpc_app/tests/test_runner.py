"""
Unit tests for the run_tests.py selections.
"""

import argparse
import importlib.util
from pathlib import Path

import pytest


RUNNER = Path(__file__).resolve().parents[2] / "run_tests.py"


@pytest.fixture(scope="module")
def runner():
    spec = importlib.util.spec_from_file_location("run_tests", RUNNER)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def namespace(**overrides):
    values = {'selection': None, 'keyword': None, 'timeout': None, 'coverage': False,
              'quiet': False, 'module': []}
    values.update(overrides)
    return argparse.Namespace(**values)


class TestRunner:
    """Test cases for the pytest argument builder."""

    def test_default_runs_the_whole_test_directory(self, runner):
        args = runner.build_args(namespace(), [])

        assert "-m" not in args
        assert args[-1] == str(runner.TEST_DIR)

    @pytest.mark.parametrize("selection, expression", [
        ("unit", "not integration and not slow"),
        ("slow", "slow"),
        ("all", "slow or not slow"),
    ])
    def test_selection_becomes_marker_expression(self, runner, selection, expression):
        args = runner.build_args(namespace(selection=selection), [])

        assert args[args.index("-m") + 1] == expression

    def test_module_names_resolve_to_test_files(self, runner):
        """Both bare and prefixed module names find the test file."""
        args = runner.build_args(namespace(module=["vanhove", "test_analysis.py"]), ["-x"])

        assert args[-2:] == [str(runner.TEST_DIR / "test_vanhove.py"),
                             str(runner.TEST_DIR / "test_analysis.py")]
        assert "-x" in args

    def test_unknown_module(self, runner):
        with pytest.raises(SystemExit, match="No test module"):
            runner.module_path("nowhere")

    def test_coverage_and_timeout(self, runner):
        args = runner.build_args(namespace(coverage=True, timeout=60, keyword="ridge"), [])

        assert "--timeout=60" in args
        assert any(a.startswith("--cov=") for a in args)
        assert args[args.index("-k") + 1] == "ridge"
