#!/usr/bin/env python3
"""
Test runner for qpc07.

Maps the usual selections onto pytest marker expressions and runs pytest
in-process, so the exit code is pytest's own.

    python run_tests.py                      # everything except slow tests
    python run_tests.py --unit               # no command-line or slow tests
    python run_tests.py --slow               # Monte Carlo and whole-cohort runs
    python run_tests.py --module vanhove -k ridge
    python run_tests.py --all --coverage
"""

import argparse
import sys
from pathlib import Path

import pytest


ROOT = Path(__file__).resolve().parent
TEST_DIR = ROOT / "qpc_app" / "tests"

SELECTIONS = {
    'unit': "not integration and not slow",
    'integration': "integration and not slow",
    'slow': "slow",
    'all': "slow or not slow",
}


def module_path(name: str) -> str:
    """Test file for a module name such as ``vanhove`` or ``test_vanhove.py``."""
    stem = Path(name).stem
    if not stem.startswith("test_"):
        stem = f"test_{stem}"
    path = TEST_DIR / f"{stem}.py"
    if not path.exists():
        raise SystemExit(f"No test module {path.relative_to(ROOT)}")
    return str(path)


def build_args(args: argparse.Namespace, passthrough) -> list:
    pytest_args = ["-c", str(ROOT / "pytest.ini"), "--rootdir", str(ROOT)]
    if args.selection:
        pytest_args += ["-m", SELECTIONS[args.selection]]
    if args.keyword:
        pytest_args += ["-k", args.keyword]
    if args.timeout is not None:
        pytest_args += [f"--timeout={args.timeout}"]
    if args.coverage:
        pytest_args += [f"--cov={ROOT / 'qpc_app'}", "--cov-report=term-missing",
                        "--cov-report=html"]
    if args.quiet:
        pytest_args.append("-q")
    pytest_args += passthrough
    pytest_args += [module_path(m) for m in args.module] or [str(TEST_DIR)]
    return pytest_args


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Run the qpc07 test suite",
                                     epilog="Arguments after -- go to pytest unchanged.")
    group = parser.add_mutually_exclusive_group()
    for name, expression in SELECTIONS.items():
        group.add_argument(f"--{name}", dest="selection", action="store_const", const=name,
                           help=f"Select tests by -m '{expression}'")
    parser.add_argument("--module", action="append", default=[],
                        help="Run one test module, e.g. vanhove (repeatable)")
    parser.add_argument("-k", dest="keyword", help="pytest keyword expression")
    parser.add_argument("--timeout", type=int, help="Per-test timeout in seconds")
    parser.add_argument("--coverage", action="store_true",
                        help="Coverage of the qpc_app package, terminal and HTML")
    parser.add_argument("-q", "--quiet", action="store_true", help="Less pytest output")

    argv = sys.argv[1:] if argv is None else list(argv)
    passthrough = []
    if "--" in argv:
        split = argv.index("--")
        argv, passthrough = argv[:split], argv[split + 1:]
    args = parser.parse_args(argv)

    code = pytest.main(build_args(args, passthrough))
    if args.coverage and code == 0:
        print("Coverage report written to htmlcov/index.html")
    return int(code)


if __name__ == "__main__":
    sys.exit(main())
