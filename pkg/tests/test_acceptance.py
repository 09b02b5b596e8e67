"""Acceptance criteria 1-11, each at its stated tolerance.

Every test prints one PASS/FAIL line; the lines are collected again in the
pytest terminal summary. Criterion 11 runs the ``verify`` command twice in
separate processes and compares the output bytes.
"""

import os
import subprocess
import sys
import time
import warnings

import pytest

from fbmcontrol import acceptance
from fbmcontrol.system_model import GateWarning

pytestmark = pytest.mark.slow


def _check(number, report):
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GateWarning)
        result = acceptance.CRITERIA[number]()
    report(result.line() + f" [{time.perf_counter() - start:.1f}s]")
    return result


@pytest.mark.parametrize("number", range(1, 11))
def test_criterion(number, acceptance_report):
    result = _check(number, acceptance_report)
    assert result.passed, result.line()


def test_criterion_1_runtime_budget():
    start = time.perf_counter()
    acceptance.clear_caches()
    acceptance.criterion_1()
    assert time.perf_counter() - start < 120


def test_criterion_9_runtime_budget():
    start = time.perf_counter()
    acceptance.clear_caches()
    acceptance.criterion_9()
    assert time.perf_counter() - start < 300


def test_criterion_11(tmp_path, acceptance_report):
    env = dict(os.environ)
    env.pop("FBMCONTROL_OUT", None)
    dirs = [tmp_path / "first", tmp_path / "second"]
    procs = [
        subprocess.Popen([sys.executable, "-m", "fbmcontrol", "verify", "--out", str(d)],
                         stdout=subprocess.PIPE, stderr=subprocess.PIPE, env=env)
        for d in dirs
    ]
    codes = [p.wait(timeout=1800) for p in procs]
    outputs = []
    for d in dirs:
        names = sorted(p.name for p in d.iterdir() if p.name != "manifest.json")
        outputs.append({name: (d / name).read_bytes() for name in names})
    result = acceptance.reproducibility_result(*outputs)
    acceptance_report(result.line() + f" exit_codes={codes}")
    assert codes[0] == codes[1] and codes[0] in (0, 1)
    assert set(outputs[0]) == {"acceptance.csv", "steering_refinement.csv"}
    assert result.passed, result.line()
