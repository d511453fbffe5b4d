import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True)
def _deterministic():
    torch.manual_seed(0)
    np.random.seed(0)
    torch.set_num_threads(1)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one visible pass/fail line per acceptance criterion, printed after the run
_ACCEPTANCE: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    entry = _ACCEPTANCE.setdefault(name, {"outcome": "passed", "duration": 0.0})
    entry["duration"] += report.duration
    if report.outcome != "passed":
        entry["outcome"] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        entry = _ACCEPTANCE[name]
        verdict = "PASS" if entry["outcome"] == "passed" else "FAIL"
        terminalreporter.write_line(
            f"{verdict}  {name}  ({entry['duration']:.1f}s)")
