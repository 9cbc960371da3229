import json
from pathlib import Path

import numpy as np
import pytest

from lossy_kalman import LinearSystem, load_system

SYSTEMS_DIR = Path(__file__).resolve().parents[1] / "examples_systems"

_CRITERIA = pytest.StashKey[dict]()


def system_path(name: str) -> Path:
    return SYSTEMS_DIR / f"{name}.json"


@pytest.fixture
def golden():
    """Load one of the bundled example systems by name."""
    return lambda name: load_system(system_path(name))


@pytest.fixture
def scalar_sys():
    return LinearSystem(A=[[2.0]], C=[[1.0]])


@pytest.fixture
def degenerate_pair():
    return LinearSystem(A=np.diag([2.0, -2.0]), C=[[1.0, 1.0]])


@pytest.fixture
def nondegenerate_pair():
    return LinearSystem(A=np.diag([2.0, -2.0]), C=np.eye(2))


@pytest.fixture
def write_system(tmp_path):
    def _write(doc, name="sys.json"):
        path = tmp_path / name
        path.write_text(doc if isinstance(doc, str) else json.dumps(doc))
        return path
    return _write


@pytest.fixture
def record_criterion(request):
    """Store an acceptance outcome for the end-of-run summary."""
    store = request.config.stash.setdefault(_CRITERIA, {})

    def _record(number: int, passed: bool, detail: str):
        store[number] = (passed, detail)
    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_CRITERIA, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        passed, detail = store[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
        )
