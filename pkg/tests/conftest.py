import time
import warnings
from types import SimpleNamespace

import numpy as np
import pytest

from hncnav.geometry import build_beam_geometry

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def geom():
    return build_beam_geometry(np.radians(20.0))


@pytest.fixture(scope="session")
def pipeline():
    """Default corpus, both pattern models and the test-mission reports (about 100 s)."""
    from hncnav.pipeline import run_default_pipeline

    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = run_default_pipeline()
    return SimpleNamespace(result=result, elapsed=time.perf_counter() - start)


@pytest.fixture
def record_criterion():
    """Store the verdict of one acceptance criterion for the end-of-run summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}")
