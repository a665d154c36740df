import time

import numpy as np
import pytest

from sykcode.models import ModelParams


@pytest.fixture(scope="session")
def syk():
    return ModelParams("syk", J=1.0)


@pytest.fixture(scope="session")
def free():
    return ModelParams("syk", J=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance report -------------------------------------------------------

SUITE_BUDGET = 1800.0
_criteria: dict[int, list] = {}
_clock = {}


def pytest_sessionstart(session):
    _clock["start"] = time.perf_counter()


@pytest.fixture(scope="session")
def criterion():
    """``criterion(k, name, passed, detail)`` records one check of acceptance criterion ``k``."""

    def record(k, name, passed, detail=""):
        _criteria.setdefault(k, []).append((name, bool(passed), detail))
        print(f"criterion {k} {name}: {'PASS' if passed else 'FAIL'} {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in sorted(_criteria):
        checks = _criteria[k]
        ok = all(p for _, p, _ in checks)
        parts = "; ".join(f"{n} {'ok' if p else 'FAILED'} ({d})" for n, p, d in checks)
        tr.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {parts}")
    elapsed = time.perf_counter() - _clock.get("start", time.perf_counter())
    tr.write_line(f"suite runtime {elapsed:.0f} s (budget {SUITE_BUDGET:.0f} s): "
                  f"{'PASS' if elapsed < SUITE_BUDGET else 'FAIL'}")
