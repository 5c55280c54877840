import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=300, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def _verdict(ok):
    return "SKIP" if ok is None else ("PASS" if ok else "FAIL")


@pytest.fixture
def record_criterion():
    """Register an acceptance verdict (None means skipped); printed in the terminal summary."""
    def record(name: str, ok, detail: str = ""):
        _ACCEPTANCE[name] = (_verdict(ok), detail)
        print(f"[{_verdict(ok)}] {name}: {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda k: int(k.split()[0])):
        verdict, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"[{verdict}] {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
