import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from momentbayes.core import Dataset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Record a one-line acceptance verdict, echoed in the terminal summary."""

    def record(criterion: str, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.append(f"{criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
        print(_ACCEPTANCE[-1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


def exact_mean_interval_data(n: int, mean1: float = 0.0, mean2: float = 5.0, seed: int = 0) -> Dataset:
    """Interval data whose column means are exactly ``mean1`` and ``mean2``."""
    rng = np.random.default_rng(seed)
    e = rng.normal(0.0, 0.3, (n, 2))
    e -= e.mean(axis=0)
    return Dataset(np.column_stack([mean1 + e[:, 0], mean2 + e[:, 1]]), ("y1", "y2"))


@pytest.fixture
def interval_data_5000():
    return exact_mean_interval_data(5000)
