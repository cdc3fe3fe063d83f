import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from confide.domain import CombinationDataset

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_dataset(rows, k=None):
    """Build a dataset from ``(h, y, m)`` triples; ``y`` may be None."""
    rows = list(rows)
    k = k or len(rows[0][2])
    human = [r[0] for r in rows]
    truth = [-1 if r[1] is None else r[1] for r in rows]
    probs = np.array([r[2] for r in rows], dtype=float).reshape(len(rows), k)
    return CombinationDataset(human, probs, truth)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_simplex(rng, n, k, alpha=1.0):
    return rng.dirichlet(np.full(k, alpha), size=n)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; returns the outcome."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
