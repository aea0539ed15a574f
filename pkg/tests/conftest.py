import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def two_class_data(rng, n=(40, 40), m=(30, 30, 30), p=2, sep=8.0):
    """Two labelled classes and a test set with an extra unseen class."""
    from raedda import LabeledDataset, UnlabeledDataset

    means = np.zeros((3, p))
    means[1, 0] = sep
    means[2, min(1, p - 1)] = -sep if p == 1 else sep
    X = np.vstack([means[g] + rng.normal(size=(k, p)) for g, k in enumerate(n)])
    labels = np.repeat(np.arange(len(n)), n)
    Y = np.vstack([means[g] + rng.normal(size=(k, p)) for g, k in enumerate(m)])
    return LabeledDataset(X, labels, tuple(str(g + 1) for g in range(len(n)))), UnlabeledDataset(Y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line, file=sys.__stdout__, flush=True)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
