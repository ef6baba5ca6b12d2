from __future__ import annotations

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from clusterlogit.dataset import Dataset, VariableSchema

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

OUTCOME = VariableSchema("y", "categorical", ("0", "1"), role="outcome")


def make_dataset(rng: np.random.Generator, n: int, n_cont: int = 1, levels: tuple[int, ...] = (2, 3),
                 y=None) -> Dataset:
    """Random mixed dataset with every level present and both outcome classes."""
    feats = [VariableSchema(f"c{j}", "continuous") for j in range(n_cont)]
    feats += [VariableSchema(f"f{j}", "categorical", tuple(f"l{a}" for a in range(L))) for j, L in enumerate(levels)]
    cont = rng.normal(size=(n, n_cont))
    cat = np.column_stack([rng.permutation(np.arange(n) % L) for L in levels]) if levels else np.zeros((n, 0))
    if y is None:
        y = rng.permutation(np.arange(n) % 2)
    return Dataset(tuple(feats), OUTCOME, cont, cat, y)


def random_labels(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    return rng.permutation(np.arange(n) % k) + 1


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line for an acceptance criterion and fail the test if it did not pass."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
