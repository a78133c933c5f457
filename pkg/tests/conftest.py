import numpy as np
import pytest

from fhci.model import SmallAreaDataset

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> str:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def unbalanced8():
    r = np.random.default_rng(8)
    X = np.column_stack([np.ones(8), r.uniform(size=8)])
    D = np.array([0.2, 0.5, 0.5, 1.0, 1.0, 2.0, 2.0, 5.0])
    y = X @ np.array([1.0, 2.0]) + r.normal(size=8) * np.sqrt(0.8 + D)
    return SmallAreaDataset(y, D, X)


@pytest.fixture
def balanced15():
    r = np.random.default_rng(15)
    X = np.column_stack([np.ones(15), r.uniform(size=15)])
    y = X @ np.array([0.5, 1.0]) + r.normal(size=15) * np.sqrt(2.0)
    return SmallAreaDataset(y, np.ones(15), X)
