import numpy as np
import pytest

from fedate.data import FederatedDataset, StudyDataset


def random_federation(gen: np.random.Generator, K: int, d: int, n_min: int | None = None,
                      n_max: int = 60, noise: float = 1.0, h=None) -> FederatedDataset:
    """Full-rank federation with every arm holding at least ``d + 2`` rows."""
    n_min = 2 * (d + 2) if n_min is None else n_min
    c1, c0 = gen.normal(size=2)
    b1, b0 = gen.normal(size=(2, d))
    studies = []
    for k in range(1, K + 1):
        n = int(gen.integers(n_min, max(n_min, n_max) + 1))
        n1 = int(gen.integers(d + 2, n - (d + 2) + 1))
        w = np.zeros(n, dtype=np.int8)
        w[gen.permutation(n)[:n1]] = 1
        X = gen.normal(size=(n, d)) + gen.normal(size=d)
        y = np.where(w == 1, c1 + X @ b1, c0 + X @ b0) + noise * gen.normal(size=n)
        if h is not None:
            y = y + h[k - 1]
        studies.append(StudyDataset(k, X, w, y))
    return FederatedDataset(tuple(studies))


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
