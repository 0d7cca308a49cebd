import numpy as np
import pytest

from peakflow.features import FeatureMatrix

T0 = np.datetime64("2000-01-01T00:00:00")
STEP = np.timedelta64(6 * 3600, "s")


def make_matrix(X, y, columns=None):
    X = np.array(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.array(y, dtype=float)
    ts = T0 + STEP * np.arange(len(y))
    cols = tuple(columns) if columns else tuple(f"f{i}" for i in range(X.shape[1]))
    return FeatureMatrix(X, y, cols, ts, ts + STEP)


@pytest.fixture
def linear_rows():
    rng = np.random.default_rng(11)
    X = rng.uniform(0, 10, size=(500, 4))
    y = 2.0 * X[:, 0] - X[:, 1] + 0.5 * X[:, 2] * X[:, 3] + rng.normal(0, 0.5, 500)
    return make_matrix(X, y)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
