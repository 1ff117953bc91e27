import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pln.data import Dataset, one_hot  # noqa: E402

DATA = Path(__file__).parent / "data"
ROOT = Path(__file__).parent.parent
CONFIGS = ROOT / "configs"


def linear_regression_data(P=20, Q=5, J=500, noise=0.1, seed=0):
    """Targets from a random linear map plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((P, J))
    W = rng.standard_normal((Q, P))
    T = W @ X + noise * rng.standard_normal((Q, J))
    return Dataset(X, T, "regression", None, "linear")


def separable_classes(P=5, J=200, seed=0):
    """Two classes split by a random hyperplane with a margin."""
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(P)
    X = rng.standard_normal((P, 4 * J))
    m = w @ X
    keep = np.abs(m) > 0.5
    X, m = X[:, keep][:, :J], m[keep][:J]
    labels = np.where(m > 0, "pos", "neg")
    T, names = one_hot(labels)
    return Dataset(X, T, "classification", names, "separable")


def nonlinear_classes(P=4, Q=3, J=300, seed=0):
    """Classes given by the nearest of Q random centres under a quadratic warp."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (P, J))
    centres = rng.uniform(-1, 1, (Q, P))
    feats = X**2 - 0.3 * X
    d = ((feats.T[:, None, :] - centres[None, :, :] ** 2) ** 2).sum(axis=2)
    labels = [str(k) for k in d.argmin(axis=1)]
    T, names = one_hot(labels)
    return Dataset(X, T, "classification", names, "nonlinear")


@pytest.fixture
def regression_data():
    return linear_regression_data()


@pytest.fixture
def small_classification():
    return nonlinear_classes()


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
