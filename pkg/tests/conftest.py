import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import stochflow as sf
from stochflow.config import tanh_pair_drift


def saddle_drift():
    """Quadratic saddle coupling F(v) = (v2^2, 0) with its Jacobian."""

    def func(v):
        out = np.zeros_like(v)
        out[0] = np.asarray(v)[1] ** 2
        return out

    def dfunc(v):
        return np.array([[0.0, 2.0 * v[1]], [0.0, 0.0]])

    return sf.mode_callable_drift(func, dfunc)


@pytest.fixture(scope="session")
def saddle_model():
    op = sf.OperatorSpec(eigenvalues=(-1.0, 1.0))
    return sf.SemiflowModel(operator=op, drift=saddle_drift(), h=1e-3)


@pytest.fixture(scope="session")
def saddle_station(saddle_model):
    return sf.constant_stationary_point(saddle_model, [0.0, 0.0], (-26.0, 14.0))


@pytest.fixture(scope="session")
def ou_model():
    """Two-mode linear model with additive noise."""
    op = sf.OperatorSpec(eigenvalues=(1.0, 4.0))
    cov = sf.CovarianceSpec.diagonal([0.5, 0.3])
    return sf.SemiflowModel(operator=op, drift=sf.zero_drift(),
                            coupling="additive", covariance=cov, h=1e-2)


@pytest.fixture(scope="session")
def contraction_model():
    """Saddle splitting with a certified bounded Lipschitz drift (L = 0.2)."""
    op = sf.OperatorSpec(eigenvalues=(-1.0, 1.0))
    cov = sf.CovarianceSpec.diagonal([0.3, 0.3])
    return sf.SemiflowModel(operator=op, drift=tanh_pair_drift(0.2, 2),
                            coupling="additive", covariance=cov, h=1e-3)


@pytest.fixture(scope="session")
def gbm_model():
    op = sf.OperatorSpec(eigenvalues=(1.0,))
    cov = sf.CovarianceSpec.diagonal([0.5])
    return sf.SemiflowModel(operator=op, drift=sf.zero_drift(),
                            coupling="diagonal-multiplicative",
                            covariance=cov, h=1e-2)
