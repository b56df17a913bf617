import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import multicox as mx


@pytest.fixture(scope="session")
def unit_interval():
    return mx.ObservationDomain.interval(0.0, 1.0)


@pytest.fixture(scope="session")
def cubic_basis(unit_interval):
    """Cubic B-splines, 10 interior knots on [0, 1] (q = 14)."""
    return mx.make_bspline_basis(unit_interval, 10, 3)


@pytest.fixture(scope="session")
def cubic_setup(cubic_basis):
    quad = cubic_basis.default_quadrature()
    gram = mx.gram_matrix(cubic_basis, quad)
    penalty = mx.penalty_matrix(cubic_basis, quad)
    return cubic_basis, quad, gram, penalty


def make_params(basis, quad, gram, penalty, c0, C=None, sigma=None):
    q = basis.q
    C = np.zeros((q, 0)) if C is None else C
    sigma = np.zeros(0) if sigma is None else np.asarray(sigma, dtype=float)
    return mx.ModelParams(c0=c0, C=C, sigma=sigma, basis=basis, gram=gram, penalty=penalty, quad=quad)


@pytest.fixture(scope="session")
def flat_rate5(cubic_setup):
    """p=1 fixture from the oracle checks: lambda0 = 5, phi1 = 1, sigma = 0.5."""
    basis, quad, gram, penalty = cubic_setup
    c0 = np.full(basis.q, np.log(5.0))
    C = np.ones((basis.q, 1))
    return make_params(basis, quad, gram, penalty, c0, C, [0.5])


@pytest.fixture(scope="session")
def five_point_pattern():
    return mx.PointPattern("fixture", np.array([0.1, 0.3, 0.5, 0.7, 0.9]))


@pytest.fixture(scope="session")
def triangle_domain():
    poly = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return mx.ObservationDomain.planar([0.0, 1.0, 0.0, 1.0], polygon=poly)
