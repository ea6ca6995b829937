from functools import lru_cache

import numpy as np
import pytest

from heavytop.body import BodyParams
from heavytop.dynamics import Model
from heavytop.galerkin import build_ball_basis

# Shared parameter sets. rho = 0.5 keeps the fluid inertia of the unit ball
# (0.5 * 8 pi / 15 ~ 0.84) below lam1 = 1.
SP1_PARAMS = BodyParams((1.0, 2.0, 3.0), 1.0, rho=0.5, nu=0.5)
FAST_PARAMS = BodyParams((1.0, 2.0, 3.0), 1.0, rho=0.5, nu=0.1)


@lru_cache(maxsize=None)
def cached_model(params: BodyParams, n: int) -> Model:
    return Model(params, build_ball_basis(n, rho=params.rho, nu=params.nu))


@pytest.fixture(scope="session")
def sp1_params():
    return SP1_PARAMS


@pytest.fixture(scope="session")
def fast_params():
    return FAST_PARAMS


@pytest.fixture(scope="session")
def model5():
    return cached_model(SP1_PARAMS, 5)


@pytest.fixture(scope="session")
def model8():
    return cached_model(SP1_PARAMS, 8)


@pytest.fixture(scope="session")
def fast_model8():
    return cached_model(FAST_PARAMS, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def ball_oracle_grid(n_r=14, n_t=14, n_p=28):
    """Spherical product grid built independently of the package quadrature."""
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * (xr + 1)
    wr = 0.5 * wr * r**2
    ct, wt = np.polynomial.legendre.leggauss(n_t)
    ph = np.linspace(0, 2 * np.pi, n_p, endpoint=False)
    wp = 2 * np.pi / n_p
    R, CT, PH = np.meshgrid(r, ct, ph, indexing="ij")
    ST = np.sqrt(1 - CT**2)
    pts = np.stack([R * ST * np.cos(PH), R * ST * np.sin(PH), R * CT], -1).reshape(-1, 3)
    w = (wr[:, None, None] * wt[None, :, None] * wp * np.ones_like(PH)).ravel()
    return pts, w
