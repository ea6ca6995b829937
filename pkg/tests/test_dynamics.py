import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heavytop.body import BodyParams, SystemState
from heavytop.dynamics import (
    DeltaInconsistent,
    Model,
    delta_hat,
    integrate,
    lyapunov_functional,
    lyapunov_monitor,
    monitor_energy,
    monitor_invariants,
    trajectory_header,
    write_trajectory_csv,
)
from heavytop.equilibria import PR, SP1, make_steady
from heavytop.galerkin import build_ball_basis
from heavytop.spectral import assemble_linearization

from .conftest import SP1_PARAMS, cached_model


def rigid_heavy_top(params, u):
    """Euler-Poisson equations written out independently of the package."""
    lam = np.array(params.lam)
    w, g = u[:3], u[3:]
    dw = (np.cross(lam * w, w) + params.beta2 * np.cross([0, 0, 1.0], g)) / lam
    return np.concatenate([dw, np.cross(g, w)])


def random_state(rng, n, scale=0.3):
    g = rng.normal(size=3)
    return np.concatenate([scale * rng.normal(size=n), rng.normal(size=3), g / np.linalg.norm(g)])


class TestRightHandSide:
    def test_rigid_limit(self, rng):
        m = cached_model(SP1_PARAMS, 0)
        for _ in range(5):
            u = random_state(rng, 0)
            np.testing.assert_allclose(m.rhs(0, u), rigid_heavy_top(SP1_PARAMS, u), atol=1e-13)

    def test_wrapper_matches(self, model5, rng):
        u = random_state(rng, 5)
        out = model5.rhs(0, u)
        from heavytop.dynamics import rhs_semidiscrete

        s = rhs_semidiscrete(SystemState.from_vector(u, 5), model5.params, model5.basis)
        np.testing.assert_allclose(s.to_vector(), out, atol=0)

    @pytest.mark.parametrize("n", [0, 3, 8])
    def test_jacobian_finite_difference(self, n, rng):
        m = cached_model(SP1_PARAMS, n)
        u = random_state(rng, n)
        J = m.jacobian(u)
        h = 1e-6
        fd = np.column_stack(
            [(m.rhs(0, u + h * e) - m.rhs(0, u - h * e)) / (2 * h) for e in np.eye(m.dim)]
        )
        assert np.abs(J - fd).max() <= 1e-7 * max(1.0, np.abs(J).max())

    def test_fixed_point_is_stationary(self, model8):
        s = make_steady(SP1, 1.0, SP1_PARAMS, model=model8)
        assert np.linalg.norm(model8.rhs(0, s.vector)) <= 1e-14

    def test_kinetic_energy_two_ways(self, model8, rng):
        for _ in range(5):
            u = random_state(rng, 8)
            assert model8.kinetic(u)[0] == pytest.approx(model8.kinetic_by_definition(u), rel=1e-12)

    def test_mismatched_basis_rejected(self):
        b = build_ball_basis(3, rho=0.5, nu=0.2)
        with pytest.raises(ValueError):
            Model(SP1_PARAMS, b)


class TestIntegrate:
    def test_zero_horizon(self, model5, rng):
        u0 = random_state(rng, 5)
        tr = integrate(model5, u0, 0.0)
        assert len(tr) == 1 and np.array_equal(tr.u[0], u0)

    def test_wrong_length(self, model5):
        with pytest.raises(ValueError):
            integrate(model5, np.zeros(4), 1.0)

    def test_gamma_warning(self, model5):
        u0 = np.zeros(11)
        u0[-1] = 1.1
        with pytest.warns(UserWarning):
            integrate(model5, u0, 0.1, n_samples=3)

    def test_linear_flow_matches_expm(self, model5):
        from scipy.linalg import expm

        s = make_steady(SP1, 1.0, SP1_PARAMS, model=model5)
        L = assemble_linearization(s, model5)
        v0 = np.random.default_rng(3).normal(size=11) * 1e-3
        tr = integrate(model5, v0, 2.0, n_samples=3, linear=-L, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(tr.u[-1], expm(-2.0 * L) @ v0, atol=1e-12)

    def test_blowup_reported(self):
        class Riccati:
            dim = 1

            def rhs(self, t, u):
                return u**2

        tr = integrate(Riccati(), [1.0], 5.0, max_norm=1e6)
        assert tr.status == "blowup"
        assert tr.blowup_time == pytest.approx(1.0, abs=1e-4)


@pytest.fixture(scope="module")
def short_run():
    m = cached_model(SP1_PARAMS, 8)
    rng = np.random.default_rng(11)
    u0 = random_state(rng, 8, scale=0.2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        tr = integrate(m, u0, 20.0, n_samples=2001, rtol=1e-11, atol=1e-12)
    return m, tr


class TestMonitors:
    def test_invariants(self, short_run):
        m, tr = short_run
        rep = monitor_invariants(tr, m)
        assert rep.gamma_drift <= 1e-9
        assert rep.K_drift <= 1e-9
        assert rep.passed(1e-9)

    def test_energy_balance(self, short_run):
        m, tr = short_run
        rep = monitor_energy(tr, m)
        scale = np.abs(rep.total).max()
        assert rep.rate_residual.max() <= 1e-12 * scale
        assert rep.max_increase <= 1e-10 * scale
        # trapezoidal dissipation integral, second order in the sample spacing
        assert rep.balance_residual.max() <= 1e-3 * scale
        assert rep.total[-1] < rep.total[0]

    def test_csv(self, short_run, tmp_path):
        m, tr = short_run
        p = write_trajectory_csv(tmp_path / "t.csv", tr, m)
        lines = p.read_text().splitlines()
        assert lines[0].split(",") == trajectory_header(8)
        assert len(lines) == len(tr) + 1
        assert float(lines[1].split(",")[0]) == 0.0


class TestLyapunov:
    def test_delta_hat_pr(self):
        d, _ = delta_hat(SP1_PARAMS, 0.5, np.array([0, 0, 1.0]))
        assert d == pytest.approx(0.25 * 3 + 1)

    def test_delta_hat_sp1(self):
        s = make_steady(SP1, 1.0, SP1_PARAMS)
        d, comps = delta_hat(SP1_PARAMS, 1.0, s.q)
        assert d == pytest.approx(1.0)  # alpha^2 lam1
        assert comps[0] == pytest.approx(comps[2])

    def test_delta_hat_inconsistent(self):
        with pytest.raises(DeltaInconsistent):
            delta_hat(SP1_PARAMS, 1.0, np.array([0.6, 0.0, 0.8]))

    def test_functional_is_quadratic(self, model5, rng):
        v = rng.normal(size=11)
        g1 = lyapunov_functional(model5, v, 0.5, 1.75)[0]
        assert lyapunov_functional(model5, 3 * v, 0.5, 1.75)[0] == pytest.approx(9 * g1)

    def test_decay_identity(self, model5):
        s = make_steady(PR, 0.5, SP1_PARAMS, model=model5)
        L = assemble_linearization(s, model5)
        v0 = np.random.default_rng(5).normal(size=11) * 1e-3
        tr = integrate(model5, v0, 10.0, n_samples=10001, linear=-L, rtol=1e-12, atol=1e-14)
        rep = lyapunov_monitor(tr, model5, 0.5, s.q, L)
        assert rep.rate_residual.max() <= 1e-12
        assert rep.max_residual <= 1e-7


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_K_and_gamma_preserved_pointwise(seed):
    m = cached_model(SP1_PARAMS, 5)
    u = random_state(np.random.default_rng(seed), 5)
    du = m.rhs(0, u)
    g, dg = u[-3:], du[-3:]
    assert abs(g @ dg) <= 1e-12 * max(1, np.abs(du).max())
    # dK/dt = gamma' . m + gamma . m'
    mom = m.momentum(u)
    dmom = m.momentum(du) - 0 * mom
    assert abs(dg @ mom + g @ dmom) <= 1e-11 * max(1, np.abs(du).max() * np.abs(u).max())
