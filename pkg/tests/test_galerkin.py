import numpy as np
import pytest

from heavytop.body import BodyParams
from heavytop.galerkin import (
    BasisError,
    assemble_mass_block,
    ball_quadrature,
    build_ball_basis,
    coupling_a,
    family_size_cached,
    load_or_build,
    raw_fields,
)

from .conftest import ball_oracle_grid


@pytest.fixture(scope="module")
def basis5():
    return build_ball_basis(5, rho=0.5, nu=0.1)


@pytest.fixture(scope="module")
def basis15():
    return build_ball_basis(15, rho=0.5, nu=0.1)


class TestQuadrature:
    @pytest.mark.parametrize("deg", [0, 2, 5, 8])
    def test_monomial_moments(self, deg):
        # int_B x^2a y^2b z^2c over the unit ball, compared with an independent grid
        q = ball_quadrature(deg)
        pts, w = ball_oracle_grid(20, 20, 40)
        for a, b, c in [(0, 0, 0), (1, 0, 0), (1, 1, 0), (2, 0, 1)]:
            if 2 * (a + b + c) > deg:
                continue
            f = lambda p: p[:, 0] ** (2 * a) * p[:, 1] ** (2 * b) * p[:, 2] ** (2 * c)  # noqa: E731
            assert f(q.points) @ q.weights == pytest.approx(f(pts) @ w, rel=1e-12)

    def test_volume(self):
        assert ball_quadrature(3).weights.sum() == pytest.approx(4 * np.pi / 3, rel=1e-14)


class TestRawFields:
    def test_simplest_field_closed_form(self):
        # curl((1 - r^2)^2 e3) = (-4 y (1 - r^2), 4 x (1 - r^2), 0)
        f = raw_fields(0)[2]
        pts = np.random.default_rng(0).uniform(-0.6, 0.6, (20, 3))
        v, _ = f.evaluate(pts)
        s = 1 - (pts**2).sum(1)
        np.testing.assert_allclose(v[0], -4 * pts[:, 1] * s, atol=1e-13)
        np.testing.assert_allclose(v[1], 4 * pts[:, 0] * s, atol=1e-13)
        np.testing.assert_allclose(v[2], 0, atol=1e-13)

    def test_family_sizes(self):
        assert [family_size_cached(d) for d in range(3)] == [3, 11, 26]


class TestBasis:
    def test_single_mode(self):
        b = build_ball_basis(1, rho=0.5)
        assert b.M.shape == (1, 1) and b.M[0, 0] > 0 and b.S[0, 0] > 0

    @pytest.mark.parametrize("n", [1, 3, 5, 8, 11, 15])
    def test_skew_invariants(self, n):
        b = build_ball_basis(n, rho=0.5)
        for g in b.G:
            assert np.abs(g + g.T).max() <= 1e-10
        assert np.abs(b.C + b.C.transpose(2, 1, 0)).max() <= 1e-10
        np.testing.assert_allclose(b.M, b.M.T, atol=0)
        assert np.linalg.eigvalsh(b.M)[0] > 0
        assert np.linalg.eigvalsh(b.S)[0] > 0

    def test_convection_against_oracle_quadrature(self, basis5):
        pts, w = ball_oracle_grid()
        V, D = basis5.evaluate(pts)
        adv = np.einsum("knq,lmnq->klmq", V, D)
        C = basis5.rho * np.einsum("jmq,klmq,q->jkl", V, adv, w)
        np.testing.assert_allclose(basis5.C, C, atol=1e-12)
        assert np.abs(C + C.transpose(2, 1, 0)).max() <= 1e-10

    def test_solenoidal_and_boundary(self, basis15):
        pts, w = ball_oracle_grid(6, 6, 12)
        _, D = basis15.evaluate(pts)
        assert np.abs(np.einsum("niiq->nq", D)).max() <= 1e-12
        sph = np.random.default_rng(1).normal(size=(50, 3))
        sph /= np.linalg.norm(sph, axis=1, keepdims=True)
        V, _ = basis15.evaluate(sph)
        assert np.abs(V).max() <= 1e-12

    def test_zero_mean(self, basis15):
        pts, w = ball_oracle_grid()
        V, _ = basis15.evaluate(pts)
        assert np.abs(V @ w).max() <= 1e-10

    def test_energy_of_reconstruction(self, basis15, rng):
        c = rng.normal(size=15)
        pts, w = ball_oracle_grid()
        v = basis15.velocity(c, pts)
        assert basis15.rho * np.einsum("iq,iq,q->", v, v, w) == pytest.approx(c @ basis15.M @ c, rel=1e-12)

    def test_too_many_modes(self):
        with pytest.raises(BasisError):
            build_ball_basis(200)

    def test_low_quadrature_detected(self):
        with pytest.raises(BasisError):
            build_ball_basis(8, quad_degree=3)


class TestCouplings:
    params = BodyParams((1, 2, 3), 1.0, rho=0.5, nu=0.1)

    def test_a_zero_and_linear(self, basis5, rng):
        assert np.all(coupling_a(basis5, self.params, np.zeros(5)) == 0)
        c = rng.normal(size=5)
        np.testing.assert_allclose(coupling_a(basis5, self.params, -c), -coupling_a(basis5, self.params, c))

    def test_a_against_direct_quadrature(self, basis5, rng):
        c = rng.normal(size=5)
        pts, w = ball_oracle_grid()
        v = basis5.velocity(c, pts)
        L = basis5.rho * np.cross(pts.T, v, axis=0) @ w
        np.testing.assert_allclose(coupling_a(basis5, self.params, c), -L / self.params.lam_array, atol=1e-13)

    def test_a_dimension_mismatch(self, basis5):
        with pytest.raises(ValueError):
            coupling_a(basis5, self.params, np.zeros(4))

    def test_mass_block(self, basis5):
        Eh = assemble_mass_block(basis5, self.params)
        assert np.array_equal(Eh, Eh.T)
        assert np.linalg.eigvalsh(Eh)[0] > 0

    def test_block_diagonal_case(self, basis5):
        zero_b = build_ball_basis(5, rho=0.5, nu=0.1)
        object.__setattr__(zero_b, "B", np.zeros((5, 3)))
        ev = np.linalg.eigvalsh(assemble_mass_block(zero_b, self.params))
        np.testing.assert_allclose(ev, np.sort(np.r_[np.linalg.eigvalsh(basis5.M), 1, 2, 3]), atol=1e-14)

    def test_indefinite_mass_block_rejected(self):
        b = build_ball_basis(15, rho=1.0)
        with pytest.raises(BasisError):
            assemble_mass_block(b, BodyParams((1, 2, 3), 1.0, rho=1.0))


class TestCache:
    def test_hit_is_bit_identical(self, tmp_path):
        a = load_or_build(8, None, 0.5, 0.1, tmp_path)
        b = load_or_build(8, None, 0.5, 0.1, tmp_path)
        c = build_ball_basis(8, rho=0.5, nu=0.1)
        for name in ("M", "S", "B", "C", "G"):
            assert np.array_equal(getattr(a, name), getattr(c, name))
            assert np.array_equal(getattr(b, name), getattr(c, name))
        assert len(list(tmp_path.glob("*.npz"))) == 1
