import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heavytop.equilibria import PR, SP1, SP2, make_steady
from heavytop.spectral import (
    DEGENERATE,
    NORMALLY_HYPERBOLIC,
    NORMALLY_STABLE,
    NotAnEquilibrium,
    assemble_linearization,
    classify,
    classify_linearization,
    default_eps_c,
    eigenvector_projectors,
    imaginary_axis_margin,
    kernel_residual_check,
    kernel_vectors,
    semisimple_check,
    spectral_split,
)

from .conftest import SP1_PARAMS, cached_model


def similar(diag_block, seed=0):
    n = diag_block.shape[0]
    T = np.random.default_rng(seed).normal(size=(n, n)) + 3 * np.eye(n)
    return T @ diag_block @ np.linalg.inv(T), T


class TestSplit:
    def test_known_spectrum(self):
        L, T = similar(np.diag([0.0, 0.0, 1.0, 2.0, -1.0]))
        sp = spectral_split(L)
        assert (sp.dim("c"), sp.dim("s"), sp.dim("u")) == (2, 2, 1)
        assert sp.gamma_s == pytest.approx(1.0)
        assert sp.omega_u == pytest.approx(1.0)
        assert max(sp.projector_residuals().values()) <= 1e-10
        ref = eigenvector_projectors(L, sp.eps_c)
        for cl in "csu":
            np.testing.assert_allclose(sp.projectors[cl], ref[cl], atol=1e-9)

    def test_complex_pair(self):
        blk = np.zeros((4, 4))
        blk[:2, :2] = [[0.5, 2.0], [-2.0, 0.5]]
        blk[3, 3] = -0.25
        L, _ = similar(blk, 1)
        sp = spectral_split(L)
        assert (sp.dim("c"), sp.dim("s"), sp.dim("u")) == (1, 2, 1)
        assert max(sp.projector_residuals().values()) <= 1e-10
        assert imaginary_axis_margin(sp) == pytest.approx(0.25)

    def test_pure_imaginary_pair_is_not_center(self):
        blk = np.zeros((3, 3))
        blk[:2, :2] = [[0.0, 1.0], [-1.0, 0.0]]
        sp = spectral_split(blk)
        assert sp.dim("c") == 1
        assert imaginary_axis_margin(sp) <= sp.eps_c

    def test_straddle_warning(self, caplog):
        L = np.diag([0.0, 1.0e-7, 1.0])
        with caplog.at_level(logging.WARNING):
            sp = spectral_split(L)
        assert sp.degenerate
        assert "straddle" in caplog.text

    def test_non_square(self):
        with pytest.raises(ValueError):
            spectral_split(np.zeros((2, 3)))

    @settings(max_examples=30, deadline=None)
    @given(
        st.integers(0, 10_000),
        st.lists(st.floats(0.1, 5.0), min_size=1, max_size=3),
        st.lists(st.floats(-5.0, -0.1), min_size=0, max_size=2),
        st.integers(0, 3),
    )
    def test_projector_algebra(self, seed, stable, unstable, nzero):
        L, _ = similar(np.diag([0.0] * nzero + stable + unstable), seed)
        sp = spectral_split(L)
        assert sp.dim("c") == nzero
        res = sp.projector_residuals()
        cond = np.linalg.cond(L + np.eye(len(L)))
        assert max(res.values()) <= 1e-9 * max(1.0, cond)


class TestSemisimple:
    def test_jordan_block(self):
        L = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 2.0]])
        r = semisimple_check(L)
        assert (r.algebraic, r.geometric) == (2, 1)
        assert not r.passed

    def test_diagonal(self):
        r = semisimple_check(np.diag([0.0, 0.0, 3.0]))
        assert (r.algebraic, r.geometric) == (2, 2)
        assert r.passed and r.transversality > 0.5

    def test_non_normal_but_semisimple(self):
        L, _ = similar(np.diag([0.0, 0.0, 0.5, 4.0]), 7)
        r = semisimple_check(L)
        assert r.passed and r.geometric == 2

    def test_no_zero(self):
        r = semisimple_check(np.diag([1.0, 2.0]))
        assert r.passed and r.algebraic == 0


class TestModelLinearization:
    @pytest.mark.parametrize("n", [5, 8, 15])
    def test_sp1_kernel(self, n):
        m = cached_model(SP1_PARAMS, n)
        s = make_steady(SP1, 1.0, SP1_PARAMS, model=m)
        r1, r2 = kernel_residual_check(s, m)
        assert max(r1, r2) <= 1e-9
        sp = spectral_split(assemble_linearization(s, m))
        assert sp.dim("c") == 2

    def test_kernel_vectors_only_for_sp1(self):
        with pytest.raises(ValueError):
            kernel_vectors(make_steady(PR, 0.5, SP1_PARAMS), 3)

    def test_not_equilibrium(self, model5):
        s = make_steady(PR, 0.5, SP1_PARAMS, model=model5)
        s.state.omega[0] += 0.1
        with pytest.raises(NotAnEquilibrium):
            assemble_linearization(s, model5)

    @pytest.mark.parametrize(
        "fam, alpha, sign, verdict",
        [
            (SP1, 1.0, 1, NORMALLY_HYPERBOLIC),
            (PR, 0.5, 1, NORMALLY_STABLE),
            (PR, 1.0, 1, DEGENERATE),
        ],
    )
    def test_verdicts(self, fam, alpha, sign, verdict, model8):
        s = make_steady(fam, alpha, SP1_PARAMS, branch_sign=sign, model=model8)
        cl = classify(s, model8)
        assert cl.verdict == verdict, cl.reasons
        if verdict != DEGENERATE:
            assert cl.kernel_dim == cl.center_dim == cl.tangent_dim == 2
            assert cl.axis_margin >= 100 * cl.eps_c
            assert cl.semisimple.passed

    def test_sp2_classified(self, model8):
        cl = classify(make_steady(SP2, 1.2, SP1_PARAMS, model=model8), model8)
        assert cl.verdict in (NORMALLY_STABLE, NORMALLY_HYPERBOLIC)
        assert set(cl.summary()) >= {"verdict", "gamma_s", "eigenvalues_re"}

    def test_wrong_tangent_is_degenerate(self, model5):
        s = make_steady(SP1, 1.0, SP1_PARAMS, model=model5)
        L = assemble_linearization(s, model5)
        bogus = np.eye(11)[:, :2]
        assert classify_linearization(L, bogus).verdict == DEGENERATE

    def test_eps_c_scale(self):
        L = np.diag([0.0, 4.0])
        assert default_eps_c(L) == pytest.approx(4e-7)
