import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from heavytop.body import BodyParams, SystemState
from heavytop.dynamics import Trajectory
from heavytop.equilibria import PR, SP1, SP2, make_steady
from heavytop.omega_limit import (
    candidate_distance,
    conserved_K,
    match_terminal,
    multiplicity_case,
    predict_limit_candidates,
    real_roots,
    spin_quartic,
)

from .conftest import SP1_PARAMS


class TestQuartic:
    def test_coefficients(self):
        # (lam3 - lam1) lam1 a^4 - (lam3 - lam1) K a^3 + beta2^2 = 2 a^4 - 3 a^3 + 1
        np.testing.assert_array_equal(spin_quartic(SP1_PARAMS, 1.5, SP1), [2, -3, 0, 0, 1])
        np.testing.assert_array_equal(spin_quartic(SP1_PARAMS, 1.5, SP2), [2, -1.5, 0, 0, 1])

    def test_roots_against_bracketing(self):
        p = lambda a: 2 * a**4 - 3 * a**3 + 1  # noqa: E731
        second = brentq(p, 1.1, 1.5, xtol=1e-15)
        r = real_roots([2, -3, 0, 0, 1])
        np.testing.assert_allclose(r, [1.0, second], atol=1e-12)

    def test_no_real_roots(self):
        assert real_roots([2, -1.5, 0, 0, 1]).size == 0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-3, 3).filter(lambda v: abs(v) > 0.05), min_size=1, max_size=4))
    def test_recovers_real_roots(self, roots):
        roots = sorted(roots)
        if np.min(np.diff(roots), initial=1.0) < 1e-2:
            return
        r = real_roots(np.poly(roots))
        np.testing.assert_allclose(r, roots, atol=1e-6)


class TestCandidates:
    def test_reference_case(self):
        cs = predict_limit_candidates(SP1_PARAMS, 1.5)
        assert cs.case == 4
        sp1 = sorted({round(c.alpha, 12) for c in cs.by_family(SP1)})
        assert sp1[0] == pytest.approx(1.0, abs=1e-12)
        assert 1.2 <= sp1[1] <= 1.3
        assert cs.by_family(SP2) == []
        assert sorted(c.spin for c in cs.by_family(PR)) == pytest.approx([-0.5, 0.5])
        for c in cs.feasible:
            assert c.identity_residual <= 1e-12
            assert c.poly_residual <= 1e-12

    def test_candidates_conserve_K(self):
        cs = predict_limit_candidates(SP1_PARAMS, 1.5)
        for c in cs.feasible:
            K = c.alpha * c.q @ (SP1_PARAMS.lam_array * c.q)
            if c.family == PR:
                # both PR branches have K = alpha lam3 q3^2 = alpha lam3
                assert K == pytest.approx(1.5)
            else:
                assert K == pytest.approx(1.5, abs=1e-12)

    def test_zero_K(self):
        cs = predict_limit_candidates(SP1_PARAMS, 0.0)
        assert cs.roots[PR] == [0.0]
        assert cs.by_family(SP1) == [] and cs.by_family(SP2) == []

    @pytest.mark.parametrize(
        "lam, case", [((1, 1, 1), 1), ((1, 3, 3), 2), ((2, 1, 2), 3), ((1, 2, 3), 4), ((1, 1, 3), 0)]
    )
    def test_cases(self, lam, case):
        assert multiplicity_case(BodyParams(lam, 1.0)) == case

    def test_spherical_case_only_pr(self):
        cs = predict_limit_candidates(BodyParams((2, 2, 2), 1.0), 1.0)
        assert {c.family for c in cs.candidates} == {PR}

    def test_classified_with_model(self, model5):
        cs = predict_limit_candidates(SP1_PARAMS, 1.5, model=model5)
        assert all(c.verdict is not None for c in cs.feasible)
        d = cs.to_dict()
        assert d["K"] == 1.5 and len(d["candidates"]) == len(cs.candidates)


class TestMatching:
    def test_conserved_K_requires_unit_gamma(self, model5):
        u = np.zeros(11)
        u[-1] = 2.0
        with pytest.raises(ValueError):
            conserved_K(u, model5)

    def test_conserved_K_state(self, model5):
        s = make_steady(PR, 0.5, SP1_PARAMS, model=model5)
        assert conserved_K(s.state, model5) == pytest.approx(1.5)

    def test_stationary_trajectory_matches(self, model5):
        s = make_steady(PR, 0.5, SP1_PARAMS, model=model5)
        tr = Trajectory(np.array([0.0, 1.0]), np.vstack([s.vector, s.vector]), 5)
        cs = predict_limit_candidates(SP1_PARAMS, 1.5)
        rep = match_terminal(tr, cs, model5, certify=False)
        assert rep.status == "matched"
        assert rep.candidate.family == PR and rep.distance <= 1e-12
        assert rep.to_dict()["status"] == "matched"

    def test_moving_terminal_state(self, model5):
        u = make_steady(PR, 0.5, SP1_PARAMS, model=model5).vector.copy()
        u[5] = 0.3
        tr = Trajectory(np.array([0.0, 1.0]), np.vstack([u, u]), 5)
        rep = match_terminal(tr, predict_limit_candidates(SP1_PARAMS, 1.5), model5)
        assert rep.status == "not_converged"

    def test_distance(self):
        cs = predict_limit_candidates(SP1_PARAMS, 1.5)
        c = cs.by_family(PR)[0]
        assert candidate_distance(c.alpha, c.q, c) == 0.0
