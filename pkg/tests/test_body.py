import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heavytop.body import BodyParams, SystemState, hat, inertia_apply, validate_hypotheses

finite = st.floats(-10, 10, allow_nan=False)
vec3 = st.lists(finite, min_size=3, max_size=3).map(np.array)
lam3 = st.lists(st.floats(0.1, 10), min_size=3, max_size=3).map(tuple)


class TestValidate:
    def test_distinct_moments_pass(self):
        rep = validate_hypotheses(BodyParams((1, 2, 3), 1.0, rho=1.0, nu=0.1))
        assert rep.passed
        assert rep.failures() == []

    def test_excluded_axisymmetry(self):
        rep = validate_hypotheses(BodyParams((1, 1, 3), 1.0))
        assert not rep.passed
        assert not rep["axisymmetry_excluded"].passed

    def test_triangle_inequality(self):
        rep = validate_hypotheses(BodyParams((1, 1, 5), 1.0))
        assert not rep["realizability"].passed
        assert "realizability" in rep.failures()

    @pytest.mark.parametrize("lam", [(1, 1, 1), (2, 1, 1), (1, 2, 1)])
    def test_admitted_symmetric_patterns(self, lam):
        assert validate_hypotheses(BodyParams(lam, 1.0))["axisymmetry_excluded"].passed

    @pytest.mark.parametrize("field", ["beta2", "rho", "nu"])
    def test_nonpositive_rejected(self, field):
        p = BodyParams((1, 2, 3), 1.0).with_(**{field: -1.0})
        assert not validate_hypotheses(p)["positivity"].passed

    def test_cavity_inertia_is_advisory(self):
        rep = validate_hypotheses(BodyParams((1, 2, 3), 1.0, rho=1.0))
        assert not rep["cavity_inertia"].passed
        assert not rep["cavity_inertia"].blocking
        assert rep.passed

    @given(lam3)
    def test_pure(self, lam):
        p = BodyParams(lam, 1.0)
        assert validate_hypotheses(p) == validate_hypotheses(p)


class TestInertia:
    def test_examples(self):
        p = BodyParams((1, 2, 3), 1.0)
        np.testing.assert_array_equal(inertia_apply(p, np.ones(3)), [1, 2, 3])
        np.testing.assert_array_equal(inertia_apply(p, np.zeros(3)), 0)
        w = np.array([np.sqrt(3) / 2, 0, -0.5])
        np.testing.assert_allclose(inertia_apply(p, w), [np.sqrt(3) / 2, 0, -1.5])

    @given(lam3, vec3, vec3)
    def test_symmetric(self, lam, u, w):
        p = BodyParams(lam, 1.0)
        assert u @ inertia_apply(p, w) == pytest.approx(w @ inertia_apply(p, u), abs=1e-9)

    @given(vec3, vec3)
    def test_hat_is_cross(self, w, u):
        np.testing.assert_allclose(hat(w) @ u, np.cross(w, u), atol=1e-12)


class TestState:
    def test_roundtrip(self):
        s = SystemState(np.arange(4.0), [1, 2, 3], [0, 0, 1])
        s2 = SystemState.from_vector(s.to_vector(), 4)
        np.testing.assert_array_equal(s2.to_vector(), s.to_vector())
        assert s2.n_modes == 4

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            SystemState.from_vector(np.zeros(9), 4)

    def test_params_frozen(self):
        p = BodyParams((1, 2, 3), 1.0, rho=2.0, nu=0.25)
        assert p.mu == 0.5
        with pytest.raises(AttributeError):
            p.beta2 = 3.0
