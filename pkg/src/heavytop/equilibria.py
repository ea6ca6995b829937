"""Steady states: closed-form families, genericity conditions, Newton refinement."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .body import E3, BodyParams, SystemState
from .dynamics import Model
from .galerkin import build_ball_basis

PR, SP, SP1, SP2 = "PR", "SP", "SP1", "SP2"
FAMILIES = (PR, SP, SP1, SP2)
EPS_GEN = 1e-6


class InfeasibleSteadyState(ValueError):
    pass


class NewtonFailure(RuntimeError):
    pass


def _equal(a: float, b: float, rel: float = 1e-12) -> bool:
    return abs(a - b) <= rel * max(abs(a), abs(b), 1.0)


def enumerate_families(params: BodyParams) -> list[str]:
    """Steady-state families admitted by the multiplicity pattern of the inertia."""
    l1, l2, l3 = params.lam
    e12, e13, e23 = _equal(l1, l2), _equal(l1, l3), _equal(l2, l3)
    if e12 and e23:
        return [PR]
    if e12:
        return [PR, SP]
    if e23:
        return [PR, SP1]
    if e13:
        return [PR, SP2]
    return [PR, SP1, SP2]


_rigid_models: dict[BodyParams, Model] = {}


def _rigid_model(params: BodyParams) -> Model:
    if params not in _rigid_models:
        _rigid_models[params] = Model(params, build_ball_basis(0, rho=params.rho, nu=params.nu))
    return _rigid_models[params]


@dataclass
class SteadyState:
    family: str
    alpha: float
    q: np.ndarray
    state: SystemState
    residual: float

    @property
    def vector(self) -> np.ndarray:
        return self.state.to_vector()

    def with_modes(self, n_modes: int, model: Model | None = None) -> "SteadyState":
        st = SystemState(np.zeros(n_modes), self.alpha * self.q, self.q)
        res = _residual(st, model) if model is not None else self.residual
        return SteadyState(self.family, self.alpha, self.q.copy(), st, res)


def _residual(state: SystemState, model: Model) -> float:
    return float(np.linalg.norm(model.rhs(0.0, state.to_vector())))


def steady_q(
    family: str,
    alpha: float,
    params: BodyParams,
    branch_sign: int = 1,
    unit_q: bool = True,
    free: float | None = None,
) -> np.ndarray:
    """Axis ``q`` of a family member.

    With ``unit_q`` the free coordinate is fixed by ``|q| = 1`` on the branch
    selected by ``branch_sign``; otherwise ``free`` supplies it (for SP it is
    the azimuth of the horizontal component).
    """
    l1, l2, l3 = params.lam
    s = 1.0 if branch_sign >= 0 else -1.0
    if family == PR:
        return np.array([0.0, 0.0, s if unit_q else float(free if free is not None else s)])
    if alpha == 0:
        raise InfeasibleSteadyState(f"{family} requires a nonzero spin rate")
    gap = {SP: l3 - l1, SP1: l3 - l1, SP2: l3 - l2}[family]
    if gap == 0:
        raise InfeasibleSteadyState(f"{family} needs distinct inertia along e3")
    q3 = -params.beta2 / (alpha**2 * gap)
    if family == SP and not unit_q:
        raise ValueError("SP is only built on the unit sphere")
    if unit_q:
        if abs(q3) > 1.0:
            raise InfeasibleSteadyState(f"|q3| = {abs(q3):.6g} > 1: {family} misses the unit sphere")
        h = s * math.sqrt(max(1.0 - q3 * q3, 0.0))
    else:
        if free is None:
            raise ValueError("free coordinate required when unit_q is False")
        h = float(free)
    if family == SP1:
        return np.array([h, 0.0, q3])
    if family == SP2:
        return np.array([0.0, h, q3])
    phi = 0.0 if free is None else float(free)
    return np.array([h * math.cos(phi), h * math.sin(phi), q3])


def make_steady(
    family: str,
    alpha: float,
    params: BodyParams,
    branch_sign: int = 1,
    unit_q: bool = True,
    free: float | None = None,
    model: Model | None = None,
    allow_sp: bool = False,
) -> SteadyState:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if family == SP and not allow_sp:
        raise InfeasibleSteadyState("SP is excluded for admissible bodies; pass allow_sp=True")
    if family != SP and family not in enumerate_families(params):
        raise InfeasibleSteadyState(f"{family} is not a steady family for lam={params.lam}")
    q = steady_q(family, alpha, params, branch_sign, unit_q, free)
    n = model.N if model is not None else 0
    st = SystemState(np.zeros(n), alpha * q, q)
    res = _residual(st, model if model is not None else _rigid_model(params))
    return SteadyState(family, float(alpha), q, st, res)


def steady_identity_residual(s: SteadyState, params: BodyParams) -> float:
    """``|alpha^2 q x I q - beta2 e3 x q|``."""
    q = s.q
    lhs = s.alpha**2 * np.cross(q, params.lam_array * q)
    rhs = params.beta2 * np.cross(E3, q)
    return float(np.linalg.norm(lhs - rhs))


def tangent_basis(s: SteadyState, params: BodyParams, n_modes: int) -> np.ndarray:
    """Analytic tangent vectors of the (unconstrained) family through ``s``, as columns."""
    a, q = s.alpha, s.q
    cols = []

    def vec(dw, dz):
        return np.concatenate([np.zeros(n_modes), dw, dz])

    if s.family == PR:
        s3 = q[2]
        cols.append(vec(s3 * E3, np.zeros(3)))  # d/d alpha
        cols.append(vec(a * E3, E3))  # d/d q3
    elif s.family in (SP1, SP2):
        k = 0 if s.family == SP1 else 1
        ek = np.eye(3)[k]
        dq3 = -2.0 * q[2] / a
        cols.append(vec(q[k] * ek - q[2] * E3, dq3 * E3))  # d/d alpha
        cols.append(vec(a * ek, ek))  # d/d q_k
    else:  # SP: free horizontal components
        dq3 = -2.0 * q[2] / a
        cols.append(vec(q[0] * np.eye(3)[0] + q[1] * np.eye(3)[1] - q[2] * E3, dq3 * E3))
        for k in (0, 1):
            ek = np.eye(3)[k]
            cols.append(vec(a * ek, ek))
    return np.array(cols).T


# ----------------------------------------------------------------------------
# genericity and data conditions
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Condition:
    name: str
    value: float
    target: float
    passed: bool
    degenerate: bool

    @property
    def ratio(self) -> float:
        return self.value / self.target


@dataclass
class ConditionReport:
    conditions: list[Condition] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def __getitem__(self, name: str) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise KeyError(name)


def _neq(name: str, value: float, target: float, eps: float) -> Condition:
    close = abs(value / target - 1.0) <= eps
    return Condition(name, float(value), float(target), not close, close)


def genericity_flags(s: SteadyState, params: BodyParams, eps_gen: float = EPS_GEN) -> ConditionReport:
    """Conditions under which the family member is normally stable or hyperbolic."""
    l1, l2, l3 = params.lam
    b2, a = params.beta2, s.alpha
    rep = ConditionReport()
    if a == 0:
        rep.conditions.append(Condition("alpha_nonzero", 0.0, 0.0, False, True))
        rep.notes.append("zero spin rate: the stability conditions do not apply")
        return rep
    if s.family == PR:
        rep.conditions.append(_neq("pr_lambda1", a**2 / b2 * (l3 - l1), 1.0, eps_gen))
        rep.conditions.append(_neq("pr_lambda2", a**2 / b2 * (l3 - l2), 1.0, eps_gen))
    elif s.family == SP1:
        rep.conditions.append(_neq("sp1", 3 * b2**2 / (a**4 * l1 * (l3 - l1)), 1.0, eps_gen))
    elif s.family == SP2:
        rep.conditions.append(_neq("sp2", 3 * b2**2 / (a**4 * l2 * (l3 - l2)), 1.0, eps_gen))
    else:
        rep.conditions.append(Condition("sp_excluded", float("nan"), 1.0, False, True))
        rep.notes.append("SP lies outside the admissible inertia patterns")
    if abs(np.linalg.norm(s.q) - 1.0) > 1e-9:
        rep.notes.append("q is not a unit vector")
    for c in rep.conditions:
        if c.degenerate:
            rep.notes.append(f"{c.name} within eps_gen of 1: degenerate, the stability conditions do not apply")
    return rep


def data_condition_flags(
    state0: SystemState, model: Model, eps: float = EPS_GEN
) -> ConditionReport:
    """Initial-data conditions under which every trajectory converges exponentially."""
    params = model.params
    l1, l2, l3 = params.lam
    b2 = params.beta2
    K = float(model.K(state0.to_vector())[0])
    rep = ConditionReport()
    for i, li in ((1, l1), (2, l2)):
        rep.conditions.append(_neq(f"spin_{i}", (l3 - li) / l3**2 * K**2, b2, eps))
    for i, li in ((1, l1), (2, l2)):
        rep.conditions.append(_neq(f"tilt_{i}", (l3 - li) * K, 4 * b2**2, eps))
    if abs(K) <= eps * max(1.0, b2):
        rep.notes.append("K = 0: zero-spin data, the only permanent-rotation limit is at rest")
    return rep


# ----------------------------------------------------------------------------
# Newton refinement
# ----------------------------------------------------------------------------


@dataclass
class NewtonResult:
    u: np.ndarray
    iterations: int
    residual: float
    history: list[float]


def bordered_newton(
    rhs,
    jac,
    u0,
    kernel_dim: int,
    tol: float = 1e-12,
    max_iter: int = 30,
    max_distance: float | None = None,
    rank_tol: float = 1e-10,
) -> NewtonResult:
    """Newton on ``rhs(u) = 0`` bordered by the approximate kernel of the Jacobian.

    The ``kernel_dim`` right singular vectors of the smallest singular values
    are appended as constraints ``V^T du = 0``, which removes the drift along
    the equilibrium manifold and restores quadratic convergence.
    """
    u = np.array(u0, dtype=float)
    u_start = u.copy()
    f = rhs(u)
    hist = [float(np.linalg.norm(f))]
    scale = max(1.0, float(np.linalg.norm(u)))
    for it in range(max_iter + 1):
        if hist[-1] <= tol * scale:
            return NewtonResult(u, it, hist[-1], hist)
        if it == max_iter:
            break
        J = jac(u)
        _, sv, Vt = np.linalg.svd(J)
        n = J.shape[0]
        if kernel_dim and n - kernel_dim > 0 and sv[n - kernel_dim - 1] <= rank_tol * sv[0]:
            raise NewtonFailure(
                f"Jacobian rank-deficient beyond the expected {kernel_dim}-dimensional kernel"
            )
        A = np.vstack([J, Vt[n - kernel_dim :]]) if kernel_dim else J
        b = np.concatenate([-f, np.zeros(kernel_dim)])
        du = np.linalg.lstsq(A, b, rcond=None)[0]
        u = u + du
        if not np.all(np.isfinite(u)):
            raise NewtonFailure("Newton iterate became non-finite")
        if max_distance is not None and np.linalg.norm(u - u_start) > max_distance:
            raise NewtonFailure(
                f"Newton left the {max_distance:g}-neighbourhood of the guess"
            )
        f = rhs(u)
        hist.append(float(np.linalg.norm(f)))
    raise NewtonFailure(f"no convergence in {max_iter} iterations (residual {hist[-1]:.3e})")


def identify_family(u: np.ndarray, model: Model, tol: float = 1e-8) -> tuple[str, float, np.ndarray]:
    c, w, g = model.split(np.asarray(u, dtype=float))
    q = g.copy()
    alpha = float(w @ q / (q @ q))
    fams = enumerate_families(model.params)
    scale = max(1.0, np.linalg.norm(q))
    if abs(q[0]) <= tol * scale and abs(q[1]) <= tol * scale:
        return PR, alpha, q
    if SP1 in fams and abs(q[1]) <= tol * scale:
        return SP1, alpha, q
    if SP2 in fams and abs(q[0]) <= tol * scale:
        return SP2, alpha, q
    if SP in fams:
        return SP, alpha, q
    raise NewtonFailure(f"converged point q={q} matches no steady family")


def newton_refine(
    guess, model: Model, tol: float = 1e-12, max_iter: int = 30, max_distance: float = 0.5
) -> tuple[SteadyState, NewtonResult]:
    """Refine ``guess`` onto the equilibrium set of the reduced model."""
    u0 = guess.to_vector() if isinstance(guess, SystemState) else np.asarray(guess, dtype=float)
    kdim = 3 if SP in enumerate_families(model.params) else 2
    res = bordered_newton(
        lambda u: model.rhs(0.0, u), model.jacobian, u0, kdim, tol, max_iter, max_distance
    )
    fam, alpha, q = identify_family(res.u, model)
    st = SystemState.from_vector(res.u, model.N)
    return SteadyState(fam, alpha, q, st, res.residual), res
