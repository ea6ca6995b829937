"""Candidate terminal states from conserved data, and matching of simulated runs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .body import BodyParams, SystemState
from .dynamics import Model, Trajectory
from .equilibria import (
    PR,
    SP,
    SP1,
    SP2,
    NewtonFailure,
    SteadyState,
    enumerate_families,
    make_steady,
    newton_refine,
    steady_identity_residual,
)
from .normal_form import NotConverged, SemilinearSystem, certify_decay
from .spectral import classify

TOL_MATCH = 1e-4


def conserved_K(state0, model: Model) -> float:
    """``K = gamma . (I omega + B^T c)``, the momentum component along gravity."""
    u = state0.to_vector() if isinstance(state0, SystemState) else np.asarray(state0, dtype=float)
    gn = np.linalg.norm(u[-3:])
    if abs(gn - 1.0) > 1e-9:
        raise ValueError(f"|gamma0| = {gn:.12g} is not 1")
    return float(model.K(u)[0])


def multiplicity_case(params: BodyParams) -> int:
    """Case label 1-4 of the limit-set characterisation (0 for the excluded pattern)."""
    fams = enumerate_families(params)
    if fams == [PR]:
        return 1
    if fams == [PR, SP1]:
        return 2
    if fams == [PR, SP2]:
        return 3
    if fams == [PR, SP1, SP2]:
        return 4
    return 0


def spin_quartic(params: BodyParams, K: float, family: str) -> np.ndarray:
    """Coefficients (highest first) of the spin-rate quartic for SP1 or SP2."""
    l1, l2, l3 = params.lam
    li = l2 if family == SP2 else l1
    g = l3 - li
    return np.array([g * li, -g * K, 0.0, 0.0, params.beta2**2])


def real_roots(coeffs, imag_tol: float = 1e-9, polish: int = 1) -> np.ndarray:
    """Real roots through the companion-matrix eigenvalues, then Newton polishing."""
    coeffs = np.asarray(coeffs, dtype=float)
    r = np.roots(coeffs)
    scale = max(1.0, float(np.abs(r).max(initial=0.0)))
    real = np.sort(r[np.abs(r.imag) <= imag_tol * scale].real)
    d = np.polyder(coeffs)
    out = []
    for x in real:
        for _ in range(polish):
            dp = np.polyval(d, x)
            if dp != 0:
                x = x - np.polyval(coeffs, x) / dp
        out.append(x)
    return np.array(out)


@dataclass
class Candidate:
    family: str
    alpha: float
    q: np.ndarray
    feasible: bool
    poly_residual: float
    identity_residual: float = float("nan")
    verdict: str | None = None
    gamma_s: float | None = None

    @property
    def spin(self) -> float:
        """Signed spin ``omega . e3`` (``= alpha q3``)."""
        return float(self.alpha * self.q[2])

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "alpha": float(self.alpha),
            "q": [float(v) for v in self.q],
            "spin": self.spin,
            "feasible": bool(self.feasible),
            "poly_residual": float(self.poly_residual),
            "identity_residual": float(self.identity_residual),
            "verdict": self.verdict,
            "gamma_s": self.gamma_s,
        }


@dataclass
class LimitCandidateSet:
    K: float
    case: int
    candidates: list[Candidate] = field(default_factory=list)
    roots: dict[str, list[float]] = field(default_factory=dict)

    def by_family(self, family: str, feasible_only: bool = True) -> list[Candidate]:
        return [c for c in self.candidates if c.family == family and (c.feasible or not feasible_only)]

    @property
    def feasible(self) -> list[Candidate]:
        return [c for c in self.candidates if c.feasible]

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "case": self.case,
            "roots": {k: [float(x) for x in v] for k, v in self.roots.items()},
            "candidates": [c.to_dict() for c in self.candidates],
        }


def predict_limit_candidates(
    params: BodyParams, K: float, model: Model | None = None
) -> LimitCandidateSet:
    """All steady states compatible with the conserved value ``K``.

    Permanent rotations have ``alpha = K / lam3`` with ``q = +-e3``, so the
    signed spins are ``+-K / lam3``. Tilted spins solve the quartic of their
    family; roots whose ``|q3|`` exceeds one are kept but flagged infeasible.
    With ``model`` each feasible candidate is classified.
    """
    l3 = params.lam[2]
    out = LimitCandidateSet(float(K), multiplicity_case(params))
    a_pr = K / l3
    out.roots[PR] = [a_pr, -a_pr] if a_pr != 0 else [0.0]
    for sgn in (1, -1):
        s = make_steady(PR, a_pr, params, branch_sign=sgn)
        out.candidates.append(
            Candidate(PR, a_pr, s.q, True, abs(a_pr * l3 * s.q[2] ** 2 - K), steady_identity_residual(s, params))
        )
    for fam in enumerate_families(params):
        if fam == PR:
            continue
        base = SP1 if fam in (SP, SP1) else SP2
        coeffs = spin_quartic(params, K, base)
        roots = real_roots(coeffs)
        out.roots[fam] = [float(r) for r in roots]
        cscale = float(np.abs(coeffs).max())
        for a in roots:
            pres = abs(float(np.polyval(coeffs, a))) / cscale
            gap = l3 - (params.lam[1] if base == SP2 else params.lam[0])
            q3 = -params.beta2 / (a * a * gap)
            if abs(q3) > 1.0:
                q = np.zeros(3)
                q[2] = q3
                out.candidates.append(Candidate(fam, float(a), q, False, pres))
                continue
            for sgn in (1, -1):
                s = make_steady(fam, float(a), params, branch_sign=sgn, allow_sp=fam == SP)
                out.candidates.append(
                    Candidate(fam, float(a), s.q, True, pres, steady_identity_residual(s, params))
                )
    if model is not None:
        for c in out.candidates:
            if not c.feasible:
                continue
            k = {PR: 2, SP1: 0, SP2: 1, SP: 0}[c.family]
            sgn = 1 if c.q[k] >= 0 else -1
            s = make_steady(c.family, c.alpha, params, sgn, model=model, allow_sp=c.family == SP)
            cl = classify(s, model)
            c.verdict = cl.verdict
            c.gamma_s = cl.split.gamma_s if math.isfinite(cl.split.gamma_s) else None
    return out


def candidate_distance(alpha: float, q: np.ndarray, c: Candidate) -> float:
    return float(math.sqrt((alpha - c.alpha) ** 2 + float(np.sum((q - c.q) ** 2))))


@dataclass
class MatchReport:
    status: str  # matched | no_match | not_converged
    candidate: Candidate | None
    distance: float
    terminal_residual: float
    u_inf: np.ndarray | None
    K0: float
    K_terminal: float
    K_limit: float | None
    certificate: dict | None
    message: str

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "candidate": self.candidate.to_dict() if self.candidate else None,
            "distance": self.distance,
            "terminal_residual": self.terminal_residual,
            "u_inf": None if self.u_inf is None else [float(v) for v in self.u_inf],
            "K0": self.K0,
            "K_terminal": self.K_terminal,
            "K_limit": self.K_limit,
            "certificate": self.certificate,
            "message": self.message,
        }


def match_terminal(
    traj: Trajectory,
    candidates: LimitCandidateSet,
    model: Model,
    tol_match: float = TOL_MATCH,
    rhs_tol: float = 1e-6,
    certify: bool = True,
) -> MatchReport:
    """Refine the terminal state and find the closest predicted candidate in (alpha, q)."""
    uT = traj.u[-1]
    K0 = float(model.K(traj.u[0])[0])
    KT = float(model.K(uT)[0])
    fT = float(np.linalg.norm(model.rhs(0.0, uT)))
    if traj.status != "ok" or fT > rhs_tol:
        return MatchReport(
            "not_converged", None, float("inf"), fT, None, K0, KT, None, None,
            f"terminal residual {fT:.3e} exceeds {rhs_tol:g} (status {traj.status})",
        )
    try:
        s_inf, _ = newton_refine(uT, model)
    except NewtonFailure as exc:
        return MatchReport("not_converged", None, float("inf"), fT, None, K0, KT, None, None, str(exc))
    q = s_inf.q
    best = min(candidates.feasible, key=lambda c: candidate_distance(s_inf.alpha, q, c))
    dist = candidate_distance(s_inf.alpha, q, best)
    K_lim = float(s_inf.alpha * q @ (model.lam * q))
    cert = None
    if certify:
        try:
            cert = certify_decay(traj, SemilinearSystem.from_model(model), u_inf=s_inf.vector).to_dict()
        except NotConverged as exc:
            cert = {"passed": False, "message": str(exc)}
    status = "matched" if dist <= tol_match else "no_match"
    msg = (
        f"terminal state within {dist:.2e} of {best.family} (alpha={best.alpha:.6g})"
        if status == "matched"
        else f"closest candidate {best.family} at distance {dist:.2e} > {tol_match:g}"
    )
    return MatchReport(status, best, dist, fT, s_inf.vector, K0, KT, K_lim, cert, msg)
