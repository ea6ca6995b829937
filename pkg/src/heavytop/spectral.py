"""Linearisation at steady states, spectral splitting and classification.

Sign convention: trajectories of the linearised flow obey ``u' = -L u``, so
``L = -Jacobian(rhs)`` and the stable part of the spectrum lies in the right
half-plane.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import schur, solve

from .dynamics import Model
from .equilibria import (
    EPS_GEN,
    SP1,
    SteadyState,
    genericity_flags,
    tangent_basis,
)

log = logging.getLogger(__name__)

NORMALLY_STABLE = "NormallyStable"
NORMALLY_HYPERBOLIC = "NormallyHyperbolic"
DEGENERATE = "Degenerate"
PROJECTOR_TOL = 1e-8


class NotAnEquilibrium(ValueError):
    pass


def assemble_linearization(s: SteadyState, model: Model, tol: float = 1e-10) -> np.ndarray:
    u = s.vector if s.state.n_modes == model.N else s.with_modes(model.N).vector
    res = float(np.linalg.norm(model.rhs(0.0, u)))
    if res > tol:
        raise NotAnEquilibrium(f"rhs residual {res:.3e} exceeds {tol:g}")
    return -model.jacobian(u)


def default_eps_c(L: np.ndarray) -> float:
    return 1e-7 * max(np.linalg.norm(L, 2), 1e-300)


# ----------------------------------------------------------------------------
# spectral split
# ----------------------------------------------------------------------------


def _cluster_of(ev: complex, eps_c: float) -> str:
    if abs(ev.real) <= eps_c and abs(ev.imag) <= eps_c:
        return "c"
    return "s" if ev.real >= 0 else "u"


def _invariant_basis(L: np.ndarray, select) -> np.ndarray:
    """Orthonormal basis of the invariant subspace of the selected eigenvalues."""
    T, Z, k = schur(L, output="real", sort=lambda re, im: select(complex(re, im)))
    return Z[:, :k]


@dataclass
class SpectralSplit:
    L: np.ndarray
    eps_c: float
    eigenvalues: np.ndarray  # sorted by real part
    clusters: np.ndarray  # 'c' | 's' | 'u' per eigenvalue
    projectors: dict[str, np.ndarray]
    bases: dict[str, np.ndarray]  # right invariant subspaces (orthonormal columns)
    straddling: list[complex] = field(default_factory=list)

    def dim(self, cl: str) -> int:
        return int(np.sum(self.clusters == cl))

    @property
    def gamma_s(self) -> float:
        re = self.eigenvalues.real[self.clusters == "s"]
        return float(re.min()) if re.size else float("inf")

    @property
    def omega_u(self) -> float:
        re = self.eigenvalues.real[self.clusters == "u"]
        return float(np.abs(re).min()) if re.size else float("inf")

    @property
    def degenerate(self) -> bool:
        return bool(self.straddling)

    def projector_residuals(self) -> dict[str, float]:
        P = self.projectors
        n = self.L.shape[0]
        total = sum(P.values())
        out = {"completeness": float(np.abs(total - np.eye(n)).max())}
        for a in "csu":
            out[f"idempotent_{a}"] = float(np.abs(P[a] @ P[a] - P[a]).max())
            out[f"commute_{a}"] = float(np.abs(P[a] @ self.L - self.L @ P[a]).max())
            for b in "csu":
                if a < b:
                    out[f"annihilate_{a}{b}"] = float(
                        max(np.abs(P[a] @ P[b]).max(), np.abs(P[b] @ P[a]).max())
                    )
        return out

    def center_coordinates(self, du: np.ndarray) -> np.ndarray:
        """Coordinates of ``P^c du`` in the orthonormal center basis."""
        return self.bases["c"].T @ (self.projectors["c"] @ du)


def spectral_split(L: np.ndarray, eps_c: float | None = None) -> SpectralSplit:
    """Split the spectrum into center, stable and unstable clusters with projectors.

    Right invariant subspaces come from ordered real Schur forms of ``L``,
    left ones from those of ``L^T``; each projector is
    ``V (W^T V)^{-1} W^T``.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError("L must be square")
    if eps_c is None:
        eps_c = default_eps_c(L)
    n = L.shape[0]
    ev = np.linalg.eigvals(L)
    order = np.lexsort((ev.imag, ev.real))
    ev = ev[order]
    clusters = np.array([_cluster_of(e, eps_c) for e in ev])
    straddle = [
        complex(e)
        for e in ev
        if 0.5 * eps_c < max(abs(e.real), 0.0) <= 2.0 * eps_c
        or (abs(e.real) <= eps_c and 0.5 * eps_c < abs(e.imag) <= 2.0 * eps_c)
    ]
    if straddle:
        log.warning("eigenvalues straddle the center threshold %.3e: %s", eps_c, straddle)
    projectors, bases = {}, {}
    for cl in "csu":
        k = int(np.sum(clusters == cl))
        if k == 0:
            projectors[cl] = np.zeros((n, n))
            bases[cl] = np.zeros((n, 0))
            continue
        sel = lambda e, cl=cl: _cluster_of(e, eps_c) == cl  # noqa: E731
        V = _invariant_basis(L, sel)
        W = _invariant_basis(L.T, sel)
        if V.shape[1] != k or W.shape[1] != k:
            # Schur reordering can misplace eigenvalues sitting on the threshold
            log.warning("ordered Schur returned %d/%d vectors for cluster %s", V.shape[1], k, cl)
        projectors[cl] = V @ solve(W.T @ V, W.T)
        bases[cl] = V
    return SpectralSplit(L, eps_c, ev, clusters, projectors, bases, straddle)


def eigenvector_projectors(L: np.ndarray, eps_c: float) -> dict[str, np.ndarray]:
    """Cross-check projectors built from (diagonalisable) eigenvector bases."""
    ev, V = np.linalg.eig(L)
    Winv = np.linalg.inv(V)
    out = {}
    for cl in "csu":
        idx = [i for i, e in enumerate(ev) if _cluster_of(e, eps_c) == cl]
        out[cl] = (V[:, idx] @ Winv[idx, :]).real
    return out


def imaginary_axis_margin(split: SpectralSplit) -> float:
    """Smallest ``|Re|`` over non-center eigenvalues (``inf`` if there are none)."""
    re = np.abs(split.eigenvalues.real[split.clusters != "c"])
    return float(re.min()) if re.size else float("inf")


# ----------------------------------------------------------------------------
# semi-simplicity
# ----------------------------------------------------------------------------


@dataclass
class SemisimpleResult:
    passed: bool
    algebraic: int
    geometric: int
    transversality: float  # smallest singular value of [kernel | range]
    degenerate: bool = False
    note: str = ""


def semisimple_check(L: np.ndarray, eps_c: float | None = None, band: float = 100.0) -> SemisimpleResult:
    """Compare geometric and algebraic multiplicity of the eigenvalue zero.

    The algebraic multiplicity is the size of the center cluster. The
    geometric one is read off the restriction of ``L`` to the center
    invariant subspace ``V``: zero is semi-simple exactly when ``L V = 0``,
    and ``dim ker = k - rank(L V)``. Singular values of ``L V`` just above
    the threshold make the count ambiguous.
    """
    L = np.asarray(L, dtype=float)
    if eps_c is None:
        eps_c = default_eps_c(L)
    n = L.shape[0]
    alg = int(sum(_cluster_of(e, eps_c) == "c" for e in np.linalg.eigvals(L)))
    if alg == 0:
        return SemisimpleResult(True, 0, 0, 1.0, False, "zero is not an eigenvalue")
    V = _invariant_basis(L, lambda e: _cluster_of(e, eps_c) == "c")
    _, sv, Wt = np.linalg.svd(L @ V)
    rank = int(np.sum(sv > eps_c))
    geo = V.shape[1] - rank
    ambiguous = bool(np.any((sv > eps_c) & (sv <= band * eps_c)))
    kernel = V @ Wt[rank:].T
    U, _, _ = np.linalg.svd(L)
    rng = U[:, : n - geo]
    if geo == n:
        transv = 1.0
    else:
        transv = float(np.linalg.svd(np.hstack([kernel, rng]), compute_uv=False).min())
    ok = alg == geo and transv > 1e-6
    note = "restricted singular values inside the ambiguity band" if ambiguous else ""
    return SemisimpleResult(ok and not ambiguous, alg, geo, transv, ambiguous, note)


# ----------------------------------------------------------------------------
# classification
# ----------------------------------------------------------------------------


@dataclass
class Classification:
    verdict: str
    kernel_dim: int
    center_dim: int
    tangent_dim: int
    tangent_in_kernel: float
    semisimple: SemisimpleResult | None
    axis_margin: float
    unstable_count: int
    eps_c: float
    split: SpectralSplit | None = None
    genericity: object = None
    reasons: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        ev = self.split.eigenvalues if self.split is not None else np.zeros(0)
        return {
            "verdict": self.verdict,
            "kernel_dim": self.kernel_dim,
            "center_dim": self.center_dim,
            "tangent_dim": self.tangent_dim,
            "tangent_in_kernel": self.tangent_in_kernel,
            "semisimple": bool(self.semisimple.passed) if self.semisimple else None,
            "axis_margin": self.axis_margin,
            "unstable_count": self.unstable_count,
            "eps_c": self.eps_c,
            "gamma_s": self.split.gamma_s if self.split is not None else None,
            "eigenvalues_re": [float(e.real) for e in ev],
            "eigenvalues_im": [float(e.imag) for e in ev],
            "reasons": list(self.reasons),
        }


def classify_linearization(
    L: np.ndarray, tangent: np.ndarray, eps_c: float | None = None
) -> Classification:
    """Normal stability / hyperbolicity test given the manifold tangent vectors."""
    if eps_c is None:
        eps_c = default_eps_c(L)
    split = spectral_split(L, eps_c)
    tangent = np.atleast_2d(tangent)
    if tangent.shape[0] != L.shape[0]:
        tangent = tangent.T
    tdim = int(np.linalg.matrix_rank(tangent, tol=1e-10 * max(1.0, np.abs(tangent).max())))
    tn = tangent / np.linalg.norm(tangent, axis=0)
    t_in_k = float(np.abs(L @ tn).max()) if tn.size else 0.0
    ss = semisimple_check(L, eps_c)
    margin = imaginary_axis_margin(split)
    cdim = split.dim("c")
    reasons = []
    if cdim != tdim:
        reasons.append(f"center dimension {cdim} differs from tangent dimension {tdim}")
    else:
        span = np.hstack([split.bases["c"], tn])
        if np.linalg.matrix_rank(span, tol=1e-6) != cdim:
            reasons.append("tangent space is not the center subspace")
    if t_in_k > max(1e3 * eps_c, 1e-8):
        reasons.append(f"tangent vectors not in the kernel (|L t| = {t_in_k:.2e})")
    if not ss.passed:
        reasons.append(f"zero not semi-simple (alg {ss.algebraic}, geo {ss.geometric}) {ss.note}".strip())
    if margin <= eps_c:
        reasons.append("nonzero spectrum on the imaginary axis")
    if split.degenerate:
        reasons.append("eigenvalues straddle the center threshold")
    nu = split.dim("u")
    if reasons:
        verdict = DEGENERATE
    else:
        verdict = NORMALLY_HYPERBOLIC if nu else NORMALLY_STABLE
    return Classification(
        verdict, ss.geometric, cdim, tdim, t_in_k, ss, margin, nu, eps_c, split, None, reasons
    )


def classify(
    s: SteadyState, model: Model, eps_c: float | None = None, eps_gen: float = EPS_GEN
) -> Classification:
    flags = genericity_flags(s, model.params, eps_gen)
    L = assemble_linearization(s, model)
    if eps_c is None:
        eps_c = default_eps_c(L)
    tangent = tangent_basis(s, model.params, model.N)
    cls = classify_linearization(L, tangent, eps_c)
    cls.genericity = flags
    if not flags.passed:
        cls.verdict = DEGENERATE
        cls.reasons.insert(0, "genericity conditions fail: " + ", ".join(
            c.name for c in flags.conditions if not c.passed))
    return cls


def kernel_vectors(s: SteadyState, n_modes: int) -> tuple[np.ndarray, np.ndarray]:
    """The two closed-form kernel vectors at an SP1 point."""
    if s.family != SP1 or s.alpha == 0:
        raise ValueError("kernel vectors are given for SP1 points with nonzero spin")
    q, a = s.q, s.alpha
    z = np.zeros(n_modes)
    w1 = np.concatenate([z, [q[0], 0.0, -q[2]], [0.0, 0.0, -2.0 / a * q[2]]])
    w2 = np.concatenate([z, [a, 0.0, 0.0], [1.0, 0.0, 0.0]])
    return w1, w2


def kernel_residual_check(s: SteadyState, model: Model) -> tuple[float, float]:
    L = assemble_linearization(s, model)
    w1, w2 = kernel_vectors(s, model.N)
    return (
        float(np.linalg.norm(L @ w1) / np.linalg.norm(w1)),
        float(np.linalg.norm(L @ w2) / np.linalg.norm(w2)),
    )
