"""Divergence-free polynomial Galerkin basis on the unit ball.

Raw fields are ``curl((1 - |x|^2)^2 m(x) e_a)`` for monomials ``m`` and
axes ``a``; they are exactly solenoidal and vanish on the sphere together
with their tangential derivatives. They are orthonormalised in L2 by a
modified Gram-Schmidt pass, and every coupling integral of the reduced
equations is evaluated with a product quadrature that is exact for the
polynomial degrees involved.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as P

from .body import BodyParams, hat

log = logging.getLogger(__name__)

MAX_POLY_DEGREE = 4
SELF_CHECK_TOL = 1e-10
_LEVI = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _LEVI[_i, _j, _k] = 1.0
    _LEVI[_i, _k, _j] = -1.0


class BasisError(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# quadrature
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class BallQuadrature:
    points: np.ndarray  # (Q, 3)
    weights: np.ndarray  # (Q,)
    degree: int

    @property
    def size(self) -> int:
        return self.weights.size

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integrate nodal values; the last axis runs over nodes."""
        return values @ self.weights


def ball_quadrature(degree: int) -> BallQuadrature:
    """Product rule on the unit ball exact for polynomials of total degree ``degree``.

    Radial Gauss-Legendre carries the ``r^2`` Jacobian explicitly; the sphere
    uses Gauss-Legendre in ``cos(theta)`` and a uniform trapezoid in ``phi``.
    """
    degree = int(degree)
    if degree < 0:
        raise ValueError("degree must be non-negative")
    n_r = (degree + 3) // 2 + 1
    n_u = degree // 2 + 1
    n_phi = degree + 1
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * (xr + 1.0)
    wr = 0.5 * wr * r**2
    u, wu = np.polynomial.legendre.leggauss(n_u)
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    wphi = np.full(n_phi, 2.0 * np.pi / n_phi)
    R, U, PHI = np.meshgrid(r, u, phi, indexing="ij")
    W = wr[:, None, None] * wu[None, :, None] * wphi[None, None, :]
    S = np.sqrt(1.0 - U**2)
    pts = np.stack([R * S * np.cos(PHI), R * S * np.sin(PHI), R * U], axis=-1).reshape(-1, 3)
    return BallQuadrature(pts, W.ravel(), degree)


# ----------------------------------------------------------------------------
# raw polynomial fields
# ----------------------------------------------------------------------------


def _bubble() -> np.ndarray:
    """Coefficients of (1 - x^2 - y^2 - z^2)^2 as a dense 3-d array."""
    q = np.zeros((3, 3, 3))
    q[0, 0, 0] = 1.0
    q[2, 0, 0] = q[0, 2, 0] = q[0, 0, 2] = -1.0
    out = np.zeros((5, 5, 5))
    for (a, b, c), va in np.ndenumerate(q):
        if va == 0.0:
            continue
        for (d, e, f), vb in np.ndenumerate(q):
            if vb != 0.0:
                out[a + d, b + e, c + f] += va * vb
    return out


def _monomials(degree: int) -> list[tuple[int, int, int]]:
    out = [e for e in product(range(degree + 1), repeat=3) if sum(e) == degree]
    return sorted(out, reverse=True)


@dataclass(frozen=True)
class RawField:
    """``curl(phi e_axis)`` for a scalar polynomial ``phi``."""

    coeffs: np.ndarray
    axis: int
    degree: int  # polynomial degree of the velocity field
    label: str

    def potential_derivatives(self, pts: np.ndarray):
        x, y, z = pts.T
        grad = np.empty((3, len(pts)))
        hess = np.empty((3, 3, len(pts)))
        for j in range(3):
            dj = P.polyder(self.coeffs, axis=j)
            grad[j] = P.polyval3d(x, y, z, dj)
            for l in range(j, 3):
                djl = P.polyder(dj, axis=l)
                hess[j, l] = hess[l, j] = P.polyval3d(x, y, z, djl)
        return grad, hess

    def evaluate(self, pts: np.ndarray):
        """Velocity (3, Q) and gradient ``G[i, l] = d v_i / d x_l`` (3, 3, Q)."""
        grad, hess = self.potential_derivatives(pts)
        # v_i = eps_{i j a} d_j phi
        eps = _LEVI[:, :, self.axis]
        v = np.einsum("ij,jq->iq", eps, grad)
        dv = np.einsum("ij,jlq->ilq", eps, hess)
        return v, dv


def raw_fields(max_degree: int) -> list[RawField]:
    """Raw solenoidal fields ordered by polynomial degree of the generator."""
    bub = _bubble()
    fields = []
    for d in range(max_degree + 1):
        for e in _monomials(d):
            phi = np.zeros((d + 5, d + 5, d + 5))
            phi[e[0] : e[0] + 5, e[1] : e[1] + 5, e[2] : e[2] + 5] = bub
            for a in range(3):
                fields.append(RawField(phi, a, d + 3, f"x^{e[0]}y^{e[1]}z^{e[2]}|e{a + 1}"))
    return fields


# ----------------------------------------------------------------------------
# basis
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class GalerkinBasis:
    """Orthonormal solenoidal basis plus the coupling tensors of the reduced model.

    ``M`` mass, ``S`` viscous stiffness, ``B`` coupling to rigid rotation,
    ``C`` convection (``C[j, k, l] = rho * int ((psi_k . grad) psi_l) . psi_j``),
    ``G[i]`` Coriolis (``G[i, j, k] = rho * int (e_i x psi_k) . psi_j``).
    """

    N: int
    rho: float
    nu: float
    M: np.ndarray
    S: np.ndarray
    B: np.ndarray
    C: np.ndarray
    G: np.ndarray
    transform: np.ndarray  # (N, n_raw) combination of raw fields
    raw: tuple[RawField, ...]
    quad_degree: int
    quad_nodes: int
    poly_degree: int

    @property
    def mu(self) -> float:
        return self.rho * self.nu

    def evaluate(self, pts: np.ndarray):
        """Basis values (N, 3, Q) and gradients (N, 3, 3, Q) at arbitrary points."""
        pts = np.atleast_2d(pts)
        vals = np.empty((len(self.raw), 3, len(pts)))
        grads = np.empty((len(self.raw), 3, 3, len(pts)))
        for n, f in enumerate(self.raw):
            vals[n], grads[n] = f.evaluate(pts)
        v = np.einsum("nr,r...->n...", self.transform, vals)
        g = np.einsum("nr,r...->n...", self.transform, grads)
        return v, g

    def velocity(self, c: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Reconstructed field ``sum_j c_j psi_j`` at ``pts``, shape (3, Q)."""
        v, _ = self.evaluate(pts)
        return np.einsum("n,niq->iq", np.asarray(c, dtype=float), v)

    def convection(self, c: np.ndarray) -> np.ndarray:
        return np.einsum("jkl,k,l->j", self.C, c, c)

    def coriolis(self, w: np.ndarray) -> np.ndarray:
        return np.einsum("i,ijk->jk", w, self.G)

    def self_check(self, tol: float = SELF_CHECK_TOL) -> dict[str, float]:
        res = {
            "mass_symmetry": float(np.abs(self.M - self.M.T).max(initial=0.0)),
            "stiffness_symmetry": float(np.abs(self.S - self.S.T).max(initial=0.0)),
            "coriolis_skew": float(
                max((np.abs(g + g.T).max(initial=0.0) for g in self.G), default=0.0)
            ),
            "convection_skew": float(
                np.abs(self.C + self.C.transpose(2, 1, 0)).max(initial=0.0)
            ),
        }
        bad = {k: v for k, v in res.items() if v > tol}
        if bad:
            raise BasisError(
                f"basis self-check failed (quadrature degree {self.quad_degree} too low?): {bad}"
            )
        return res


def family_size(max_degree: int) -> int:
    return _orthonormalize(raw_fields(max_degree), ball_quadrature(2 * max_degree + 6))[0].shape[0]


def _orthonormalize(fields, quad, drop_tol=1e-8):
    vals = np.stack([f.evaluate(quad.points)[0] for f in fields])  # (R, 3, Q)
    w = quad.weights
    kept = []  # rows of the transform
    ortho = []  # nodal values of kept orthonormal fields
    for r in range(len(fields)):
        t = np.zeros(len(fields))
        t[r] = 1.0
        v = vals[r].copy()
        norm0 = np.sqrt(np.einsum("iq,iq,q->", v, v, w))
        for _ in range(2):  # re-orthogonalisation pass
            for tk, ok in zip(kept, ortho):
                proj = np.einsum("iq,iq,q->", v, ok, w)
                v -= proj * ok
                t -= proj * tk
        norm = np.sqrt(np.einsum("iq,iq,q->", v, v, w))
        if norm <= drop_tol * norm0:
            continue
        kept.append(t / norm)
        ortho.append(v / norm)
    return np.array(kept), np.array(ortho)


def required_poly_degree(N: int) -> int:
    for d in range(MAX_POLY_DEGREE + 1):
        if family_size_cached(d) >= N:
            return d
    raise BasisError(
        f"N={N} exceeds the construction family size {family_size_cached(MAX_POLY_DEGREE)}"
    )


_FAMILY_SIZES: dict[int, int] = {}


def family_size_cached(d: int) -> int:
    if d not in _FAMILY_SIZES:
        _FAMILY_SIZES[d] = family_size(d)
    return _FAMILY_SIZES[d]


def default_quad_degree(poly_degree: int) -> int:
    # velocity fields have degree poly_degree + 3; convection integrand is cubic minus one
    return 3 * (poly_degree + 3)


def build_ball_basis(
    N: int, quad_degree: int | None = None, rho: float = 0.5, nu: float = 0.1
) -> GalerkinBasis:
    """Build the first ``N`` orthonormal solenoidal fields and all coupling tensors."""
    N = int(N)
    if N < 0:
        raise ValueError("N must be non-negative")
    if N == 0:
        z = np.zeros((0, 0))
        return GalerkinBasis(
            0, rho, nu, z, z, np.zeros((0, 3)), np.zeros((0, 0, 0)), np.zeros((3, 0, 0)),
            np.zeros((0, 0)), (), 0, 0, 0,
        )
    d = required_poly_degree(N)
    qdeg = default_quad_degree(d) if quad_degree is None else int(quad_degree)
    fields = raw_fields(d)
    # orthonormalisation only needs the mass integrand to be exact
    T, _ = _orthonormalize(fields, ball_quadrature(max(2 * (d + 3), 2)))
    T = T[:N]
    used = np.flatnonzero(np.abs(T).max(axis=0) > 0)
    T = T[:, used]
    raw = tuple(fields[i] for i in used)

    quad = ball_quadrature(qdeg)
    vals = np.empty((len(raw), 3, quad.size))
    grads = np.empty((len(raw), 3, 3, quad.size))
    for n, f in enumerate(raw):
        vals[n], grads[n] = f.evaluate(quad.points)
    V = np.einsum("nr,riq->niq", T, vals)
    D = np.einsum("nr,rilq->nilq", T, grads)
    w = quad.weights
    x = quad.points.T

    M = rho * np.einsum("jiq,kiq,q->jk", V, V, w)
    S = rho * nu * np.einsum("jilq,kilq,q->jk", D, D, w)
    rot = np.stack([np.cross(np.eye(3)[i][:, None], x, axis=0) for i in range(3)])  # (3, 3, Q)
    B = rho * np.einsum("jmq,imq,q->ji", V, rot, w)
    adv = np.einsum("knq,lmnq->klmq", V, D)  # (psi_k . grad) psi_l
    C = rho * np.einsum("jmq,klmq,q->jkl", V, adv, w)
    G = np.empty((3, N, N))
    for i in range(3):
        ex = np.einsum("ab,kbq->kaq", hat(np.eye(3)[i]), V)
        G[i] = rho * np.einsum("kaq,jaq,q->jk", ex, V, w)

    basis = GalerkinBasis(N, rho, nu, M, S, B, C, G, T, raw, qdeg, quad.size, d)
    basis.self_check()
    return basis


def coupling_a(basis: GalerkinBasis, params: BodyParams, c: np.ndarray) -> np.ndarray:
    """Rigid-rotation offset ``a = -I^{-1} rho int x cross v``."""
    c = np.asarray(c, dtype=float)
    if c.shape != (basis.N,):
        raise ValueError(f"coefficient vector has shape {c.shape}, expected ({basis.N},)")
    return -(basis.B.T @ c) / params.lam_array


def assemble_mass_block(basis: GalerkinBasis, params: BodyParams) -> np.ndarray:
    """Symmetric block ``[[M, B], [B^T, I]]`` coupling fluid and rigid accelerations."""
    N = basis.N
    Eh = np.zeros((N + 3, N + 3))
    Eh[:N, :N] = basis.M
    Eh[:N, N:] = basis.B
    Eh[N:, :N] = basis.B.T
    Eh[N:, N:] = params.inertia
    Eh = 0.5 * (Eh + Eh.T)
    lo = np.linalg.eigvalsh(Eh)[0]
    if lo <= 0.0:
        raise BasisError(
            f"mass block is not positive definite (min eigenvalue {lo:.3e}); "
            "the fluid's rotational inertia exceeds a principal moment"
        )
    return Eh


# ----------------------------------------------------------------------------
# cache
# ----------------------------------------------------------------------------


def _cache_key(N, quad_degree, rho, nu) -> str:
    s = f"{N}|{quad_degree}|{float(rho).hex()}|{float(nu).hex()}"
    return hashlib.sha1(s.encode()).hexdigest()[:16]


def load_or_build(
    N: int, quad_degree: int | None, rho: float, nu: float, cache_dir: str | Path | None
) -> GalerkinBasis:
    """Build the basis, reusing an ``.npz`` cache keyed by (N, quad degree, rho, nu)."""
    if cache_dir is None:
        return build_ball_basis(N, quad_degree, rho, nu)
    cache_dir = Path(cache_dir)
    path = cache_dir / f"basis_{_cache_key(N, quad_degree, rho, nu)}.npz"
    if path.exists():
        with np.load(path) as z:
            if int(z["N"]) == N:
                d = int(z["poly_degree"])
                fields = raw_fields(d) if N else []
                raw = tuple(fields[i] for i in z["used"])
                log.debug("basis cache hit %s", path)
                return GalerkinBasis(
                    N, float(z["rho"]), float(z["nu"]), z["M"], z["S"], z["B"], z["C"], z["G"],
                    z["T"], raw, int(z["quad_degree"]), int(z["quad_nodes"]), d,
                )
    basis = build_ball_basis(N, quad_degree, rho, nu)
    cache_dir.mkdir(parents=True, exist_ok=True)
    used = []
    if N:
        labels = [f.label for f in raw_fields(basis.poly_degree)]
        used = [labels.index(f.label) for f in basis.raw]
    np.savez(
        path, N=N, rho=rho, nu=nu, M=basis.M, S=basis.S, B=basis.B, C=basis.C, G=basis.G,
        T=basis.transform, used=np.array(used, dtype=int), quad_degree=basis.quad_degree,
        quad_nodes=basis.quad_nodes, poly_degree=basis.poly_degree,
    )
    return basis
