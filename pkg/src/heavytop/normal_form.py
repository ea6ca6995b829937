"""Flattening of the equilibrium manifold, normal coordinates and decay certificates.

Works for any finite-dimensional system ``u' = f(u)`` wrapped in a
:class:`SemilinearSystem`; the reduced heavy-top model is one instance and the
planar toy system ``x' = 0, y' = y^2 - y`` is another.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from itertools import combinations_with_replacement, product
from typing import Callable

import numpy as np

from .dynamics import Model, Trajectory, integrate
from .equilibria import NewtonFailure, bordered_newton, newton_refine
from .spectral import (
    NORMALLY_HYPERBOLIC,
    NORMALLY_STABLE,
    SpectralSplit,
    classify_linearization,
    spectral_split,
)


class FlatteningError(ValueError):
    pass


class OutsideValidity(ValueError):
    pass


class NotConverged(RuntimeError):
    pass


@dataclass
class SemilinearSystem:
    """Autonomous system ``u' = f(u)`` with its Jacobian.

    ``param_count`` and ``psi`` describe the equilibrium manifold when it is
    known in closed form; ``norm_matrix`` defines the norm used for decay
    certification (identity when omitted).
    """

    dim: int
    f: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    param_count: int = 0
    psi: Callable[[np.ndarray], np.ndarray] | None = None
    norm_matrix: np.ndarray | None = None
    model: Model | None = None
    name: str = ""

    def rhs(self, t, u):
        return self.f(np.asarray(u, dtype=float))

    def jacobian(self, u):
        return self.jac(np.asarray(u, dtype=float))

    def linearization(self, u) -> np.ndarray:
        return -self.jacobian(u)

    def norm(self, du) -> np.ndarray:
        du = np.asarray(du, dtype=float)
        if self.norm_matrix is None:
            return np.linalg.norm(du, axis=-1)
        return np.sqrt(np.einsum("...i,ij,...j->...", du, self.norm_matrix, du))

    def check_jacobian(self, points, h: float = 1e-6) -> float:
        """Largest entry gap between the Jacobian and central differences of ``f``."""
        worst = 0.0
        for u in np.atleast_2d(points):
            J = self.jacobian(u)
            fd = np.empty_like(J)
            for k in range(self.dim):
                e = np.zeros(self.dim)
                e[k] = h
                fd[:, k] = (self.f(u + e) - self.f(u - e)) / (2 * h)
            worst = max(worst, float(np.abs(J - fd).max()))
        return worst

    def refine(self, u, kernel_dim: int | None = None, tol: float = 1e-12) -> np.ndarray:
        if self.model is not None:
            return newton_refine(u, self.model, tol=max(tol, 1e-13))[0].vector
        if kernel_dim is None:
            kernel_dim = self.param_count
        return bordered_newton(self.f, self.jac, u, kernel_dim, tol=tol, max_iter=50).u

    @classmethod
    def from_model(cls, model: Model) -> "SemilinearSystem":
        return cls(
            model.dim,
            lambda u: model.rhs(0.0, u),
            model.jacobian,
            param_count=2,
            norm_matrix=model.extended_mass,
            model=model,
            name="heavy top",
        )


def toy_system() -> SemilinearSystem:
    """``x' = 0, y' = y^2 - y``; equilibria are the lines ``y = 0`` and ``y = 1``."""

    def f(u):
        return np.array([0.0, u[1] ** 2 - u[1]])

    def jac(u):
        return np.array([[0.0, 0.0], [0.0, 2.0 * u[1] - 1.0]])

    return SemilinearSystem(2, f, jac, param_count=1, name="toy")


def toy_distance_to_equilibria(u) -> np.ndarray:
    y = np.atleast_2d(u)[:, 1]
    return np.minimum(np.abs(y), np.abs(y - 1.0))


# ----------------------------------------------------------------------------
# manifold sampling and flattening
# ----------------------------------------------------------------------------


@dataclass
class ManifoldSample:
    base: np.ndarray
    points: np.ndarray  # (k, n)
    center_coords: np.ndarray  # (k, m) in the orthonormal center basis
    dropped: int
    residuals: np.ndarray


def _complement_basis(split: SpectralSplit) -> np.ndarray:
    n = split.L.shape[0]
    m = split.dim("c")
    U, _, _ = np.linalg.svd(np.eye(n) - split.projectors["c"])
    return U[:, : n - m]


def _grid(m: int, radius: float, count: int) -> np.ndarray:
    if radius == 0 or count <= 1:
        return np.zeros((1, m))
    per = max(2, int(math.ceil(count ** (1.0 / m))))
    if per % 2 == 0:
        per += 1  # keep the base point on the grid
    axis = np.linspace(-radius, radius, per)
    pts = np.array(list(product(axis, repeat=m)))
    return pts[np.linalg.norm(pts, axis=1) <= radius * (1 + 1e-12)]


def sample_equilibrium_manifold(
    system: SemilinearSystem,
    ubar,
    split: SpectralSplit,
    radius: float,
    count: int,
    tol: float = 1e-12,
    max_iter: int = 30,
) -> ManifoldSample:
    """Equilibria above a grid of center displacements around ``ubar``.

    Each ``ubar + x`` is corrected by Gauss-Newton within the kernel of the
    center projector, so every returned point has ``P^c (u - ubar) = x``.
    """
    ubar = np.asarray(ubar, dtype=float)
    Vc = split.bases["c"]
    m = Vc.shape[1]
    if m == 0:
        raise FlatteningError("center space is trivial")
    Q = _complement_basis(split)
    pts, coords, res = [], [], []
    dropped = 0
    scale = max(1.0, float(np.linalg.norm(ubar)))
    for xi in _grid(m, radius, count):
        u = ubar + Vc @ xi
        f = system.f(u)
        for _ in range(max_iter):
            if np.linalg.norm(f) <= tol * scale:
                break
            eta = np.linalg.lstsq(system.jac(u) @ Q, -f, rcond=None)[0]
            u = u + Q @ eta
            f = system.f(u)
        r = float(np.linalg.norm(f))
        if not np.isfinite(r) or r > tol * scale:
            dropped += 1
            continue
        pts.append(u)
        coords.append(xi)
        res.append(r)
    return ManifoldSample(ubar, np.array(pts), np.array(coords), dropped, np.array(res))


def _features(xi: np.ndarray, degree: int = 2) -> np.ndarray:
    """Monomials of the center coordinates of degree 1..``degree`` (no constant)."""
    xi = np.atleast_2d(xi)
    m = xi.shape[1]
    cols = [xi]
    for deg in range(2, degree + 1):
        mono = [np.prod(xi[:, list(ix)], axis=1) for ix in combinations_with_replacement(range(m), deg)]
        cols.append(np.column_stack(mono))
    return np.hstack(cols)


@dataclass
class Flattening:
    base: np.ndarray
    center_basis: np.ndarray  # orthonormal columns spanning range(P^c)
    coef_s: np.ndarray  # (features, n)
    coef_u: np.ndarray
    fit_residual: float
    validity_radius: float
    derivative_norm: dict[str, float]
    rhs_residual: float = float("nan")

    @property
    def m(self) -> int:
        return self.center_basis.shape[1]

    def coords(self, x) -> np.ndarray:
        return np.atleast_2d(x) @ self.center_basis

    def phi(self, which: str, x) -> np.ndarray:
        coef = self.coef_s if which == "s" else self.coef_u
        out = _features(self.coords(x)) @ coef
        return out[0] if np.ndim(x) == 1 else out

    def quadratic_coefficients(self, which: str) -> np.ndarray:
        coef = self.coef_s if which == "s" else self.coef_u
        return coef[self.m :]

    def point(self, xi) -> np.ndarray:
        """Manifold point above center coordinates ``xi``."""
        x = self.center_basis @ np.asarray(xi, dtype=float)
        return self.base + x + self.phi("s", x) + self.phi("u", x)


def fit_flattening(
    sample: ManifoldSample,
    split: SpectralSplit,
    system: SemilinearSystem | None = None,
    guard_cubic: bool = True,
) -> Flattening:
    """Quadratic least-squares models of the stable and unstable graph maps.

    With ``guard_cubic`` (and enough samples) cubic monomials are added to the
    design and then discarded, so the truncation error of the quadratic model
    does not leak into its linear coefficients.
    """
    ubar = sample.base
    Vc = split.bases["c"]
    m = Vc.shape[1]
    du = sample.points - ubar
    xi = du @ split.projectors["c"].T @ Vc
    X = _features(xi)
    nq = X.shape[1]
    if X.shape[0] < nq or np.linalg.matrix_rank(X) < nq:
        raise FlatteningError(
            f"design matrix rank-deficient ({X.shape[0]} samples, {nq} features)"
        )
    Xg = _features(xi, 3) if guard_cubic else X
    if Xg.shape[0] < Xg.shape[1] or np.linalg.matrix_rank(Xg) < Xg.shape[1]:
        Xg = X
    Ys = du @ split.projectors["s"].T
    Yu = du @ split.projectors["u"].T
    cs = np.linalg.lstsq(Xg, Ys, rcond=None)[0][:nq]
    cu = np.linalg.lstsq(Xg, Yu, rcond=None)[0][:nq]
    pr = np.linalg.norm(X @ cs - Ys, axis=1) + np.linalg.norm(X @ cu - Yu, axis=1)
    r = np.linalg.norm(xi, axis=1)
    order = np.argsort(r)
    inner = pr[order[: max(1, len(order) // 2)]]
    ref = max(float(np.sqrt(np.mean(inner**2))), 1e-14)
    bad = r[pr > 10.0 * ref]
    radius = float(bad.min()) if bad.size else float(r.max())
    deriv = {"s": float(np.linalg.norm(cs[:m])), "u": float(np.linalg.norm(cu[:m]))}
    fl = Flattening(ubar, Vc, cs, cu, float(pr.max()), radius, deriv)
    if system is not None:
        fl.rhs_residual = float(
            max(np.linalg.norm(system.f(fl.point(x))) for x in xi)
        )
    return fl


def normal_coordinates(u, fl: Flattening, split: SpectralSplit) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``x = P^c du``, ``y = P^s du - phi_s(x)``, ``z = P^u du - phi_u(x)``."""
    du = np.asarray(u, dtype=float) - fl.base
    x = split.projectors["c"] @ du
    if np.linalg.norm(fl.coords(x)) > fl.validity_radius * (1 + 1e-12):
        raise OutsideValidity(
            f"center displacement {np.linalg.norm(x):.3e} exceeds validity radius {fl.validity_radius:.3e}"
        )
    y = split.projectors["s"] @ du - fl.phi("s", x)
    z = split.projectors["u"] @ du - fl.phi("u", x)
    return x, y, z


def reconstruct(x, y, z, fl: Flattening) -> np.ndarray:
    return fl.base + x + y + z + fl.phi("s", x) + fl.phi("u", x)


# ----------------------------------------------------------------------------
# decay certification
# ----------------------------------------------------------------------------


@dataclass
class DecayCertificate:
    rate: float
    r2: float
    gamma_s: float
    ratio: float
    u_inf: np.ndarray
    window: tuple[float, float]
    window_size: int
    floor: float
    passed: bool
    message: str
    distance: np.ndarray = field(repr=False, default=None)
    times: np.ndarray = field(repr=False, default=None)
    fluid_h1_tail: float | None = None
    x_increment: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("distance")
        d.pop("times")
        d["u_inf"] = [float(v) for v in self.u_inf]
        d["window"] = list(self.window)
        return d


def certify_decay(
    traj: Trajectory,
    system: SemilinearSystem,
    flattening: Flattening | None = None,
    split: SpectralSplit | None = None,
    drop: float = 1e-2,
    tail: float = 0.5,
    r2_min: float = 0.99,
    abs_floor: float = 1e-14,
    converge_tol: float = 1e-6,
    u_inf=None,
) -> DecayCertificate:
    """Fit an exponential rate to ``|u(t) - u_inf|`` and compare it with the stable gap.

    ``u_inf`` is obtained by Newton refinement of the terminal sample. The fit
    window is the last ``tail`` fraction of samples after the distance first
    drops below ``drop`` times its initial value, restricted to samples above
    a noise floor (ten times the median distance over the final tenth of the
    run, or ``abs_floor``).
    """
    uT = traj.u[-1]
    if traj.status != "ok":
        raise NotConverged(f"trajectory ended with status {traj.status}")
    fT = float(np.linalg.norm(system.f(uT)))
    if fT > converge_tol:
        raise NotConverged(f"terminal residual {fT:.3e} exceeds {converge_tol:g}")
    if u_inf is None:
        try:
            u_inf = system.refine(uT)
        except NewtonFailure as exc:
            raise NotConverged(f"terminal state does not refine to an equilibrium: {exc}") from exc
    u_inf = np.asarray(u_inf, dtype=float)
    d = system.norm(traj.u - u_inf)
    t = traj.t
    ntail = max(1, len(d) // 10)
    floor = max(abs_floor * max(1.0, float(np.linalg.norm(u_inf))), 10.0 * float(np.median(d[-ntail:])))
    below = np.nonzero(d < drop * d[0])[0]
    gsplit = spectral_split(system.linearization(u_inf))
    gamma_s = gsplit.gamma_s
    i0 = int(below[0]) if below.size else len(d)
    idx = np.arange(i0, len(d))
    idx = idx[d[idx] > floor]
    idx = idx[int(len(idx) * (1.0 - tail)) :]
    if idx.size < 3:
        return DecayCertificate(
            float("nan"), float("nan"), gamma_s, float("nan"), u_inf, (float("nan"),) * 2, int(idx.size),
            floor, False, "no clean exponential regime: fit window too short", d, t,
        )
    x, y = t[idx], np.log(d[idx])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    var = float(np.var(y))
    r2 = 1.0 - float(np.var(resid)) / var if var > 0 else 0.0
    k = -float(slope)
    ratio = k / gamma_s if np.isfinite(gamma_s) and gamma_s > 0 else float("nan")
    ok = r2 >= r2_min
    msg = "exponential decay certified" if ok else f"no clean exponential regime (R^2 = {r2:.4f})"
    cert = DecayCertificate(
        k, r2, gamma_s, ratio, u_inf, (float(x[0]), float(x[-1])), int(idx.size), floor, ok, msg, d, t
    )
    if system.model is not None and system.model.N:
        mdl = system.model
        c = traj.u[idx[-1], : mdl.N] - u_inf[: mdl.N]
        cert.fluid_h1_tail = float(np.sqrt(max(c @ mdl.basis.S @ c, 0.0) / mdl.params.mu))
    if flattening is not None and split is not None:
        xs = traj.u[idx] - flattening.base
        xc = xs @ split.projectors["c"].T
        cert.x_increment = float(np.linalg.norm(np.diff(xc, axis=0), axis=1).max())
    return cert


def unstable_direction(split: SpectralSplit) -> np.ndarray:
    """Unit real vector in the unstable invariant subspace (most unstable mode)."""
    if split.dim("u") == 0:
        raise ValueError("no unstable spectrum")
    ev, V = np.linalg.eig(split.L)
    k = int(np.argmin(ev.real))
    v = V[:, k].real if np.linalg.norm(V[:, k].real) > 1e-8 else V[:, k].imag
    return v / np.linalg.norm(v)


def escape_time(traj: Trajectory, distance, rho: float) -> float | None:
    """First sample time at which ``distance(u) > rho``, or ``None``."""
    d = np.asarray(distance(traj.u))
    hit = np.nonzero(d > rho)[0]
    return float(traj.t[hit[0]]) if hit.size else None


# ----------------------------------------------------------------------------
# the planar example
# ----------------------------------------------------------------------------


@dataclass
class ToyReport:
    verdict_y0: str
    verdict_y1: str
    converge_terminal: list[float]
    converge_rate: float
    converge_r2: float
    blowup_status: str
    blowup_time: float | None
    blowup_time_exact: float
    escape_time: float | None
    escape_rho: float
    fixed_drift: float
    checks: dict[str, bool]

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def toy_example_run(
    c: float = 0.5, eps: float = 0.1, x_fixed: float = 0.3, rho: float = 0.5, t_end: float = 40.0
) -> ToyReport:
    """Classify both equilibrium lines and run the three characteristic trajectories."""
    sysm = toy_system()
    tangent = np.array([[1.0], [0.0]])
    v0 = classify_linearization(sysm.linearization(np.array([0.0, 0.0])), tangent).verdict
    v1 = classify_linearization(sysm.linearization(np.array([0.0, 1.0])), tangent).verdict

    tr = integrate(sysm, np.array([0.0, c]), t_end, rtol=1e-12, atol=1e-14, n_samples=801)
    cert = certify_decay(tr, sysm)

    y0 = 1.0 + eps
    bl = integrate(sysm, np.array([0.0, y0]), 5.0, n_samples=5001, max_norm=1e8)
    t_exact = math.log(y0 / (y0 - 1.0))
    esc = escape_time(bl, toy_distance_to_equilibria, rho)

    fx = integrate(sysm, np.array([x_fixed, 0.0]), 10.0, n_samples=101)
    drift = float(np.abs(fx.u - fx.u[0]).max())

    checks = {
        "y0_line_normally_stable": v0 == NORMALLY_STABLE,
        "y1_line_normally_hyperbolic": v1 == NORMALLY_HYPERBOLIC,
        "converges_to_origin": bool(np.abs(tr.u[-1]).max() <= 1e-8),
        "rate_near_one": bool(abs(cert.rate - 1.0) <= 0.05 and cert.passed),
        "blows_up": bl.status == "blowup" and bl.blowup_time is not None and abs(bl.blowup_time - t_exact) < 1e-3,
        "escapes_neighbourhood": esc is not None,
        "fixed_point_stays": drift == 0.0,
    }
    return ToyReport(
        v0, v1, [float(v) for v in tr.u[-1]], cert.rate, cert.r2, bl.status, bl.blowup_time,
        t_exact, esc, rho, drift, checks,
    )
