"""Reduced equations of motion, time integration and conservation monitors."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import cho_factor, cho_solve

from .body import E3, BodyParams, SystemState, hat
from .galerkin import GalerkinBasis, assemble_mass_block

log = logging.getLogger(__name__)


class Model:
    """Semi-discrete fluid-filled heavy top on a fixed Galerkin basis.

    The state vector is ``u = (c, omega, gamma)`` of length ``N + 6``. The
    mass block is factorised once and reused by every right-hand side call.
    """

    def __init__(self, params: BodyParams, basis: GalerkinBasis):
        if basis.N and (abs(basis.rho - params.rho) > 0 or abs(basis.nu - params.nu) > 0):
            raise ValueError("basis was built for different fluid properties")
        self.params = params
        self.basis = basis
        self.N = basis.N
        self.Eh = assemble_mass_block(basis, params)
        self._cho = cho_factor(self.Eh)
        self.lam = params.lam_array

    @property
    def dim(self) -> int:
        return self.N + 6

    def split(self, u):
        N = self.N
        return u[:N], u[N : N + 3], u[N + 3 : N + 6]

    def momentum(self, u) -> np.ndarray:
        """Total angular momentum ``I omega + B^T c`` (equals ``I (omega - a)``)."""
        c, w, _ = self.split(u)
        return self.lam * w + self.basis.B.T @ c

    def forces(self, u) -> np.ndarray:
        c, w, g = self.split(u)
        b = self.basis
        rc = -b.convection(c) - 2.0 * b.coriolis(w) @ c - b.S @ c if self.N else np.zeros(0)
        rw = -np.cross(w, self.momentum(u)) + self.params.beta2 * np.cross(E3, g)
        return np.concatenate([rc, rw])

    def rhs(self, t, u):
        u = np.asarray(u, dtype=float)
        acc = cho_solve(self._cho, self.forces(u))
        _, w, g = self.split(u)
        return np.concatenate([acc, -np.cross(w, g)])

    def force_jacobian(self, u) -> np.ndarray:
        """Exact Jacobian of ``(forces, -omega x gamma)`` with respect to ``u``."""
        N = self.N
        c, w, g = self.split(u)
        b = self.basis
        J = np.zeros((N + 6, N + 6))
        if N:
            J[:N, :N] = (
                -np.einsum("jkl,l->jk", b.C, c)
                - np.einsum("jkl,k->jl", b.C, c)
                - 2.0 * b.coriolis(w)
                - b.S
            )
            J[:N, N : N + 3] = -2.0 * np.einsum("ijk,k->ji", b.G, c)
            J[N : N + 3, :N] = -hat(w) @ b.B.T
        J[N : N + 3, N : N + 3] = -hat(w) @ np.diag(self.lam) + hat(self.momentum(u))
        J[N : N + 3, N + 3 :] = self.params.beta2 * hat(E3)
        J[N + 3 :, N : N + 3] = hat(g)
        J[N + 3 :, N + 3 :] = -hat(w)
        return J

    def jacobian(self, u) -> np.ndarray:
        J = self.force_jacobian(u)
        n = self.N + 3
        J[:n] = cho_solve(self._cho, J[:n])
        return J

    @cached_property
    def extended_mass(self) -> np.ndarray:
        """``Eh`` padded with the identity on the gravity block; defines the energy norm."""
        n = self.N + 3
        out = np.eye(self.N + 6)
        out[:n, :n] = self.Eh
        return out

    def energy_norm(self, du) -> np.ndarray:
        du = np.asarray(du, dtype=float)
        return np.sqrt(np.einsum("...i,ij,...j->...", du, self.extended_mass, du))

    # monitored scalars -------------------------------------------------------

    def K(self, u) -> np.ndarray:
        u = np.atleast_2d(u)
        N = self.N
        mom = u[:, N : N + 3] * self.lam + u[:, :N] @ self.basis.B
        return np.einsum("ti,ti->t", u[:, N + 3 :], mom)

    def kinetic(self, u) -> np.ndarray:
        u = np.atleast_2d(u)
        n = self.N + 3
        return np.einsum("ti,ij,tj->t", u[:, :n], self.Eh, u[:, :n])

    def potential(self, u) -> np.ndarray:
        u = np.atleast_2d(u)
        return -2.0 * self.params.beta2 * u[:, -1]

    def dissipation_rate(self, u) -> np.ndarray:
        """``2 c^T S c``, the instantaneous loss rate of ``E + U``."""
        u = np.atleast_2d(u)
        c = u[:, : self.N]
        return 2.0 * np.einsum("ti,ij,tj->t", c, self.basis.S, c)

    def kinetic_by_definition(self, u) -> float:
        """``c^T M c - a.I a + (omega - a).I (omega - a)`` evaluated term by term."""
        c, w, _ = self.split(np.asarray(u, dtype=float))
        a = -(self.basis.B.T @ c) / self.lam if self.N else np.zeros(3)
        ws = w - a
        return float(c @ self.basis.M @ c - a @ (self.lam * a) + ws @ (self.lam * ws))


def rhs_semidiscrete(state: SystemState, params: BodyParams, basis: GalerkinBasis) -> SystemState:
    model = Model(params, basis)
    return SystemState.from_vector(model.rhs(0.0, state.to_vector()), basis.N)


# ----------------------------------------------------------------------------
# integration
# ----------------------------------------------------------------------------


@dataclass
class Trajectory:
    t: np.ndarray
    u: np.ndarray  # (T, N + 6)
    n_modes: int
    status: str = "ok"
    message: str = ""
    nfev: int = 0
    blowup_time: float | None = None
    monitors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.t.size > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("sample times must be strictly increasing")

    def __len__(self):
        return self.t.size

    def state(self, k: int) -> SystemState:
        return SystemState.from_vector(self.u[k], self.n_modes)

    @property
    def final(self) -> np.ndarray:
        return self.u[-1]


def integrate(
    model,
    u0,
    t_end: float,
    rtol: float = 1e-10,
    atol: float = 1e-10,
    n_samples: int = 501,
    t_eval=None,
    method: str = "DOP853",
    max_norm: float = 1e8,
    linear: np.ndarray | None = None,
) -> Trajectory:
    """Adaptive embedded Runge-Kutta integration sampled through dense output.

    ``model`` is a :class:`Model` or any object with ``dim`` and
    ``rhs(t, u)``. Passing ``linear`` integrates ``u' = linear @ u`` instead
    (used for the linearised flow). Step-size collapse or growth past
    ``max_norm`` is reported as a blow-up candidate instead of raising.
    """
    if isinstance(u0, SystemState):
        u0 = u0.to_vector()
    u0 = np.asarray(u0, dtype=float)
    if u0.size != model.dim:
        raise ValueError(f"initial state has length {u0.size}, expected {model.dim}")
    n_modes = getattr(model, "N", 0)
    if linear is None and isinstance(model, Model):
        gnorm = np.linalg.norm(u0[-3:])
        if abs(gnorm - 1.0) > 1e-12:
            warnings.warn(f"|gamma0| = {gnorm:.15g} differs from 1", stacklevel=2)
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    if t_end == 0:
        return Trajectory(np.array([0.0]), u0[None, :].copy(), n_modes)
    if t_eval is None:
        t_eval = np.linspace(0.0, t_end, n_samples)
    t_eval = np.asarray(t_eval, dtype=float)

    fun = model.rhs if linear is None else (lambda t, u: linear @ u)

    def escape(t, u):
        return max_norm - np.abs(u).max()

    escape.terminal = True
    kw = {}
    if method in ("Radau", "BDF", "LSODA"):
        kw["jac"] = (lambda t, u: model.jacobian(u)) if linear is None else (lambda t, u: linear)
    sol = solve_ivp(
        fun, (0.0, float(t_end)), u0, method=method, t_eval=t_eval, rtol=rtol, atol=atol,
        events=escape, **kw,
    )
    traj = Trajectory(sol.t, sol.y.T.copy(), n_modes, nfev=sol.nfev, message=sol.message)
    if sol.status == -1:
        traj.status = "blowup"
        traj.blowup_time = float(sol.t[-1]) if sol.t.size else 0.0
        log.warning("integration stopped at t=%g: %s", traj.blowup_time, sol.message)
    elif sol.status == 1:
        traj.status = "blowup"
        traj.blowup_time = float(sol.t_events[0][0])
        log.warning("state norm exceeded %g at t=%g", max_norm, traj.blowup_time)
    return traj


# ----------------------------------------------------------------------------
# monitors
# ----------------------------------------------------------------------------


@dataclass
class InvariantReport:
    gamma_drift: float
    K0: float
    K_drift: float
    gamma_norm: np.ndarray
    K: np.ndarray

    def passed(self, tol: float) -> bool:
        return self.gamma_drift <= tol and self.K_drift <= tol


def monitor_invariants(traj: Trajectory, model: Model) -> InvariantReport:
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    gn = np.linalg.norm(traj.u[:, -3:], axis=1)
    K = model.K(traj.u)
    traj.monitors["gammanorm"] = gn
    traj.monitors["K"] = K
    return InvariantReport(
        float(np.abs(gn - 1.0).max()), float(K[0]), float(np.abs(K - K[0]).max()), gn, K
    )


@dataclass
class EnergyReport:
    E: np.ndarray
    U: np.ndarray
    D: np.ndarray  # cumulative dissipation
    rate_residual: np.ndarray  # |d(E+U)/dt + 2 c^T S c| at samples
    integrated_residual: float
    balance_residual: np.ndarray  # per-interval integral balance
    max_increase: float
    initial_total: float

    @property
    def total(self) -> np.ndarray:
        return self.E + self.U

    def monotone(self, tol: float) -> bool:
        return self.max_increase <= tol


def monitor_energy(traj: Trajectory, model: Model) -> EnergyReport:
    """Energy balance ``d(E+U)/dt = -2 c^T S c`` checked pointwise and in integral form.

    The pointwise rate is differentiated exactly through the model's right-hand
    side; the integral balance uses trapezoidal quadrature of the dissipation
    between consecutive samples.
    """
    u = traj.u
    E = model.kinetic(u)
    U = model.potential(u)
    diss = model.dissipation_rate(u)
    t = traj.t
    n = model.N + 3
    rate = np.empty(len(t))
    for k in range(len(t)):
        du = model.rhs(t[k], u[k])
        rate[k] = 2.0 * u[k, :n] @ model.Eh @ du[:n] - 2.0 * model.params.beta2 * du[-1]
    rate_res = np.abs(rate + diss)
    if len(t) > 1:
        dt = np.diff(t)
        D = np.concatenate([[0.0], np.cumsum(0.5 * dt * (diss[1:] + diss[:-1]))])
        integrated = float(np.sum(0.5 * dt * (rate_res[1:] + rate_res[:-1])))
        bal = np.abs(np.diff(E + U) + np.diff(D))
        inc = float(max(np.diff(E + U).max(), 0.0))
    else:
        D = np.zeros(1)
        integrated = 0.0
        bal = np.zeros(0)
        inc = 0.0
    traj.monitors.update(E=E, U=U, D=D)
    return EnergyReport(E, U, D, rate_res, integrated, bal, inc, float(E[0] + U[0]))


@dataclass
class GReport:
    delta_hat: float
    delta_components: np.ndarray
    G: np.ndarray
    residual: np.ndarray  # |0.5 dG/dt + c^T S c| per step (finite differences)
    rate_residual: np.ndarray  # same, with dG/dt evaluated exactly at samples

    @property
    def max_residual(self) -> float:
        return float(self.residual.max(initial=0.0))


class DeltaInconsistent(ValueError):
    pass


def delta_hat(params: BodyParams, alpha: float, q: np.ndarray, tol: float = 1e-9) -> tuple[float, np.ndarray]:
    """Scalar ``d`` with ``alpha^2 I q + beta2 e3 = d q``; raises when no such scalar exists."""
    q = np.asarray(q, dtype=float)
    lhs = alpha**2 * params.lam_array * q + params.beta2 * E3
    d = float(lhs @ q / (q @ q))
    comps = np.full(3, np.nan)
    nz = np.abs(q) > 1e-12
    comps[nz] = lhs[nz] / q[nz]
    if np.linalg.norm(lhs - d * q) > tol * max(1.0, np.linalg.norm(lhs)):
        raise DeltaInconsistent(f"no scalar d with alpha^2 I q + beta2 e3 = d q (components {comps})")
    return d, comps


def lyapunov_functional(model: Model, du: np.ndarray, alpha: float, d: float) -> np.ndarray:
    du = np.atleast_2d(du)
    N = model.N
    lam = model.lam
    c, w, z = du[:, :N], du[:, N : N + 3], du[:, N + 3 :]
    Btc = c @ model.basis.B
    a = -Btc / lam
    ws = w - a
    Mc = np.einsum("ti,ij,tj->t", c, model.basis.M, c)
    return (
        Mc
        - np.einsum("ti,ti->t", a, a * lam)
        + np.einsum("ti,ti->t", ws, ws * lam)
        + d * np.einsum("ti,ti->t", z, z)
        - 2.0 * alpha * np.einsum("ti,ti->t", z, ws * lam)
    )


def lyapunov_monitor(traj: Trajectory, model: Model, alpha: float, q, L: np.ndarray) -> GReport:
    """Decay identity ``0.5 dG/dt + c^T S c = 0`` along ``u' = -L u``.

    ``traj`` holds perturbations ``u - u_bar`` of the linearised flow.
    """
    d, comps = delta_hat(model.params, alpha, q)
    Gv = lyapunov_functional(model, traj.u, alpha, d)
    N = model.N
    c = traj.u[:, :N]
    cSc = np.einsum("ti,ij,tj->t", c, model.basis.S, c)
    if len(traj) > 1:
        dt = np.diff(traj.t)
        mid = 0.5 * (cSc[1:] + cSc[:-1])
        res = np.abs(0.5 * np.diff(Gv) / dt + mid)
    else:
        res = np.zeros(0)
    # exact rate: G is quadratic, G = u^T H u, dG/dt = 2 u^T H (-L u)
    H = _lyapunov_matrix(model, alpha, d)
    du = -traj.u @ L.T
    rate = np.einsum("ti,ij,tj->t", traj.u, H, du)
    rate_res = np.abs(rate + cSc)
    return GReport(d, comps, Gv, res, rate_res)


def _lyapunov_matrix(model: Model, alpha: float, d: float) -> np.ndarray:
    n = model.dim
    H = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        for j in range(k, n):
            f = np.zeros(n)
            f[j] = 1.0
            H[k, j] = H[j, k] = 0.25 * (
                lyapunov_functional(model, e + f, alpha, d)[0]
                - lyapunov_functional(model, e - f, alpha, d)[0]
            )
    return H


# ----------------------------------------------------------------------------
# export
# ----------------------------------------------------------------------------


def trajectory_header(n_modes: int) -> list[str]:
    return (
        ["t"]
        + [f"c_{j + 1}" for j in range(n_modes)]
        + ["omega_1", "omega_2", "omega_3", "gamma_1", "gamma_2", "gamma_3"]
        + ["gammanorm", "K", "E", "U", "D"]
    )


def write_trajectory_csv(path, traj: Trajectory, model: Model) -> Path:
    """CSV with one row per sample; floats written with ``repr`` for byte stability."""
    if "K" not in traj.monitors:
        monitor_invariants(traj, model)
    if "E" not in traj.monitors:
        monitor_energy(traj, model)
    path = Path(path)
    m = traj.monitors
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(traj.n_modes))
        for k in range(len(traj)):
            row = [traj.t[k], *traj.u[k], m["gammanorm"][k], m["K"][k], m["E"][k], m["U"][k], m["D"][k]]
            w.writerow([repr(float(x)) for x in row])
    return path
