"""Physical parameters of the heavy body with a fluid-filled cavity.

Everything is expressed in the principal frame of inertia, so the inertia
tensor is carried as its three eigenvalues. The cavity is the unit ball
centred at the fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

E3 = np.array([0.0, 0.0, 1.0])

# Inertia of a unit-density unit ball about any diameter: 8*pi/15.
BALL_INERTIA = 8.0 * np.pi / 15.0


def hat(w: np.ndarray) -> np.ndarray:
    """Skew matrix with ``hat(w) @ u == np.cross(w, u)``."""
    return np.array(
        [
            [0.0, -w[2], w[1]],
            [w[2], 0.0, -w[0]],
            [-w[1], w[0], 0.0],
        ]
    )


@dataclass(frozen=True)
class BodyParams:
    """Inertia spectrum, gravity torque scale and fluid properties.

    Parameters
    ----------
    lam
        Principal moments of inertia of the whole system about the fixed point.
    beta2
        Torque scale ``M g l``.
    rho
        Fluid density. The default 0.5 keeps the fluid inertia of the unit
        ball below the smallest moment for the usual test bodies.
    nu
        Kinematic viscosity.
    """

    lam: tuple[float, float, float]
    beta2: float
    rho: float = 0.5
    nu: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "lam", tuple(float(v) for v in self.lam))
        if len(self.lam) != 3:
            raise ValueError("lam must have three entries")

    @property
    def mu(self) -> float:
        return self.rho * self.nu

    @property
    def inertia(self) -> np.ndarray:
        return np.diag(self.lam)

    @property
    def lam_array(self) -> np.ndarray:
        return np.asarray(self.lam, dtype=float)

    def with_(self, **changes) -> "BodyParams":
        kw = dict(lam=self.lam, beta2=self.beta2, rho=self.rho, nu=self.nu)
        kw.update(changes)
        return BodyParams(**kw)


@dataclass
class SystemState:
    """Fluid Galerkin coordinates, angular velocity and gravity direction."""

    c: np.ndarray
    omega: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        if self.c.ndim != 1:
            raise ValueError("c must be a vector")
        self.omega = np.asarray(self.omega, dtype=float).reshape(3)
        self.gamma = np.asarray(self.gamma, dtype=float).reshape(3)

    @property
    def n_modes(self) -> int:
        return self.c.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.c, self.omega, self.gamma])

    @classmethod
    def from_vector(cls, u: np.ndarray, n_modes: int) -> "SystemState":
        u = np.asarray(u, dtype=float)
        if u.size != n_modes + 6:
            raise ValueError(f"state vector has length {u.size}, expected {n_modes + 6}")
        return cls(u[:n_modes].copy(), u[n_modes : n_modes + 3].copy(), u[n_modes + 3 :].copy())


@dataclass(frozen=True)
class HypothesisCheck:
    name: str
    passed: bool
    detail: str
    blocking: bool = True


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[HypothesisCheck, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.blocking)

    def failures(self) -> list[str]:
        return [c.name for c in self.checks if c.blocking and not c.passed]

    def __getitem__(self, name: str) -> HypothesisCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def validate_hypotheses(params: BodyParams, rel_tol: float = 1e-12) -> ValidationReport:
    """Check the standing assumptions on the body.

    The excluded configuration is an axisymmetric body whose symmetry axis is
    transverse to the line through the fixed point and the centre of mass,
    i.e. ``lam1 == lam2 != lam3``.

    The cavity-inertia entry is informational: it compares each moment of
    inertia with that of the fluid alone, which the coupled mass matrix needs
    to stay positive definite once the basis resolves rigid rotations well.
    """
    l1, l2, l3 = params.lam
    checks = []
    positive = all(v > 0 for v in (*params.lam, params.beta2, params.rho, params.nu))
    checks.append(
        HypothesisCheck(
            "positivity",
            positive,
            f"lam={params.lam}, beta2={params.beta2}, rho={params.rho}, nu={params.nu}",
        )
    )
    tri = all(a <= b + c + rel_tol * max(params.lam) for a, b, c in permutations(params.lam))
    checks.append(HypothesisCheck("realizability", tri, "lam_i <= lam_j + lam_k"))
    scale = max(abs(l1), abs(l2), abs(l3), 1.0)
    eq12 = abs(l1 - l2) <= rel_tol * scale
    eq23 = abs(l2 - l3) <= rel_tol * scale
    excluded = eq12 and not eq23
    checks.append(
        HypothesisCheck(
            "axisymmetry_excluded",
            not excluded,
            "lam1 == lam2 != lam3 is not admitted" if excluded else "ok",
        )
    )
    fluid = params.rho * BALL_INERTIA
    checks.append(
        HypothesisCheck(
            "cavity_inertia",
            min(params.lam) > fluid,
            f"min(lam)={min(params.lam):.6g} vs fluid inertia {fluid:.6g}",
            blocking=False,
        )
    )
    return ValidationReport(tuple(checks))


def inertia_apply(params: BodyParams, w: np.ndarray) -> np.ndarray:
    return params.lam_array * np.asarray(w, dtype=float)
