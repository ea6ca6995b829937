"""Scenario configuration: an INI-style key-value file read with ``configparser``.

Every key and its default lives in :data:`DEFAULTS`. Unknown sections or keys
are rejected so typos surface at parse time.
"""

from __future__ import annotations

import configparser
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .body import BodyParams, validate_hypotheses

log = logging.getLogger(__name__)

DEFAULTS: dict[str, dict[str, str]] = {
    "scenario": {"name": "scenario", "kind": "model"},
    "body": {"lambda": "1, 2, 3", "beta2": "1.0", "rho": "0.5", "nu": "0.1"},
    "basis": {"n": "8", "quad_degree": "", "cache": ""},
    "initial": {
        # steady: start at a family member plus a perturbation; state: explicit data
        "mode": "steady",
        "family": "SP1",
        "alpha": "1.0",
        "branch": "1",
        "perturbation": "1e-3",
        "direction": "random",
        "c0": "zero",
        "amplitude": "0.0",
        "omega0": "0, 0, 0",
        "gamma0": "0, 0, 1",
        "target_K": "",
        "seed": "0",
    },
    "run": {"t_end": "100.0", "rtol": "1e-10", "atol": "1e-10", "samples": "2001"},
    "analysis": {
        "classify": "true",
        "normal_form": "true",
        "omega_limit": "true",
        "lyapunov": "true",
        "lyapunov_t_end": "20.0",
        "tol_match": "1e-4",
        "figures": "true",
    },
    "sweep": {"family": "PR", "branch": "1", "alpha": "", "beta2": "", "lambda1": "", "lambda2": "", "lambda3": "", "nu": ""},
    "output": {"dir": "out"},
}


class ConfigError(ValueError):
    """Raised with the offending ``section.key`` in the message."""


def _floats(text: str, key: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as numbers") from exc
    if n is not None and len(vals) != n:
        raise ConfigError(f"{key}: expected {n} values, got {len(vals)}")
    return vals


def parse_grid(text: str, key: str) -> list[float]:
    """``a, b, c`` or ``start:stop:count`` (inclusive linspace)."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"{key}: grid must be start:stop:count")
        a, b = float(parts[0]), float(parts[1])
        return [float(v) for v in np.linspace(a, b, int(parts[2]))]
    return _floats(text, key)


def _bool(text: str, key: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _num(sec, key, full, kind=float):
    try:
        return kind(sec[key])
    except ValueError as exc:
        raise ConfigError(f"{full}: cannot parse {sec[key]!r}") from exc


@dataclass
class ScenarioConfig:
    name: str
    kind: str
    params: BodyParams
    n_modes: int
    quad_degree: int | None
    cache: str | None
    initial: dict
    t_end: float
    rtol: float
    atol: float
    samples: int
    analysis: dict
    sweep: dict
    out_dir: Path
    seed: int
    source: Path | None = None
    warnings: list[str] = field(default_factory=list)

    def with_overrides(self, out=None, seed=None, tol_abs=None, tol_rel=None) -> "ScenarioConfig":
        cfg = self
        if out is not None:
            cfg = replace(cfg, out_dir=Path(out))
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if tol_abs is not None:
            cfg = replace(cfg, atol=float(tol_abs))
        if tol_rel is not None:
            cfg = replace(cfg, rtol=float(tol_rel))
        return cfg


def load_config(path: str | Path | None = None, text: str | None = None) -> ScenarioConfig:
    """Parse a scenario file (or string) into a validated :class:`ScenarioConfig`."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    user = configparser.ConfigParser(interpolation=None)
    user.optionxform = str
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        user.read(path)
    elif text is not None:
        user.read_string(text)
    for sec in user.sections():
        if sec not in DEFAULTS:
            raise ConfigError(f"unknown section [{sec}]")
        for key, val in user[sec].items():
            if key not in DEFAULTS[sec]:
                raise ConfigError(f"{sec}.{key}: unknown key")
            cp[sec][key] = val

    b = cp["body"]
    lam = _floats(b["lambda"], "body.lambda", 3)
    beta2 = _num(b, "beta2", "body.beta2")
    rho = _num(b, "rho", "body.rho")
    nu = _num(b, "nu", "body.nu")
    for key, val in (("beta2", beta2), ("rho", rho), ("nu", nu)):
        if not (val > 0) or not math.isfinite(val):
            raise ConfigError(f"body.{key}: must be positive, got {val}")
    if any(not (v > 0) for v in lam):
        raise ConfigError(f"body.lambda: entries must be positive, got {lam}")
    params = BodyParams(tuple(lam), beta2, rho, nu)

    kind = cp["scenario"]["kind"].strip()
    if kind not in ("model", "toy"):
        raise ConfigError(f"scenario.kind: expected 'model' or 'toy', got {kind!r}")
    if kind == "model":
        rep = validate_hypotheses(params)
        if not rep.passed:
            raise ConfigError(f"body: hypotheses fail ({', '.join(rep.failures())})")

    bs = cp["basis"]
    n = _num(bs, "n", "basis.n", int)
    if n < 0:
        raise ConfigError("basis.n: must be non-negative")
    qd = bs["quad_degree"].strip()
    quad_degree = int(qd) if qd else None
    cache = bs["cache"].strip() or None

    ini = cp["initial"]
    initial = {
        "mode": ini["mode"].strip(),
        "family": ini["family"].strip(),
        "alpha": _num(ini, "alpha", "initial.alpha"),
        "branch": _num(ini, "branch", "initial.branch", int),
        "perturbation": _num(ini, "perturbation", "initial.perturbation"),
        "direction": ini["direction"].strip(),
        "c0": ini["c0"].strip(),
        "amplitude": _num(ini, "amplitude", "initial.amplitude"),
        "omega0": _floats(ini["omega0"], "initial.omega0", 3),
        "gamma0": _floats(ini["gamma0"], "initial.gamma0", 3),
        "target_K": float(ini["target_K"]) if ini["target_K"].strip() else None,
    }
    if initial["mode"] not in ("steady", "state"):
        raise ConfigError(f"initial.mode: expected 'steady' or 'state', got {initial['mode']!r}")
    if initial["direction"] not in ("random", "unstable", "stable"):
        raise ConfigError(f"initial.direction: unknown value {initial['direction']!r}")
    if initial["c0"] not in ("zero", "random"):
        raise ConfigError(f"initial.c0: expected 'zero' or 'random', got {initial['c0']!r}")
    warns = []
    g = np.array(initial["gamma0"])
    gn = float(np.linalg.norm(g))
    if gn == 0:
        raise ConfigError("initial.gamma0: zero vector")
    if abs(gn - 1.0) > 1e-9:
        msg = f"initial.gamma0 renormalised from length {gn:.12g}"
        log.warning(msg)
        warns.append(msg)
    initial["gamma0"] = list(g / gn)

    rn = cp["run"]
    t_end = _num(rn, "t_end", "run.t_end")
    if t_end < 0:
        raise ConfigError("run.t_end: must be non-negative")
    an = cp["analysis"]
    analysis = {k: _bool(an[k], f"analysis.{k}") for k in ("classify", "normal_form", "omega_limit", "lyapunov", "figures")}
    analysis["lyapunov_t_end"] = _num(an, "lyapunov_t_end", "analysis.lyapunov_t_end")
    analysis["tol_match"] = _num(an, "tol_match", "analysis.tol_match")
    sw = cp["sweep"]
    sweep = {"family": sw["family"].strip(), "branch": _num(sw, "branch", "sweep.branch", int)}
    for key in ("alpha", "beta2", "lambda1", "lambda2", "lambda3", "nu"):
        sweep[key] = parse_grid(sw[key], f"sweep.{key}")

    return ScenarioConfig(
        name=cp["scenario"]["name"].strip(),
        kind=kind,
        params=params,
        n_modes=n,
        quad_degree=quad_degree,
        cache=cache,
        initial=initial,
        t_end=t_end,
        rtol=_num(rn, "rtol", "run.rtol"),
        atol=_num(rn, "atol", "run.atol"),
        samples=_num(rn, "samples", "run.samples", int),
        analysis=analysis,
        sweep=sweep,
        out_dir=Path(cp["output"]["dir"]),
        seed=_num(ini, "seed", "initial.seed", int),
        source=path,
        warnings=warns,
    )
