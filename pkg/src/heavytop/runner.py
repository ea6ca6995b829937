"""Scenario pipeline, parameter sweeps and the invariant suite behind the CLI."""

from __future__ import annotations

import csv
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plotting
from .body import BodyParams, SystemState, validate_hypotheses
from .config import ScenarioConfig
from .dynamics import (
    Model,
    integrate,
    lyapunov_monitor,
    monitor_energy,
    monitor_invariants,
    write_trajectory_csv,
)
from .equilibria import (
    SP1,
    SP2,
    data_condition_flags,
    enumerate_families,
    genericity_flags,
    make_steady,
    steady_identity_residual,
)
from .galerkin import load_or_build
from .normal_form import (
    NotConverged,
    SemilinearSystem,
    certify_decay,
    fit_flattening,
    sample_equilibrium_manifold,
    toy_example_run,
    toy_system,
    unstable_direction,
)
from .omega_limit import conserved_K, match_terminal, predict_limit_candidates
from .spectral import assemble_linearization, classify, spectral_split

log = logging.getLogger(__name__)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def philox(seed: int) -> np.random.Generator:
    """Counter-based generator: identical streams across runs and platforms."""
    return np.random.Generator(np.random.Philox(int(seed)))


def build_model(cfg: ScenarioConfig, params: BodyParams | None = None) -> Model:
    p = params or cfg.params
    basis = load_or_build(cfg.n_modes, cfg.quad_degree, p.rho, p.nu, cfg.cache)
    basis.self_check()
    return Model(p, basis)


def base_steady(cfg: ScenarioConfig, model: Model):
    ini = cfg.initial
    return make_steady(ini["family"], ini["alpha"], model.params, ini["branch"], model=model)


def initial_state(cfg: ScenarioConfig, model: Model, base=None) -> np.ndarray:
    """Initial vector from the ``[initial]`` block; the gravity direction is renormalised.

    In steady mode the perturbation has energy norm ``perturbation`` before
    ``gamma`` is projected back onto the unit sphere, so the final offset can
    be slightly smaller.
    """
    ini = cfg.initial
    rng = philox(cfg.seed)
    if ini["mode"] == "steady":
        if base is None:
            base = base_steady(cfg, model)
        u = base.vector.copy()
        eps = ini["perturbation"]
        if eps:
            if ini["direction"] == "random":
                d = rng.standard_normal(model.dim)
            else:
                L = assemble_linearization(base, model)
                sp = spectral_split(L)
                if ini["direction"] == "unstable":
                    d = unstable_direction(sp)
                else:
                    # slowest stable mode
                    ev, V = np.linalg.eig(L)
                    stable = [i for i in range(len(ev)) if ev[i].real > sp.eps_c]
                    d = V[:, min(stable, key=lambda i: ev[i].real)].real
            u = u + eps * d / model.energy_norm(d)
    else:
        c = np.zeros(model.N)
        if ini["c0"] == "random" and model.N:
            c = ini["amplitude"] * rng.standard_normal(model.N)
        u = np.concatenate([c, ini["omega0"], ini["gamma0"]])
    g = u[-3:]
    u[-3:] = g / np.linalg.norm(g)
    if ini["target_K"] is not None:
        N = model.N
        g = u[-3:]
        K = float(model.K(u)[0])
        u[N : N + 3] += (ini["target_K"] - K) / float(g @ (model.lam * g)) * g
    return u


# ----------------------------------------------------------------------------
# scenario pipeline
# ----------------------------------------------------------------------------


@dataclass
class ScenarioResult:
    status: int
    report: dict
    artifacts: list[Path] = field(default_factory=list)


def _classification_record(s, model) -> dict:
    cl = classify(s, model)
    rec = cl.summary()
    rec.update(family=s.family, alpha=s.alpha, q=list(s.q), residual=s.residual)
    rec["genericity"] = {c.name: {"value": c.value, "passed": c.passed} for c in cl.genericity.conditions}
    rec["projector_residuals"] = cl.split.projector_residuals()
    return rec


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Validate, build, classify, integrate, monitor, predict and certify.

    Stage failures are recorded in the report (``error`` names the stage) and
    whatever was produced up to that point is kept on disk.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.kind == "toy":
        return _run_toy(cfg, out)
    report: dict = {"scenario": cfg.name, "config_warnings": cfg.warnings}
    arts: list[Path] = []
    stage = "validate"
    try:
        rep = validate_hypotheses(cfg.params)
        report["validation"] = {c.name: {"passed": c.passed, "detail": c.detail, "blocking": c.blocking} for c in rep.checks}
        if not rep.passed:
            raise ValueError(f"hypotheses fail: {rep.failures()}")

        stage = "basis"
        model = build_model(cfg)
        report["basis"] = {"N": model.N, "quad_degree": model.basis.quad_degree, "quad_nodes": model.basis.quad_nodes,
                           "self_check": model.basis.self_check(), "Eh_min_eig": float(np.linalg.eigvalsh(model.Eh)[0])}

        stage = "equilibria"
        report["families"] = enumerate_families(cfg.params)
        base = None
        if cfg.initial["mode"] == "steady":
            base = base_steady(cfg, model)
            report["base_steady"] = {"family": base.family, "alpha": base.alpha, "q": list(base.q),
                                     "residual": base.residual,
                                     "identity_residual": steady_identity_residual(base, cfg.params)}
            if cfg.analysis["classify"]:
                stage = "classify"
                report["classification"] = _classification_record(base, model)

        stage = "initial"
        u0 = initial_state(cfg, model, base)
        K0 = conserved_K(u0, model)
        report["initial"] = {"u0": list(u0), "K": K0}
        report["data_conditions"] = {
            c.name: {"value": c.value, "target": c.target, "passed": c.passed}
            for c in data_condition_flags(SystemState.from_vector(u0, model.N), model).conditions
        }

        stage = "integrate"
        traj = integrate(model, u0, cfg.t_end, rtol=cfg.rtol, atol=cfg.atol, n_samples=cfg.samples)
        report["integration"] = {"status": traj.status, "nfev": traj.nfev, "message": traj.message,
                                 "blowup_time": traj.blowup_time, "t_end": float(traj.t[-1])}
        arts.append(write_trajectory_csv(out / "trajectory.csv", traj, model))

        stage = "monitors"
        inv = monitor_invariants(traj, model)
        en = monitor_energy(traj, model)
        report["invariants"] = {"gamma_drift": inv.gamma_drift, "K0": inv.K0, "K_drift": inv.K_drift}
        report["energy"] = {"integrated_residual": en.integrated_residual, "initial_total": en.initial_total,
                            "max_increase": en.max_increase,
                            "max_balance_residual": float(en.balance_residual.max(initial=0.0))}

        distance = None
        stage = "omega_limit"
        if cfg.analysis["omega_limit"]:
            cands = predict_limit_candidates(cfg.params, K0, model)
            report["prediction"] = cands.to_dict()
            mr = match_terminal(traj, cands, model, tol_match=cfg.analysis["tol_match"], certify=False)
            report["match"] = mr.to_dict()

        stage = "normal_form"
        if cfg.analysis["normal_form"]:
            sysm = SemilinearSystem.from_model(model)
            try:
                cert = certify_decay(traj, sysm)
                report["decay_certificate"] = cert.to_dict()
                distance = cert.distance
            except NotConverged as exc:
                report["decay_certificate"] = {"passed": False, "message": str(exc)}
            if base is not None:
                sp = spectral_split(assemble_linearization(base, model))
                ms = sample_equilibrium_manifold(sysm, base.vector, sp, 1e-2, 25)
                fl = fit_flattening(ms, sp, sysm)
                report["flattening"] = {"points": len(ms.points), "dropped": ms.dropped,
                                        "fit_residual": fl.fit_residual, "validity_radius": fl.validity_radius,
                                        "derivative_norm": fl.derivative_norm, "rhs_residual": fl.rhs_residual}

        stage = "lyapunov"
        if cfg.analysis["lyapunov"] and base is not None and base.family in (SP1, SP2):
            L = assemble_linearization(base, model)
            du0 = u0 - base.vector
            lt = integrate(model, du0, cfg.analysis["lyapunov_t_end"], rtol=1e-12, atol=1e-14,
                           n_samples=2001, linear=-L)
            g = lyapunov_monitor(lt, model, base.alpha, base.q, L)
            report["lyapunov"] = {"delta_hat": g.delta_hat, "delta_components": list(g.delta_components),
                                  "max_residual": g.max_residual,
                                  "max_rate_residual": float(g.rate_residual.max())}

        stage = "plots"
        series = {"t": traj.t, "gamma_drift": inv.gamma_norm - 1.0, "K_drift": inv.K - inv.K0,
                  "E_plus_U": en.E + en.U, "D": en.D}
        arts.append(plotting.write_columns(out / "plot_monitors.csv", series))
        if distance is not None:
            arts.append(plotting.write_columns(out / "plot_log_distance.csv",
                                               {"t": traj.t, "log10_distance": np.log10(np.maximum(distance, 1e-300))}))
        if cfg.analysis["figures"]:
            arts += plotting.scenario_figures(out, traj.t, series, distance)
        status = 0
    except Exception as exc:  # noqa: BLE001 - the failing stage is reported, not swallowed
        log.error("stage %s failed: %s", stage, exc)
        report["error"] = {"stage": stage, "message": f"{type(exc).__name__}: {exc}"}
        status = 1
    arts.append(write_json(out / "report.json", report))
    return ScenarioResult(status, report, arts)


def _run_toy(cfg: ScenarioConfig, out: Path) -> ScenarioResult:
    rep = toy_example_run()
    arts = []
    sysm = toy_system()
    tr = integrate(sysm, np.array([0.0, 0.5]), 40.0, rtol=1e-12, atol=1e-14, n_samples=801)
    arts.append(plotting.write_columns(out / "plot_toy.csv", {"t": tr.t, "x": tr.u[:, 0], "y": tr.u[:, 1]}))
    if cfg.analysis["figures"]:
        arts.append(plotting.toy_figure(out, tr.t, tr.u[:, 1]))
    report = {"scenario": cfg.name, "toy": rep.to_dict(), "passed": rep.passed}
    arts.append(write_json(out / "report.json", report))
    return ScenarioResult(0 if rep.passed else 1, report, arts)


# ----------------------------------------------------------------------------
# individual workflows
# ----------------------------------------------------------------------------


def run_equilibria(cfg: ScenarioConfig) -> dict:
    """Catalogue of family members at the configured spin rate, both branches."""
    model = build_model(cfg)
    rows = []
    for fam in enumerate_families(cfg.params):
        for sgn in (1, -1):
            try:
                s = make_steady(fam, cfg.initial["alpha"], cfg.params, sgn, model=model)
            except ValueError as exc:
                rows.append({"family": fam, "branch": sgn, "alpha": cfg.initial["alpha"], "error": str(exc)})
                continue
            gf = genericity_flags(s, cfg.params)
            rows.append({"family": fam, "branch": sgn, "alpha": s.alpha, "q": list(s.q), "residual": s.residual,
                         "identity_residual": steady_identity_residual(s, cfg.params),
                         "genericity": {c.name: c.value for c in gf.conditions},
                         "generic": gf.passed})
    return {"families": enumerate_families(cfg.params), "equilibria": rows}


def run_classify(cfg: ScenarioConfig) -> dict:
    model = build_model(cfg)
    return _classification_record(base_steady(cfg, model), model)


def run_predict(cfg: ScenarioConfig) -> dict:
    model = build_model(cfg)
    base = base_steady(cfg, model) if cfg.initial["mode"] == "steady" else None
    u0 = initial_state(cfg, model, base)
    K = conserved_K(u0, model)
    out = predict_limit_candidates(cfg.params, K, model).to_dict()
    out["data_conditions"] = {
        c.name: {"value": c.value, "passed": c.passed}
        for c in data_condition_flags(SystemState.from_vector(u0, model.N), model).conditions
    }
    return out


# ----------------------------------------------------------------------------
# sweeps
# ----------------------------------------------------------------------------

SWEEP_KEYS = ("alpha", "beta2", "lambda1", "lambda2", "lambda3", "nu")
SWEEP_COLUMNS = (
    "index", "alpha", "beta2", "lambda1", "lambda2", "lambda3", "nu", "family", "branch", "status",
    "verdict", "residual", "condition", "condition_value", "center_dim", "unstable_count",
    "gamma_s", "axis_margin", "K", "n_candidates", "candidate_families", "error",
)

_model_cache: dict = {}


def sweep_grid(cfg: ScenarioConfig) -> list[dict]:
    p = cfg.params
    base = {"alpha": cfg.initial["alpha"], "beta2": p.beta2, "lambda1": p.lam[0], "lambda2": p.lam[1],
            "lambda3": p.lam[2], "nu": p.nu}
    axes = [(k, cfg.sweep[k]) for k in SWEEP_KEYS if cfg.sweep[k]]
    points = []
    for combo in itertools.product(*[v for _, v in axes]) if axes else [()]:
        pt = dict(base)
        pt.update({k: v for (k, _), v in zip(axes, combo)})
        points.append(pt)
    return points


def sweep_point(job) -> dict:
    """Classification and prediction record for one grid point (runs in a worker)."""
    idx, pt, family, branch, n_modes, quad_degree, rho, cache = job
    row = {k: "" for k in SWEEP_COLUMNS}
    row.update(index=idx, family=family, branch=branch, **pt)
    try:
        params = BodyParams((pt["lambda1"], pt["lambda2"], pt["lambda3"]), pt["beta2"], rho, pt["nu"])
        rep = validate_hypotheses(params)
        if not rep.passed:
            raise ValueError(f"hypotheses fail: {rep.failures()}")
        key = (n_modes, quad_degree, rho, pt["nu"], params)
        if key not in _model_cache:
            _model_cache[key] = Model(params, load_or_build(n_modes, quad_degree, rho, pt["nu"], cache))
        model = _model_cache[key]
        s = make_steady(family, pt["alpha"], params, branch, model=model)
        cl = classify(s, model)
        conds = cl.genericity.conditions
        worst = min(conds, key=lambda c: abs(c.value / c.target - 1.0)) if conds else None
        K = float(s.alpha * s.q @ (params.lam_array * s.q))
        cands = predict_limit_candidates(params, K)
        row.update(
            status="ok", verdict=cl.verdict, residual=s.residual,
            condition=worst.name if worst else "", condition_value=worst.value if worst else "",
            center_dim=cl.center_dim, unstable_count=cl.unstable_count, gamma_s=cl.split.gamma_s,
            axis_margin=cl.axis_margin, K=K, n_candidates=len(cands.feasible),
            candidate_families="|".join(sorted({c.family for c in cands.feasible})),
        )
    except Exception as exc:  # noqa: BLE001 - per-point failures are recorded, the sweep continues
        row.update(status="error", error=f"{type(exc).__name__}: {exc}")
    return row


def run_sweep(cfg: ScenarioConfig, workers: int = 1) -> list[dict]:
    jobs = [
        (i, pt, cfg.sweep["family"], cfg.sweep["branch"], cfg.n_modes, cfg.quad_degree, cfg.params.rho, cfg.cache)
        for i, pt in enumerate(sweep_grid(cfg))
    ]
    if workers <= 1:
        return [sweep_point(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(sweep_point, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_sweep_csv(path, rows: list[dict]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([_cell(r[k]) for k in SWEEP_COLUMNS])
    return path


@dataclass
class BandReport:
    boundary_value: float
    degenerate_values: list[float]
    width: float
    verdict_below: str | None
    verdict_above: str | None

    @property
    def changes(self) -> bool:
        return self.verdict_below is not None and self.verdict_above is not None and self.verdict_below != self.verdict_above


def degenerate_band(rows: list[dict], condition: str, target: float = 1.0) -> BandReport:
    """Width, in condition-value space, of the Degenerate stretch around ``target``."""
    ok = [r for r in rows if r["status"] == "ok" and r["condition"] == condition]
    deg = sorted(float(r["condition_value"]) for r in ok if r["verdict"] == "Degenerate")
    width = (max(deg) - min(deg)) if deg else 0.0
    below = [r for r in ok if float(r["condition_value"]) < target and r["verdict"] != "Degenerate"]
    above = [r for r in ok if float(r["condition_value"]) > target and r["verdict"] != "Degenerate"]
    vb = max(below, key=lambda r: float(r["condition_value"]))["verdict"] if below else None
    va = min(above, key=lambda r: float(r["condition_value"]))["verdict"] if above else None
    return BandReport(target, deg, width, vb, va)


# ----------------------------------------------------------------------------
# invariant suite
# ----------------------------------------------------------------------------


def run_verify(cfg: ScenarioConfig, t_end: float = 20.0) -> dict:
    """Self-checks: tensors, Jacobian, projectors, conservation and energy balance."""
    model = build_model(cfg)
    checks = {}
    sc = model.basis.self_check()
    checks["basis_skew"] = {"value": max(sc.values()), "tol": 1e-10}
    lo = float(np.linalg.eigvalsh(model.Eh)[0])
    base = base_steady(cfg, model)
    sysm = SemilinearSystem.from_model(model)
    checks["steady_residual"] = {"value": base.residual, "tol": 1e-10}
    probe = initial_state(cfg, model, base)
    checks["jacobian_fd"] = {"value": sysm.check_jacobian([base.vector, probe], h=1e-5), "tol": 1e-6}
    sp = spectral_split(assemble_linearization(base, model))
    checks["projectors"] = {"value": max(sp.projector_residuals().values()), "tol": 1e-8}
    u0 = initial_state(cfg, model, base)
    tr = integrate(model, u0, t_end, rtol=cfg.rtol, atol=cfg.atol, n_samples=1001)
    inv = monitor_invariants(tr, model)
    en = monitor_energy(tr, model)
    mon_tol = 100 * max(cfg.rtol, cfg.atol)
    checks["gamma_drift"] = {"value": inv.gamma_drift, "tol": mon_tol}
    checks["K_drift"] = {"value": inv.K_drift, "tol": mon_tol}
    checks["energy_identity"] = {"value": en.integrated_residual, "tol": 1e-6 * max(abs(en.initial_total), 1.0)}
    for c in checks.values():
        c["passed"] = bool(c["value"] <= c["tol"])
    # the only lower bound in the suite
    checks["mass_block_min_eig"] = {"value": lo, "tol": 0.0, "passed": lo > 0.0}
    return {"checks": checks, "passed": all(c["passed"] for c in checks.values())}
