"""Command-line entry point: ``heavytop <subcommand> --config PATH [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import plotting, runner
from .config import ConfigError, load_config

SUBCOMMANDS = ("simulate", "equilibria", "classify", "predict", "sweep", "verify")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="heavytop",
        description="Fluid-filled heavy top: simulation, steady states, spectra and limit prediction.",
    )
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", type=Path, help="scenario file (INI key-value format)")
    ap.add_argument("--out", type=Path, help="output directory (overrides [output] dir)")
    ap.add_argument("--seed", type=int, help="seed of the counter-based generator")
    ap.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")
    ap.add_argument("--tol-abs", type=float, help="absolute integrator tolerance")
    ap.add_argument("--tol-rel", type=float, help="relative integrator tolerance")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: parse stage: {exc}", file=sys.stderr)
        return 2
    cfg = cfg.with_overrides(out=args.out, seed=args.seed, tol_abs=args.tol_abs, tol_rel=args.tol_rel)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "simulate":
        res = runner.run_scenario(cfg)
        if res.status:
            err = res.report.get("error", {})
            print(f"error: stage '{err.get('stage', '?')}': {err.get('message', 'failed')}", file=sys.stderr)
        for p in res.artifacts:
            print(p)
        return res.status

    try:
        if args.command == "equilibria":
            data = runner.run_equilibria(cfg)
        elif args.command == "classify":
            data = runner.run_classify(cfg)
            print(f"verdict: {data['verdict']}")
        elif args.command == "predict":
            data = runner.run_predict(cfg)
        elif args.command == "sweep":
            rows = runner.run_sweep(cfg, workers=args.workers)
            path = runner.write_sweep_csv(out / "sweep.csv", rows)
            print(path)
            axis = next((k for k in runner.SWEEP_KEYS if cfg.sweep[k]), "alpha")
            ok = [r for r in rows if r["status"] == "ok"]
            if ok and cfg.analysis["figures"]:
                print(plotting.sweep_figure(out, [r[axis] for r in ok], [r["verdict"] for r in ok], axis))
            return 0 if all(r["status"] == "ok" for r in rows) else 1
        else:
            data = runner.run_verify(cfg)
            for name, c in data["checks"].items():
                print(f"{'PASS' if c['passed'] else 'FAIL'} {name}: {c['value']:.3e} (tol {c['tol']:.1e})")
    except Exception as exc:  # noqa: BLE001 - surfaced with the failing command named
        print(f"error: {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    path = runner.write_json(out / f"{args.command}.json", data)
    print(path)
    if args.command == "verify":
        return 0 if data["passed"] else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
