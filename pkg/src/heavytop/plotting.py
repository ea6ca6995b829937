"""Plot-data CSV files and PNG figures for scenario and sweep reports."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def write_columns(path, columns: dict[str, np.ndarray]) -> Path:
    """Columnar CSV; floats are written with ``repr`` so files are byte-stable."""
    path = Path(path)
    keys = list(columns)
    arrs = [np.asarray(columns[k]) for k in keys]
    n = min(a.size for a in arrs) if arrs else 0
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for i in range(n):
            w.writerow([repr(float(a[i])) for a in arrs])
    return path


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def scenario_figures(out_dir, t, series: dict[str, np.ndarray], distance=None) -> list[Path]:
    """Monitor time series: |gamma|-1, K drift, E+U and (optionally) log-distance to the limit."""
    out_dir = Path(out_dir)
    paths = []
    fig, axes = plt.subplots(3, 1, figsize=(7, 7), sharex=True)
    axes[0].plot(t, series["gamma_drift"])
    axes[0].set_ylabel("|gamma| - 1")
    axes[1].plot(t, series["K_drift"])
    axes[1].set_ylabel("K(t) - K(0)")
    axes[2].plot(t, series["E_plus_U"])
    axes[2].set_ylabel("E + U")
    axes[2].set_xlabel("t")
    paths.append(_save(fig, out_dir / "monitors.png"))
    if distance is not None:
        fig, ax = plt.subplots(figsize=(7, 4))
        d = np.asarray(distance)
        ax.semilogy(t[d > 0], d[d > 0])
        ax.set_xlabel("t")
        ax.set_ylabel("|u(t) - u_inf| (energy norm)")
        paths.append(_save(fig, out_dir / "log_distance.png"))
    return paths


def sweep_figure(out_dir, x, verdicts: list[str], xlabel: str, values=None) -> Path:
    levels = {"NormallyHyperbolic": -1, "Degenerate": 0, "NormallyStable": 1}
    y = [levels.get(v, np.nan) for v in verdicts]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(x, y, "o")
    ax.set_yticks([-1, 0, 1], ["hyperbolic", "degenerate", "stable"])
    ax.set_xlabel(xlabel)
    return _save(fig, Path(out_dir) / "sweep_verdicts.png")


def toy_figure(out_dir, t, y) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.semilogy(t, np.abs(y))
    ax.set_xlabel("t")
    ax.set_ylabel("|y(t)|")
    return _save(fig, Path(out_dir) / "toy_convergence.png")
