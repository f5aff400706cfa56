"""Figures rendered next to the CSV output (non-interactive backend)."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .sweep import PnTrace, ResultTable  # noqa: E402

METRICS = {
    "ser": ("Symbol error rate", True),
    "frame_error_rate": ("Frame error rate (uncoded)", True),
    "pn_mse_mean": ("PN MSE", True),
    "ch_nmse_mean": ("Channel NMSE", True),
}


def _series(table: ResultTable):
    """Group rows into curves keyed by everything except SNR."""
    curves: dict[tuple, list] = {}
    for r in table:
        if r.status != "ok":
            continue
        key = (r.estimator, r.speed_kmh, r.B_3dB, r.d_f, r.d_t)
        curves.setdefault(key, []).append(r)
    return curves


def plot_metric(table: ResultTable, metric: str, path) -> Path | None:
    """Metric versus SNR, one curve per estimator and scenario. ``None`` if empty."""
    label, logy = METRICS[metric]
    curves = _series(table)
    fig, ax = plt.subplots(figsize=(6, 4))
    drawn = False
    for (est, speed, b3, df, dt), rows in sorted(curves.items()):
        rows = sorted(rows, key=lambda r: r.snr_db)
        pts = [(r.snr_db, getattr(r, metric)) for r in rows]
        pts = [(x, y) for x, y in pts if math.isfinite(y) and (y > 0 or not logy)]
        if not pts:
            continue
        xs, ys = zip(*pts)
        ax.plot(xs, ys, marker="o", label=f"{est} ({speed:g} km/h, {b3:g} Hz, d_t={dt})")
        drawn = True
    if not drawn:
        plt.close(fig)
        return None
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("SNR [dB]")
    ax.set_ylabel(label)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_results(table: ResultTable, out_dir) -> list[Path]:
    out = Path(out_dir)
    written = []
    for metric in METRICS:
        p = plot_metric(table, metric, out / f"{metric}.png")
        if p is not None:
            written.append(p)
    return written


def plot_trace(trace: PnTrace, path, max_samples: int | None = 2000) -> Path:
    n = trace.n if max_samples is None else trace.n[:max_samples]
    sl = slice(0, len(n))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(n, trace.theta_true[sl], color="k", lw=1.2, label="true")
    ax.plot(n, trace.theta_cpe[sl], lw=1.0, label="CPE")
    ax.plot(n, trace.theta_bem[sl], lw=1.0, label="BEM")
    ax.set_xlabel("sample index n")
    ax.set_ylabel("phase [rad]")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
