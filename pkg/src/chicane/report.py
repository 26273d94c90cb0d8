"""Figure rendering for evaluation reports.

Figures are written next to the delimited outputs; the CSVs stay the source
of truth, the PNGs are for the README and quick inspection.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .track import TrackGeometry

_MODEL_STYLE = {
    "rf": dict(color="#1a7f37", marker="o", label="random forest"),
    "mlp": dict(color="#b3261e", marker="s", label="neural network"),
}


def eval_figures(report: dict, cov_series: dict, out_dir: Path) -> list[Path]:
    out = []
    out.append(_lap_fraction_figure(report, out_dir / "lap_fraction_vs_size.png"))
    if cov_series:
        out.append(_cov_figure(cov_series, out_dir / "cov_series.png"))
    return out


def _lap_fraction_figure(report: dict, path: Path) -> Path:
    agg = report["aggregates"]
    tracks = sorted({a["track"] for a in agg})
    fig, axes = plt.subplots(1, len(tracks), figsize=(5.2 * len(tracks), 3.8),
                             sharey=True, squeeze=False)
    for ax, track in zip(axes[0], tracks):
        for model, style in _MODEL_STYLE.items():
            pts = sorted((a for a in agg if a["track"] == track and a["model"] == model),
                         key=lambda a: a["size"])
            sizes = [a["size"] for a in pts]
            mean = [a["mean_lap_fraction"] for a in pts]
            lo = [a["min_lap_fraction"] for a in pts]
            hi = [a["max_lap_fraction"] for a in pts]
            ax.plot(sizes, mean, **style)
            ax.fill_between(sizes, lo, hi, color=style["color"], alpha=0.15, lw=0)
        ax.set_xscale("log")
        ax.set_ylim(-0.05, 1.05)
        ax.set_xlabel("training samples")
        ax.set_title(track)
        ax.grid(True, alpha=0.3)
    axes[0][0].set_ylabel("lap fraction")
    axes[0][0].legend(loc="lower right", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def _cov_figure(cov_series: dict, path: Path, cov_on: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    for track, series in sorted(cov_series.items()):
        ax.plot(series["t"], series["cov"], lw=0.7,
                label=f"{track} (n={series['size']}, seed {series['seed']})")
    if cov_on is not None:
        ax.axhline(cov_on, color="k", ls="--", lw=1, label=f"takeover threshold {cov_on:.2f}")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("prediction CoV")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def track_figure(track: TrackGeometry, path: Path,
                 log_xy: np.ndarray | None = None) -> Path:
    """Top-down plot of a track (and optionally a driven trajectory)."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for edge, style in ((track.left_edge, "-"), (track.right_edge, "-")):
        closed = np.vstack([edge, edge[:1]])
        ax.plot(closed[:, 0], closed[:, 1], "k" + style, lw=0.8)
    wps = np.vstack([track.waypoints, track.waypoints[:1]])
    ax.plot(wps[:, 0], wps[:, 1], color="0.6", ls=":", lw=0.6)
    if log_xy is not None:
        ax.plot(log_xy[:, 0], log_xy[:, 1], color="#1a7f37", lw=1.0)
    ax.set_aspect("equal")
    ax.set_title(track.name)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
