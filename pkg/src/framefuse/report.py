"""Report serialization: JSON summary, CSV metrics, and figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

# Per-task wall-clock timings stay in the JSON report; the CSV holds only
# values that are bit-reproducible across reruns.
CSV_FIELDS = (
    "frame_index",
    "timestamp",
    "t",
    "ssim",
    "mse",
    "psnr",
    "hole_pixels",
)


def write_json_report(report: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")


def write_metrics_csv(rows: list[dict], path: str | Path) -> None:
    """One CSV row per synthesized frame, stable field order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in CSV_FIELDS})


def figure_label_histogram(
    hist_init: np.ndarray, hist_final: np.ndarray, path: str | Path
) -> None:
    """Bar chart of label usage before and after optimization."""
    names = ["hole", "S", "Rp", "Rn", "Rp+Rn", "S+Rn", "S+Rp", "S+Rp+Rn"]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(x - 0.2, hist_init, width=0.4, label="initial", color="#888888")
    ax.bar(x + 0.2, hist_final, width=0.4, label="optimized", color="#2d6cb5")
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylabel("pixels")
    ax.set_title("Sample selection labels")
    ax.legend()
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)


def figure_metrics(rows: list[dict], path: str | Path) -> None:
    """Per-frame SSIM and PSNR curves."""
    rows = [r for r in rows if r.get("ssim") is not None]
    if not rows:
        return
    idx = [r["frame_index"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(idx, [r["ssim"] for r in rows], marker="o", color="#2d6cb5")
    ax1.set_xlabel("frame")
    ax1.set_ylabel("SSIM")
    ax1.set_ylim(0, 1.02)
    psnr = [min(r["psnr"], 60.0) for r in rows]
    ax2.plot(idx, psnr, marker="o", color="#b5412d")
    ax2.set_xlabel("frame")
    ax2.set_ylabel("PSNR (dB, capped at 60)")
    fig.suptitle("Synthesis quality per frame")
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)


def figure_trajectory(tracks: dict[str, np.ndarray], path: str | Path) -> None:
    """Overlay of tracked point trajectories."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for name, pts in tracks.items():
        pts = np.asarray(pts)
        ax.plot(pts[:, 0], pts[:, 1], marker=".", label=name)
    ax.invert_yaxis()
    ax.set_xlabel("x (px)")
    ax.set_ylabel("y (px)")
    ax.set_title("Tracked trajectories")
    ax.legend()
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)


def figure_ablation(means: dict[str, float], path: str | Path) -> None:
    """Mean SSIM per pipeline variant."""
    names = list(means)
    values = [means[n] for n in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(names, values, color="#2d6cb5")
    ax.set_ylabel("mean SSIM")
    ax.set_ylim(0, 1.05)
    ax.set_title("Pipeline variants")
    for bar, val in zip(bars, values):
        ax.text(
            bar.get_x() + bar.get_width() / 2,
            val + 0.01,
            f"{val:.3f}",
            ha="center",
            fontsize=9,
        )
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110)
    plt.close(fig)
