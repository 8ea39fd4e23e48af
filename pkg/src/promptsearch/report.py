"""Figure rendering for run artifacts.

Figures land next to the delimited files they visualize: loss_trace.png
beside loss_trace.csv, matrix.png beside matrix.csv.  Rendering is
offscreen (Agg) and best-effort; callers treat failures as warnings.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def render_loss_trace(csv_path: str | Path, png_path: str | Path) -> Path:
    """Plot best-so-far and per-step batch loss from loss_trace.csv."""
    steps: list[int] = []
    best: list[float] = []
    current: list[float] = []
    with Path(csv_path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            best.append(float(row["best_running_mean"]))
            current.append(float(row["current_batch_loss"]))
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(steps, current, color="#c0c0c0", linewidth=0.9, label="batch loss")
    ax.plot(steps, best, color="#d62728", linewidth=1.6, label="best running mean")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", frameon=False)
    fig.tight_layout()
    png_path = Path(png_path)
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return png_path


def _short(text: str, limit: int = 28) -> str:
    return text if len(text) <= limit else text[: limit - 1] + "…"


def render_matrix(matrix, png_path: str | Path) -> Path:
    """Heat map of the prompt-selection matrix (column-softmax values)."""
    data = matrix.normalized
    fig, ax = plt.subplots(
        figsize=(1.0 + 0.9 * len(matrix.dataset_names), 1.0 + 0.5 * len(matrix.prompts))
    )
    image = ax.imshow(data, cmap="viridis", vmin=0.0, vmax=1.0, aspect="auto")
    ax.set_xticks(range(len(matrix.dataset_names)))
    ax.set_xticklabels(matrix.dataset_names, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(matrix.prompts)))
    ax.set_yticklabels([_short(p) for p in matrix.prompts], fontsize=8)
    ax.set_xlabel("dataset")
    ax.set_ylabel("prompt")
    fig.colorbar(image, ax=ax, shrink=0.85)
    fig.tight_layout()
    png_path = Path(png_path)
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return png_path
