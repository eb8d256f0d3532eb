"""Standalone SVG figures (headless matplotlib)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def posterior_histogram(samples: np.ndarray, path: str, ratio: float | None = None, bins: int = 64) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(samples, bins=bins, density=True, color="#4c72b0", alpha=0.85)
    ax.set_xlabel("z_1 (leading axis)")
    ax.set_ylabel("density")
    if ratio is not None:
        ax.set_title(f"valley/peak = {ratio:.3f}")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def bound_curve(metrics: list[dict], path: str) -> None:
    epoch = [int(r["epoch"]) for r in metrics]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(epoch, [float(r["train_bound"]) for r in metrics], label="train (annealed)")
    ax.plot(epoch, [float(r["eval_bound"]) for r in metrics], label="eval")
    ax.set_xlabel("epoch")
    ax.set_ylabel("bound per sequence")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
