"""Optional figures rendered from prediction and evaluation results.

Uses ``matplotlib.figure.Figure`` directly so no GUI backend or global
pyplot state is involved.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.figure import Figure

from . import CLASS_LABELS


def posterior_boxplot(estimate, path, title: str = "") -> Path:
    """Box plot of the posterior samples per class, whiskers at 1.5 IQR."""
    fig = Figure(figsize=(5.0, 3.6))
    ax = fig.add_subplot()
    ax.boxplot([estimate.samples[:, k] for k in range(len(CLASS_LABELS))], whis=1.5)
    ax.set_xticks(range(1, len(CLASS_LABELS) + 1), [f"Class {c}" for c in CLASS_LABELS])
    ax.set_ylim(-0.02, 1.02)
    ax.set_ylabel("posterior probability")
    ax.set_title(title or f"predicted class {int(estimate.predicted)} (n = {estimate.iterations})")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return Path(path)


def quartile_trace(estimate, path, class_label=None) -> Path:
    """Running Q1/Q2/Q3 of one class against the number of samples used."""
    k = int(estimate.predicted if class_label is None else class_label) - 1
    x = estimate.samples[:, k]
    n = np.arange(1, x.size + 1)
    q = np.array([np.percentile(x[:i], [25.0, 50.0, 75.0]) for i in n])
    fig = Figure(figsize=(5.0, 3.4))
    ax = fig.add_subplot()
    for j, name in enumerate(("Q1", "Q2", "Q3")):
        ax.plot(n, q[:, j], label=name)
    ax.set_xlabel("iterations")
    ax.set_ylabel(f"Class {k + 1} probability")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return Path(path)


def confusion_heatmap(matrix, path, title: str = "") -> Path:
    """Row-percent heat map annotated with counts."""
    pct = matrix.row_percent
    fig = Figure(figsize=(4.6, 4.0))
    ax = fig.add_subplot()
    im = ax.imshow(pct, vmin=0.0, vmax=100.0, cmap="Blues")
    labels = [str(c) for c in CLASS_LABELS]
    ax.set_xticks(range(len(labels)), labels)
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("predicted class")
    ax.set_ylabel("actual class")
    for i in range(len(labels)):
        for j in range(len(labels)):
            colour = "white" if pct[i, j] > 60 else "black"
            ax.text(j, i, f"{pct[i, j]:.0f}%\n({matrix.counts[i, j]})", ha="center",
                    va="center", fontsize=8, color=colour)
    fig.colorbar(im, ax=ax, label="% of actual class")
    ax.set_title(title or f"accuracy {100 * matrix.accuracy:.1f}%")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    return Path(path)
