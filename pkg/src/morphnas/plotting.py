"""PNG figures for reports (headless matplotlib)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_pr_curve(result, path, label: str = "model") -> None:
    """Aggregated precision-recall curve with iso-F contours and the ODS point."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    r = np.linspace(0.01, 1, 200)
    for f in (0.2, 0.4, 0.6, 0.8):
        p = f * r / (2 * r - f)
        ok = (p > 0) & (p <= 1)
        ax.plot(r[ok], p[ok], color="0.85", lw=0.8)
    ax.plot(result.recall, result.precision, lw=1.6, label=f"{label} (ODS {result.ods:.3f})")
    best = int(np.argmax(result.f1))
    ax.plot(result.recall[best], result.precision[best], "o", ms=5)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_search_history(scores, iterations, path) -> None:
    """Per-candidate scores and the running best, coloured by iteration."""
    scores = np.asarray(scores, dtype=float)
    iterations = np.asarray(iterations)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    x = np.arange(len(scores))
    ax.scatter(x, scores, c=iterations, cmap="viridis", s=18, label="candidate")
    ax.step(x, np.maximum.accumulate(scores), where="post", color="C3", label="best so far")
    ax.set_xlabel("evaluation")
    ax.set_ylabel("validation score")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
