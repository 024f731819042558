"""Report figures written next to the TSV summaries."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def theta_curve(report, path):
    """Precision and selected fraction against log theta."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogx(report.candidates, report.precision, "o-", ms=3, label="precision")
    ax.semilogx(report.candidates, report.selected_fraction, "s-", ms=3, label="selected fraction")
    ax.axhline(report.target_precision, color="gray", ls="--", lw=1)
    if report.theta is not None:
        ax.axvline(report.theta, color="red", lw=1, label=f"theta = {report.theta:.3g}")
    ax.set_xlabel("theta")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="lower right")
    return _save(fig, path)


def class_iou_bars(per_class, path, labels=None):
    """Grouped bars; ``per_class`` maps a series name to an IoU vector."""
    names = list(per_class)
    n = max(len(v) for v in per_class.values())
    x = np.arange(n)
    width = 0.8 / max(len(names), 1)
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * n + 2), 4))
    for k, name in enumerate(names):
        v = np.asarray(per_class[name], dtype=float)
        ax.bar(x[: len(v)] + (k - (len(names) - 1) / 2) * width, v, width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(labels or [str(c) for c in range(n)])
    ax.set_xlabel("class")
    ax.set_ylabel("IoU")
    ax.set_ylim(0, 1.05)
    if len(names) > 1:
        ax.legend()
    return _save(fig, path)


def accuracy_pairs(ids, before, after, path):
    """Per-image pixel accuracy of the initial and corrected labels."""
    fig, ax = plt.subplots(figsize=(max(5, 0.35 * len(ids) + 2), 4))
    x = np.arange(len(ids))
    ax.vlines(x, before, after, color="lightgray")
    ax.plot(x, before, "o", label="initial")
    ax.plot(x, after, "o", label="corrected")
    ax.set_xticks(x)
    ax.set_xticklabels(ids, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel("pixel accuracy")
    ax.legend()
    return _save(fig, path)
