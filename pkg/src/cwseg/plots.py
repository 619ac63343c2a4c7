"""Figure rendering for benchmark tables and transfer similarity history.

Figures are written next to the delimited reports so a run leaves both a
machine-readable table and something a human can glance at.  matplotlib is
imported lazily with the Agg backend; nothing here needs a display.
"""

from __future__ import annotations

import os


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def bench_figure(rows, path):
    """Two panels over worker count: mean epoch seconds and final F."""
    plt = _plt()
    fig, (ax_t, ax_f) = plt.subplots(1, 2, figsize=(9, 3.5))
    modes = []
    for r in rows:
        if r.mode not in modes:
            modes.append(r.mode)
    for mode in modes:
        points = [(r.workers, r.epoch_seconds, 100.0 * r.final_f) for r in rows if r.mode == mode]
        xs = [p[0] for p in points]
        ax_t.plot(xs, [p[1] for p in points], marker="o", label=mode)
        ax_f.plot(xs, [p[2] for p in points], marker="o", label=mode)
    ax_t.set_xlabel("threads")
    ax_t.set_ylabel("seconds per epoch")
    ax_t.set_title("training time")
    ax_f.set_xlabel("threads")
    ax_f.set_ylabel("final F (%)")
    ax_f.set_title("segmentation quality")
    for ax in (ax_t, ax_f):
        ax.grid(True, alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def similarity_figure(history, path):
    """Error/update rate and weight spread across transfer epochs."""
    plt = _plt()
    fig, (ax_e, ax_w) = plt.subplots(1, 2, figsize=(9, 3.5))
    epochs = [r.epoch for r in history]
    ax_e.plot(epochs, [r.error_rate for r in history], marker="o", label="error rate")
    ax_e.plot(epochs, [r.update_rate for r in history], marker="s", label="update rate")
    ax_e.set_xlabel("epoch")
    ax_e.set_title("high-resource fit")
    ax_w.plot(epochs, [r.w_min for r in history], label="min weight")
    ax_w.plot(epochs, [r.w_mean for r in history], label="mean weight")
    ax_w.plot(epochs, [r.w_max for r in history], label="max weight")
    ax_w.set_xlabel("epoch")
    ax_w.set_title("similarity weights")
    for ax in (ax_e, ax_w):
        ax.grid(True, alpha=0.3)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
