"""Report figures written next to the CSV/JSON outputs."""
from __future__ import annotations

import contextlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}


@contextlib.contextmanager
def report_style():
    with plt.rc_context(_STYLE):
        yield


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_pretrain_log(history: list[dict], path) -> None:
    epochs = [h["epoch"] for h in history]
    with report_style():
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(epochs, [h["train_ce"] for h in history], color="C0", label="train CE")
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy", color="C0")
        ax2 = ax.twinx()
        ax2.plot(epochs, [h["val_spider"] for h in history], color="C1", label="val SPIDEr")
        ax2.set_ylabel("SPIDEr (proxy)", color="C1")
        ax2.grid(False)
        if history:
            best = history[-1]["best_epoch"]
            ax.axvline(best, color="0.5", ls="--", lw=0.8)
        _save(fig, path)


def plot_loss_trace(rows: list[dict], path, checkpoints=()) -> None:
    steps = [r["update_index"] for r in rows]
    with report_style():
        fig, ax = plt.subplots(figsize=(5, 3))
        for key, label in (("l_tot", "total"), ("l_new", "new-data CE"), ("l_reg", "distillation KL")):
            ax.plot(steps, [r[key] for r in rows], label=label, lw=1)
        for c in checkpoints:
            ax.axvline(c, color="0.6", ls=":", lw=0.8)
        ax.set_xlabel("update")
        ax.set_ylabel("loss")
        ax.legend(frameon=False)
        _save(fig, path)


def plot_sweep(rows: list[dict], path) -> None:
    """SPIDEr on the original and new data against lambda, one line per batch size."""
    batch_sizes = sorted({r["batch_size"] for r in rows})
    with report_style():
        fig, axes = plt.subplots(1, 2, figsize=(7, 3), sharex=True)
        for col, title in ((0, "original data"), (1, "new data")):
            key = "spider_ori" if col == 0 else "spider_new"
            ax = axes[col]
            for B in batch_sizes:
                cells = sorted((r for r in rows if r["batch_size"] == B and r.get("status") == "ok"),
                               key=lambda r: r["lambda"])
                ax.plot([r["lambda"] for r in cells], [r[key] for r in cells], marker="o", ms=3, label=f"B={B}")
            ax.set_title(title)
            ax.set_xlabel("lambda")
        axes[0].set_ylabel("SPIDEr (proxy)")
        axes[1].legend(frameon=False)
        _save(fig, path)
