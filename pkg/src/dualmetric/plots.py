"""Figures for training runs and experiment sweeps, written straight to files."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .trainer import LOSS_KEYS  # noqa: E402

_LABELS = {"L_s": "supervised CE", "L_pml": "proxy (labeled)", "L_pml_u": "proxy (pseudo)",
           "L_pmb": "bank (labeled)", "L_pmb_u": "bank (pseudo)"}


def _smooth(y: np.ndarray, w: int) -> np.ndarray:
    if len(y) < w or w <= 1:
        return y
    k = np.ones(w) / w
    return np.convolve(y, k, mode="valid")


def plot_training_curves(records: list[dict], path, window: int = 25) -> None:
    it = [r for r in records if r.get("record") == "iteration"]
    if not it:
        raise ValueError("no iteration records to plot")
    t = np.array([r["t"] for r in it])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.8))
    for key in LOSS_KEYS:
        y = _smooth(np.array([r[key] for r in it]), window)
        ax1.plot(t[len(t) - len(y):], y, label=_LABELS[key], lw=1.2)
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("loss (moving average)")
    ax1.legend(fontsize=7, frameon=False)
    ax2.plot(t, [r["lam"] for r in it], color="k", lw=1.2, label="loss weight")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("loss weight")
    ax2b = ax2.twinx()
    ax2b.plot(t, _pad(_smooth(np.array([r["n_accepted"] for r in it], float), window), len(t)),
              color="tab:orange", lw=1.0)
    ax2b.set_ylabel("accepted pseudo labels / batch", color="tab:orange")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _pad(y: np.ndarray, n: int) -> np.ndarray:
    return np.concatenate([np.full(n - len(y), np.nan), y])


def plot_ablation(summary: list[dict], path) -> None:
    fracs = sorted({r["labeled_fraction"] for r in summary})
    variants = list(dict.fromkeys(r["variant"] for r in summary))
    fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(fracs) * len(variants) / 2, 3.6))
    width = 0.8 / len(variants)
    for j, v in enumerate(variants):
        means, stds = [], []
        for f in fracs:
            row = next((r for r in summary if r["variant"] == v and r["labeled_fraction"] == f), None)
            means.append(row["mean_macro_accuracy"] if row else np.nan)
            stds.append(row["std_macro_accuracy"] if row else 0.0)
        xs = np.arange(len(fracs)) + (j - (len(variants) - 1) / 2) * width
        ax.bar(xs, means, width, yerr=stds, capsize=2, label=v)
    ax.set_xticks(np.arange(len(fracs)))
    ax.set_xticklabels([f"{int(round(100 * f))}%" for f in fracs])
    ax.set_xlabel("labeled fraction")
    ax.set_ylabel("macro nearest-proxy accuracy")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=7, frameon=False, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
