"""Render figures from metrics files (training curves, variance ratios).

Figures are written next to the delimited metrics output; matplotlib runs on
the Agg backend so the report path works headless.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import read_metrics


def plot_training_curves(metrics_paths, out_path: str, labels=None) -> str:
    """Training and evaluation loss curves for one or more runs."""
    labels = labels or [os.path.basename(p) for p in metrics_paths]
    fig, (ax_train, ax_eval) = plt.subplots(1, 2, figsize=(10, 4))
    for path, label in zip(metrics_paths, labels):
        records = read_metrics(path)
        train = [(r["step"], r["loss"]) for r in records if r["kind"] == "train"]
        evals = [(r["step"], r["eval_loss"]) for r in records
                 if r["kind"] == "eval" and "eval_loss" in r]
        if train:
            ax_train.plot(*zip(*train), label=label, linewidth=0.8)
        if evals:
            ax_eval.plot(*zip(*evals), label=label, marker="o", markersize=3)
    ax_train.set_xlabel("step")
    ax_train.set_ylabel("training loss")
    ax_eval.set_xlabel("step")
    ax_eval.set_ylabel("eval loss")
    for ax in (ax_train, ax_eval):
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_error_curves(metrics_paths, out_path: str, labels=None) -> str:
    labels = labels or [os.path.basename(p) for p in metrics_paths]
    fig, ax = plt.subplots(figsize=(6, 4))
    for path, label in zip(metrics_paths, labels):
        records = read_metrics(path)
        evals = [(r["step"], r["token_error_rate"]) for r in records
                 if r["kind"] == "eval"]
        if evals:
            ax.plot(*zip(*evals), label=label, marker="o", markersize=3)
    ax.set_xlabel("step")
    ax.set_ylabel("token error rate")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_variance_study(records, out_path: str) -> str:
    """Measured vs expected variance ratios, before and after rescaling."""
    rows = [r for r in records if "positions" in r]
    fig, ax = plt.subplots(figsize=(6, 4))
    xs = [r["positions"] for r in rows]
    ax.plot(xs, [r["synthetic_ratio_before"] for r in rows], "o-",
            label="measured, unnormalized")
    ax.plot(xs, [r["expected_before"] for r in rows], "--", color="gray",
            label="expected (linear)")
    ax.plot(xs, [r["synthetic_ratio_after"] for r in rows], "s-",
            label="measured, normalized")
    ax.plot(xs, [r["expected_after"] for r in rows], ":", color="gray",
            label="expected (1/count)")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log", base=2)
    ax.set_xlabel("summand count")
    ax.set_ylabel("variance ratio")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
