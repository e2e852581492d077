"""Matplotlib figures for training curves and evaluation reports."""

import io
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import HITS_AT  # noqa: E402
from .serialize import atomic_write  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    # fixed metadata keeps repeated renders byte-identical
    "svg.hashsalt": "transw",
}


def new_figure(**kw):
    with plt.rc_context(STYLE):
        return plt.subplots(**kw)


def save_figure(fig, path):
    buf = io.BytesIO()
    with plt.rc_context(STYLE):
        fig.savefig(buf, format=os.path.splitext(path)[1][1:] or "png", metadata={"Software": None})
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def training_curve(stats, title="Training loss"):
    fig, ax = new_figure()
    epochs = [e.epoch for e in stats.epochs]
    with plt.rc_context(STYLE):
        lines = ax.plot(epochs, [e.mean_loss for e in stats.epochs], label="train hinge loss", lw=1.2)
        valid = [e.valid_loss for e in stats.epochs]
        if any(v is not None for v in valid):
            lines += ax.plot(epochs, [np.nan if v is None else v for v in valid], label="validation hinge loss",
                             lw=1.2)
        ax2 = ax.twinx()
        ax2.spines["right"].set_visible(True)
        lines += ax2.plot(epochs, [e.active_fraction for e in stats.epochs], color="0.6", lw=0.8, ls="--",
                          label="active hinge fraction (right)")
        ax2.set_ylabel("active hinge fraction")
        ax2.set_ylim(0, 1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean loss")
        ax.set_title(title)
        ax.legend(lines, [ln.get_label() for ln in lines], loc="upper right")
    return fig


def link_prediction_figure(report, dataset):
    fig, ax = new_figure()
    x = np.arange(len(HITS_AT))
    w = 0.38
    for i, setting in enumerate(("raw", "filtered")):
        vals = [100 * report.hits[(n, setting)] for n in HITS_AT]
        ax.bar(x + (i - 0.5) * w, vals, w, label=setting)
    ax.set_xticks(x, [f"HITS@{n}" for n in HITS_AT])
    ax.set_ylabel("%")
    ax.set_ylim(0, 100)
    ax.set_title(f"Link prediction, {dataset}")
    ax.legend()
    return fig


def classification_figure(report, dataset, relation_names=None):
    fig, ax = new_figure()
    rels = sorted(report.per_relation)
    names = [relation_names[r] if relation_names else str(r) for r in rels]
    ax.barh(np.arange(len(rels)), [100 * report.per_relation[r][0] for r in rels], color="C0")
    ax.axvline(100 * report.accuracy, color="k", lw=0.8, ls="--")
    ax.set_yticks(np.arange(len(rels)), names)
    ax.set_xlim(0, 100)
    ax.set_xlabel("accuracy %")
    ax.set_title(f"Triple classification, {dataset} (overall {100 * report.accuracy:.1f}%, dashed)")
    return fig


def unknown_fact_figure(report, dataset):
    fig, ax = new_figure()
    folds = np.arange(1, len(report.folds) + 1)
    means = np.array([100 * f.mean for f in report.folds])
    lo = np.array([-100 * f.bias[0] for f in report.folds])
    hi = np.array([100 * f.bias[1] for f in report.folds])
    ax.errorbar(folds, means, yerr=np.vstack([lo, hi]), fmt="o", capsize=3)
    ax.axhline(100 * report.mean_accuracy, color="k", lw=0.8, ls="--",
               label=f"mean {100 * report.mean_accuracy:.1f}%")
    ax.axhline(50, color="0.6", lw=0.8, ls=":", label="chance")
    ax.set_xticks(folds)
    ax.set_xlabel("fold")
    ax.set_ylabel("accuracy %")
    ax.set_title(f"Unknown-relation detection, {dataset}")
    ax.legend()
    return fig
