"""Report figures: optimizer convergence, CNN loss curve, confusion matrix.

Figures are drawn on bare :class:`~matplotlib.figure.Figure` objects with
the Agg canvas (no pyplot state) and saved without a software/date stamp,
so equal inputs give byte-identical PNGs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

BLUE_DARK = "#1565C0"
BLUE_LIGHT = "#90CAF9"
ACCENT_RED = "#C62828"

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
}

PNG_METADATA = {"Software": None}


def _figure(width=4.5, height=3.0):
    # callers hold rc_context(STYLE) open while drawing
    fig = Figure(figsize=(width, height), dpi=100)
    FigureCanvasAgg(fig)
    return fig, fig.add_subplot(111)


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=PNG_METADATA)
    return path


def plot_convergence(best, mean, path, mask_size=None):
    with mpl.rc_context(STYLE):
        fig, ax = _figure()
        it = np.arange(len(best))
        ax.plot(it, best, color=BLUE_DARK, label="best fitness")
        ax.plot(it, mean, color=BLUE_LIGHT, label="mean fitness")
        ax.set_xlabel("iteration")
        ax.set_ylabel("fitness")
        ax.set_title("Feature-selection convergence")
        if mask_size is not None and all(m is not None for m in mask_size):
            twin = ax.twinx()
            twin.plot(it, mask_size, color=ACCENT_RED, lw=0.8, ls="--", label="mask size")
            twin.set_ylabel("selected features")
            twin.legend(loc="center right")
        ax.legend(loc="lower right")
        return _save(fig, path)


def plot_loss_curve(losses, path):
    with mpl.rc_context(STYLE):
        fig, ax = _figure()
        ax.plot(np.arange(1, len(losses) + 1), losses, color=BLUE_DARK)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean cross-entropy")
        ax.set_title("CNN training loss")
        return _save(fig, path)


def plot_confusion(cm, class_names, path):
    cm = np.asarray(cm)
    with mpl.rc_context(STYLE):
        side = 1.2 + 0.5 * len(class_names)
        fig, ax = _figure(side + 1.0, side)
        im = ax.imshow(cm, cmap="Blues")
        ax.set_xticks(range(len(class_names)), class_names, rotation=45, ha="right")
        ax.set_yticks(range(len(class_names)), class_names)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        thresh = cm.max() / 2.0 if cm.size else 0
        for (i, j), v in np.ndenumerate(cm):
            ax.text(j, i, str(v), ha="center", va="center",
                    color="white" if v > thresh else "black")
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        ax.set_title("Test confusion matrix")
        return _save(fig, path)
