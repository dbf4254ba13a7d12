"""Matplotlib figures written next to the tab-separated reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .geometry import CLASS_NAMES, AnchorConfig, generate_anchors  # noqa: E402
from .metrics import MetricsReport  # noqa: E402
from .overlay import CLASS_COLORS  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
METRICS = ("dsc", "iou", "precision", "recall")


def _save(fig, path):
    # PNG only; dropping the Software stamp keeps reruns byte-identical
    fig.savefig(path, format="png", dpi=150, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)


def plot_metrics(report: MetricsReport, path, class_names=CLASS_NAMES):
    """Grouped bars of DSC / IoU / precision / recall per class."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        classes = sorted(report.per_class)
        x = np.arange(len(METRICS))
        width = 0.8 / max(1, len(classes))
        for k, c in enumerate(classes):
            m = report.per_class[c]
            color = np.asarray(CLASS_COLORS.get(c, (128, 128, 128))) / 255.0
            ax.bar(x + (k - (len(classes) - 1) / 2) * width, [getattr(m, f) for f in METRICS], width,
                   color=color, edgecolor="k", linewidth=0.5, label=class_names[c])
        ax.axhline(report.macro_dsc, color="0.4", ls="--", lw=0.8, label=f"macro DSC {report.macro_dsc:.3f}")
        ax.set_xticks(x, [f.upper() if f in ("dsc", "iou") else f.capitalize() for f in METRICS])
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("score")
        ax.legend(frameon=False, loc="lower right")
        _save(fig, path)


def plot_anchors(cfg: AnchorConfig, path):
    """Anchor shapes at the image center for each pyramid level."""
    levels = generate_anchors(cfg)
    h, w = cfg.input_size
    a = cfg.num_anchors_per_cell
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 4.0))
        cmap = plt.get_cmap("viridis", len(levels))
        for li, (stride, anchors) in enumerate(zip(cfg.level_strides, levels)):
            gh, gw = cfg.grid_shapes()[li]
            cell = (gh // 2) * gw + gw // 2
            for b in anchors[cell * a:(cell + 1) * a]:
                ax.add_patch(plt.Rectangle((b[0], b[1]), b[2] - b[0], b[3] - b[1], fill=False,
                                           ec=cmap(li), lw=0.8))
            ax.plot([], [], color=cmap(li), label=f"P{li + 2} stride {stride}")
        ax.set_xlim(0, w)
        ax.set_ylim(h, 0)
        ax.set_aspect("equal")
        ax.legend(frameon=False, loc="upper right")
        _save(fig, path)
