"""Matplotlib figures for evaluation reports, masks and the LR schedule."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402

from .guidance import LrSchedule, lr_at  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.titlesize": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "lines.linewidth": 1.5,
    "axes.spines.right": False,
    "axes.spines.top": False,
    "savefig.dpi": 120,
}


def save_fig(fig, path):
    """Write ``fig`` to ``path`` and close it; returns the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_lr_schedule(path, schedule: LrSchedule = LrSchedule(), n_points: int = 400):
    with plt.rc_context(STYLE):
        steps = np.linspace(0, schedule.decay_end * 1.1, n_points).astype(int)
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(steps, [lr_at(int(s), schedule) for s in steps])
        for mark in (schedule.warm_end, schedule.ramp_end, schedule.hold_end, schedule.decay_end):
            ax.axvline(mark, color="0.7", lw=0.8, ls=":")
        ax.set_xlabel("step")
        ax.set_ylabel("learning rate")
        ax.set_yscale("log")
        return save_fig(fig, path)


def plot_iou_bars(report, path):
    rows = report.per_instance
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(4, 0.35 * len(rows)), 3))
        x = np.arange(len(rows))
        colors = ["C0" if r["matched"] else "C3" for r in rows]
        ax.bar(x, [r["iou"] for r in rows], color=colors)
        ax.set_xticks(x, [f"f{r['frame']}:{r['label']}" for r in rows], rotation=90)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("IoU")
        ax.set_title(f"mean {report.mean_iou:.3f}  area-weighted {report.aw_iou:.3f}"
                     if rows else "no instances")
        return save_fig(fig, path)


def plot_frame_boxes(frame, gt_boxes, pred_boxes, path, title=""):
    """Overlay gt (solid) and predicted (dashed) boxes on one frame."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 4 * frame.shape[0] / frame.shape[1]))
        ax.imshow(frame, interpolation="nearest")
        for label, b in gt_boxes:
            ax.add_patch(Rectangle((b.x0 - 0.5, b.y0 - 0.5), b.x1 - b.x0, b.y1 - b.y0,
                                   fill=False, ec="lime", lw=1.5))
            ax.text(b.x0, b.y0, label, color="lime", fontsize=7, va="bottom")
        for _, b in pred_boxes:
            ax.add_patch(Rectangle((b.x0 - 0.5, b.y0 - 0.5), b.x1 - b.x0, b.y1 - b.y0,
                                   fill=False, ec="white", lw=1.0, ls="--"))
        ax.set_axis_off()
        ax.set_title(title)
        return save_fig(fig, path)


def plot_eval_figures(report, gt, pred, frames, outdir, max_frames: int = 4):
    outdir = Path(outdir)
    written = [plot_iou_bars(report, outdir / "iou_per_instance.png")]
    for frame in gt.annotated_frames()[:max_frames]:
        gt_boxes = [(t.label, t.boxes[frame]) for t in gt.instances if frame in t.boxes]
        pred_boxes = [(t.label, t.boxes[frame]) for t in pred.instances if frame in t.boxes]
        written.append(plot_frame_boxes(frames[frame], gt_boxes, pred_boxes,
                                        outdir / f"frame_{frame:04d}.png", f"frame {frame}"))
    return written


def plot_mask(mask, path):
    """One panel per key frame: which slot each visual token opens onto."""
    f = mask.f
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, f, figsize=(2.5 * f, 2.5), squeeze=False)
        for k, ax in enumerate(axes[0]):
            owner = np.full(mask.n_tok, -1.0)
            for slot in range(len(mask.slots[k])):
                for tok in mask.open_tokens(k, slot):
                    owner[tok] = slot  # later (smaller) slots drawn on top
            ax.imshow(owner.reshape(mask.height, mask.width), cmap="tab10",
                      vmin=-1, vmax=9, interpolation="nearest")
            ax.set_title(f"key frame {mask.key_frames[k]}")
            ax.set_xticks([])
            ax.set_yticks([])
        return save_fig(fig, path)
