"""Instance-aware evaluation: box IoU, crop/prompt similarity, mean and area-weighted scores."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .errors import InputError, ProviderError
from .grounding import BBox, VideoGrounding, cosine, crop_and_resize

MEAN = "mean"
AREA_WEIGHTED = "area_weighted"
GENERAL_KEYS = ("fvd", "temporal", "clip_b", "clip_l", "videoscore")


class EmbeddingProvider(Protocol):
    name: str
    input_size: tuple

    def embed_text(self, text: str) -> np.ndarray: ...

    def embed_image(self, pixels: np.ndarray) -> np.ndarray: ...


PALETTE = {
    "red": (220, 40, 40),
    "green": (40, 180, 60),
    "blue": (40, 70, 220),
    "yellow": (235, 220, 40),
    "magenta": (210, 40, 200),
    "cyan": (40, 210, 220),
    "orange": (245, 140, 20),
    "purple": (120, 50, 170),
    "white": (250, 250, 250),
    "gray": (128, 128, 128),
    "black": (10, 10, 10),
    "brown": (120, 75, 30),
}


def _palette_vectors(n_colors: int, dim: int = 8, support: int = 4):
    # entries of +-1/sqrt(support) on `support` dims give exactly unit norm for support=4
    supports = list(itertools.combinations(range(dim), support))
    step = max(1, len(supports) // n_colors)
    vecs = []
    for k in range(n_colors):
        v = np.zeros(dim)
        v[list(supports[(k * step) % len(supports)])] = 1.0 / np.sqrt(support)
        vecs.append(v)
    return vecs


class ToyColorProvider:
    """Deterministic stand-in for an image-text embedding model.

    Text maps to the first palette colour word it contains; an image maps to
    the palette colour nearest its most frequent pixel value. Matching colour
    and prompt therefore score exactly 1.
    """

    def __init__(self, name: str = "toy", input_size=(16, 16), palette=PALETTE):
        self.name = name
        self.input_size = tuple(input_size)
        self.colors = list(palette)
        self.rgb = np.array([palette[c] for c in self.colors], dtype=np.float64)
        self.vectors = dict(zip(self.colors + ["<none>"],
                                _palette_vectors(len(self.colors) + 1)))

    def embed_text(self, text: str) -> np.ndarray:
        for word in text.lower().replace(",", " ").split():
            if word in self.vectors:
                return self.vectors[word]
        return self.vectors["<none>"]

    def embed_image(self, pixels: np.ndarray) -> np.ndarray:
        flat = np.asarray(pixels).reshape(-1, pixels.shape[-1])
        values, counts = np.unique(flat, axis=0, return_counts=True)
        mode = values[np.argmax(counts)].astype(np.float64)
        nearest = int(np.argmin(((self.rgb - mode) ** 2).sum(axis=1)))
        return self.vectors[self.colors[nearest]]


@dataclass(frozen=True)
class InstanceObservation:
    label: str
    prompt: str
    frame: int
    bbox: BBox
    id: int = -1

    @property
    def area(self) -> int:
        return self.bbox.area


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    inter = max(iw, 0) * max(ih, 0)
    return inter / (a.area + b.area - inter)


def match_instances(gt, pred):
    """Greedy same-label matching by descending IoU.

    Returns ``{gt_index: (pred_index, iou)}`` for matched ground truth; gt
    indices missing from the dict are unmatched (absent).
    """
    candidates = []
    for gi, g in enumerate(gt):
        for pi, p in enumerate(pred):
            if g.label == p.label:
                candidates.append((-iou(g.bbox, p.bbox), gi, pi))
    candidates.sort()
    used_gt, used_pred, matches = set(), set(), {}
    for neg_iou, gi, pi in candidates:
        if gi in used_gt or pi in used_pred:
            continue
        used_gt.add(gi)
        used_pred.add(pi)
        matches[gi] = (pi, -neg_iou)
    return matches


def instance_sim(frame_pixels, gt: InstanceObservation, provider, present: bool = True) -> float:
    """Cosine between the gt-box crop of a generated frame and the instance prompt.

    Absent instances score 0 without calling the provider; provider failures
    raise :class:`ProviderError`.
    """
    if not present:
        return 0.0
    crop = crop_and_resize(np.asarray(frame_pixels), gt.bbox, provider.input_size)
    try:
        img = provider.embed_image(crop)
        txt = provider.embed_text(gt.prompt)
    except Exception as exc:
        raise ProviderError(f"provider {getattr(provider, 'name', provider)!r} failed: {exc}") from exc
    return cosine(img, txt)


def aggregate(values, areas, mode: str = MEAN):
    """Mean or area-weighted mean; ``None`` marks an undefined (empty) aggregate."""
    values = list(values)
    areas = list(areas)
    if len(values) != len(areas):
        raise InputError("values and areas differ in length")
    if not values:
        return None
    if mode == AREA_WEIGHTED:
        if any(a <= 0 for a in areas):
            raise InputError("area-weighted aggregation needs positive areas")
        if len(set(areas)) > 1:
            return float(sum(a * v for a, v in zip(areas, values)) / sum(areas))
        mode = MEAN  # equal weights: take the plain mean so both modes agree bit for bit
    if mode == MEAN:
        return float(sum(values) / len(values))
    raise InputError(f"unknown aggregation mode {mode!r}")


def aggregates_from_rows(rows, provider_names) -> dict:
    out = {}
    for mode in (MEAN, AREA_WEIGHTED):
        sims = {}
        for name in provider_names:
            ok = [r for r in rows if r["sim_errors"].get(name) is None]
            sims[name] = aggregate([max(0.0, r["sim"][name]) for r in ok],
                                   [r["area"] for r in ok], mode)
        out[mode] = {
            "iou": aggregate([r["iou"] for r in rows], [r["area"] for r in rows], mode),
            "sim": sims,
        }
    return out


@dataclass
class EvalReport:
    per_instance: list
    providers: list
    aggregates: dict = field(default_factory=dict)
    video_id: str = ""

    def __post_init__(self):
        if not self.aggregates:
            self.aggregates = aggregates_from_rows(self.per_instance, self.providers)

    @property
    def mean_iou(self):
        return self.aggregates[MEAN]["iou"]

    @property
    def aw_iou(self):
        return self.aggregates[AREA_WEIGHTED]["iou"]

    def mean_sim(self, provider):
        return self.aggregates[MEAN]["sim"][provider]

    def aw_sim(self, provider):
        return self.aggregates[AREA_WEIGHTED]["sim"][provider]

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "general": {k: None for k in GENERAL_KEYS},
            "instance": self.aggregates,
            "per_instance": self.per_instance,
        }

    @classmethod
    def from_dict(cls, doc) -> "EvalReport":
        providers = list(doc["instance"][MEAN]["sim"])
        return cls(doc["per_instance"], providers, doc["instance"], doc.get("video_id", ""))


def save_report(report: EvalReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n")


def observations(g: VideoGrounding, frame: int):
    return [InstanceObservation(t.label, t.prompt, frame, t.boxes[frame], t.id)
            for t in g.instances if frame in t.boxes]


def evaluate_video(gt_grounding: VideoGrounding, pred_grounding: VideoGrounding, frames,
                   providers, video_id: str = "") -> EvalReport:
    """Score a generated video against ground truth at every gt-annotated frame."""
    if (gt_grounding.width, gt_grounding.height) != (pred_grounding.width, pred_grounding.height):
        raise InputError("ground truth and prediction describe different video sizes")
    frames = np.asarray(frames)
    if frames.shape[1:3] != (gt_grounding.height, gt_grounding.width):
        raise InputError(f"frames {frames.shape} do not match "
                         f"{gt_grounding.width}x{gt_grounding.height}")
    names = [p.name for p in providers]
    rows = []
    for frame in gt_grounding.annotated_frames():
        if frame >= len(frames):
            raise InputError(f"no generated pixels for annotated frame {frame}")
        gt = observations(gt_grounding, frame)
        pred = observations(pred_grounding, frame)
        matches = match_instances(gt, pred)
        for gi, obs in enumerate(gt):
            match = matches.get(gi)
            row = {
                "frame": frame,
                "gt_id": obs.id,
                "label": obs.label,
                "area": obs.area,
                "matched": match is not None,
                "pred_id": pred[match[0]].id if match else None,
                "iou": match[1] if match else 0.0,
                "sim": {},
                "sim_errors": {},
            }
            for provider in providers:
                try:
                    row["sim"][provider.name] = instance_sim(frames[frame], obs, provider,
                                                             present=match is not None)
                    row["sim_errors"][provider.name] = None
                except ProviderError as exc:
                    row["sim"][provider.name] = None
                    row["sim_errors"][provider.name] = str(exc)
            rows.append(row)
    return EvalReport(rows, names, video_id=video_id)
