"""Instance grounding data model, key-frame/patch downscaling and mask building.

Pixel boxes are half-open: ``[x0, x1) x [y0, y1)``. Token lattices are indexed
row-major, ``index = row * W + col``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityError, InputError

BACKGROUND = -1  # slot-table id of the reserved background slot


@dataclass(frozen=True, order=True)
class BBox:
    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise InputError(f"empty box {self.as_list()}")
        if min(self.x0, self.y0) < 0:
            raise InputError(f"negative coordinate in box {self.as_list()}")

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def as_list(self):
        return [self.x0, self.y0, self.x1, self.y1]

    def shifted(self, dx: int, dy: int) -> "BBox":
        return BBox(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)


@dataclass(frozen=True)
class InstanceTrack:
    id: int
    label: str
    prompt: str
    boxes: dict  # frame index -> BBox

    def __post_init__(self):
        frames = list(self.boxes)
        if any(f < 0 for f in frames) or frames != sorted(set(frames)):
            raise InputError(f"instance {self.id}: frame indices must be >= 0 and increasing")
        if not self.prompt.strip():
            raise InputError(f"instance {self.id}: empty prompt")


@dataclass(frozen=True)
class VideoGrounding:
    width: int
    height: int
    n_frames: int
    caption: str
    background_prompt: str
    instances: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "instances", tuple(self.instances))
        ids = [t.id for t in self.instances]
        if len(ids) != len(set(ids)):
            raise InputError(f"duplicate instance ids in {ids}")
        for t in self.instances:
            for f, b in t.boxes.items():
                if f >= self.n_frames:
                    raise InputError(f"instance {t.id}: frame {f} beyond n_frames={self.n_frames}")
                if b.x1 > self.width or b.y1 > self.height:
                    raise InputError(
                        f"instance {t.id}: box {b.as_list()} outside {self.width}x{self.height}")

    def track(self, instance_id: int) -> InstanceTrack:
        for t in self.instances:
            if t.id == instance_id:
                return t
        raise KeyError(instance_id)

    def annotated_frames(self):
        return sorted({f for t in self.instances for f in t.boxes})

    def to_dict(self) -> dict:
        return {
            "video": {"width": self.width, "height": self.height, "n_frames": self.n_frames},
            "caption": self.caption,
            "background_prompt": self.background_prompt,
            "instances": [
                {
                    "id": t.id,
                    "label": t.label,
                    "prompt": t.prompt,
                    "track": [{"frame": f, "bbox": b.as_list()} for f, b in t.boxes.items()],
                }
                for t in self.instances
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "VideoGrounding":
        try:
            video = doc["video"]
            instances = []
            for inst in doc.get("instances", []):
                boxes = {int(e["frame"]): BBox(*map(int, e["bbox"])) for e in inst["track"]}
                instances.append(InstanceTrack(int(inst["id"]), str(inst["label"]),
                                               str(inst["prompt"]), boxes))
            return cls(int(video["width"]), int(video["height"]), int(video["n_frames"]),
                       str(doc["caption"]), str(doc["background_prompt"]), tuple(instances))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed grounding document: {exc!r}") from exc


def load_grounding(path) -> VideoGrounding:
    return VideoGrounding.from_dict(json.loads(Path(path).read_text()))


def save_grounding(g: VideoGrounding, path) -> None:
    Path(path).write_text(json.dumps(g.to_dict(), indent=2) + "\n")


@dataclass(frozen=True)
class DownscaleSpec:
    t_ds: int = 4
    s_ds: int = 8
    patch: int = 2

    def __post_init__(self):
        if min(self.t_ds, self.s_ds, self.patch) < 1:
            raise InputError("downscale factors must all be >= 1")

    @property
    def stride(self) -> int:
        return self.s_ds * self.patch

    def latent_dims(self, width: int, height: int):
        """Token lattice ``(H, W)`` for a ``width x height`` video."""
        s = self.stride
        if width % s or height % s:
            raise InputError(f"video {width}x{height} is not divisible by spatial stride {s}")
        return height // s, width // s


@dataclass(frozen=True)
class MaskConfig:
    n_ins: int = 8
    tokens_per_instance: int = 2
    mask_base: float = 0.0

    def __post_init__(self):
        if self.n_ins < 1 or self.tokens_per_instance < 1:
            raise InputError("n_ins and tokens_per_instance must be >= 1")
        if self.mask_base < 0:
            raise InputError("mask_base must be non-negative")
        if self.tokens_per_instance > self.n_ins:
            raise InputError("tokens_per_instance exceeds n_ins")

    @property
    def n_slots(self) -> int:
        return self.n_ins // self.tokens_per_instance

    @property
    def float_mode(self) -> bool:
        return self.mask_base > 0


@dataclass(frozen=True)
class AttentionMask:
    """Per-key-frame additive logits, shape ``(f, n_ins, H*W)``."""

    logits: np.ndarray
    height: int
    width: int
    key_frames: tuple
    slots: tuple  # per key frame: tuple of ids, slot 0 = BACKGROUND
    tokens_per_instance: int

    @property
    def f(self) -> int:
        return self.logits.shape[0]

    @property
    def n_ins(self) -> int:
        return self.logits.shape[1]

    @property
    def n_tok(self) -> int:
        return self.logits.shape[2]

    def slot_rows(self, slot: int) -> slice:
        tpi = self.tokens_per_instance
        return slice(slot * tpi, (slot + 1) * tpi)

    def open_tokens(self, frame: int, slot: int) -> set:
        rows = self.logits[frame, self.slot_rows(slot)]
        return set(np.flatnonzero(np.isfinite(rows[0])).tolist())


def select_key_frames(n_frames: int, t_ds: int):
    if n_frames < 1 or t_ds < 1:
        raise InputError("n_frames and t_ds must be >= 1")
    return list(range(0, n_frames, t_ds))


def rescale_bbox(b: BBox, spec: DownscaleSpec, width: int, height: int):
    """Map a pixel box onto the token lattice, conservatively (floor/ceil).

    Returns a half-open grid box ``(c0, r0, c1, r1)``; never empty.
    """
    grid_h, grid_w = spec.latent_dims(width, height)
    s = spec.stride
    c0 = min(max(b.x0 // s, 0), grid_w)
    r0 = min(max(b.y0 // s, 0), grid_h)
    c1 = min(max(-(-b.x1 // s), 0), grid_w)
    r1 = min(max(-(-b.y1 // s), 0), grid_h)
    if c1 <= c0:
        c0 = min(c0, grid_w - 1)
        c1 = c0 + 1
    if r1 <= r0:
        r0 = min(r0, grid_h - 1)
        r1 = r0 + 1
    return (c0, r0, c1, r1)


def bbox_to_token_indices(grid_box, height: int, width: int) -> set:
    c0, r0, c1, r1 = grid_box
    return {r * width + c for r in range(r0, r1) for c in range(c0, c1)}


def grid_area(grid_box) -> int:
    c0, r0, c1, r1 = grid_box
    return (c1 - c0) * (r1 - r0)


def build_mask(g: VideoGrounding, spec: DownscaleSpec, cfg: MaskConfig) -> AttentionMask:
    """Build the instance/visual-token attention mask for every key frame.

    Slot 0 holds the background, which is open exactly on tokens that no
    foreground box covers. Foreground instances fill slots 1..k sorted by
    grid-cell area, largest first (ties by id). In float mode the instance in
    slot ``j`` carries bias ``j * mask_base`` instead of 0.
    """
    grid_h, grid_w = spec.latent_dims(g.width, g.height)
    n_tok = grid_h * grid_w
    key_frames = select_key_frames(g.n_frames, spec.t_ds)
    tpi = cfg.tokens_per_instance
    logits = np.full((len(key_frames), cfg.n_ins, n_tok), -np.inf)
    slot_table = []
    for fi, frame in enumerate(key_frames):
        present = []
        for t in g.instances:
            if frame in t.boxes:
                gb = rescale_bbox(t.boxes[frame], spec, g.width, g.height)
                present.append((-grid_area(gb), t.id, gb))
        present.sort(key=lambda e: (e[0], e[1]))
        if (len(present) + 1) * tpi > cfg.n_ins:
            raise CapacityError(
                f"frame {frame}: {len(present)} instances + background need "
                f"{(len(present) + 1) * tpi} tokens, budget n_ins={cfg.n_ins}")
        covered = np.zeros(n_tok, dtype=bool)
        ids = [BACKGROUND]
        for j, (_, inst_id, gb) in enumerate(present, start=1):
            cols = np.fromiter(bbox_to_token_indices(gb, grid_h, grid_w), dtype=np.int64)
            bias = j * cfg.mask_base if cfg.float_mode else 0.0
            logits[fi, j * tpi:(j + 1) * tpi, cols] = bias
            covered[cols] = True
            ids.append(inst_id)
        logits[fi, 0:tpi, ~covered] = cfg.mask_base if cfg.float_mode else 0.0
        slot_table.append(tuple(ids))
    return AttentionMask(logits, grid_h, grid_w, tuple(key_frames), tuple(slot_table), tpi)


def crop_and_resize(frame: np.ndarray, b: BBox, size) -> np.ndarray:
    """Crop ``b`` out of an ``(H, W, C)`` frame and nearest-neighbour resize to ``size``."""
    crop = frame[b.y0:b.y1, b.x0:b.x1]
    out_h, out_w = size
    rows = (np.arange(out_h) * crop.shape[0]) // out_h
    cols = (np.arange(out_w) * crop.shape[1]) // out_w
    return crop[rows][:, cols]


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.clip(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)), -1.0, 1.0))


def clip_filter(g: VideoGrounding, frames, provider, threshold: float) -> VideoGrounding:
    """Drop (frame, box) annotations whose crop disagrees with the instance prompt."""
    kept = []
    for t in g.instances:
        text_vec = None
        boxes = {}
        for f, b in t.boxes.items():
            if f >= len(frames):
                raise InputError(f"instance {t.id}: no pixels for annotated frame {f}")
            if text_vec is None:
                text_vec = provider.embed_text(t.prompt)
            crop = crop_and_resize(np.asarray(frames[f]), b, provider.input_size)
            if cosine(provider.embed_image(crop), text_vec) >= threshold:
                boxes[f] = b
        if boxes:
            kept.append(InstanceTrack(t.id, t.label, t.prompt, boxes))
    return VideoGrounding(g.width, g.height, g.n_frames, g.caption,
                          g.background_prompt, tuple(kept))
