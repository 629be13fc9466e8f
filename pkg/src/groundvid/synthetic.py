"""Moving-rectangle scenes whose groundings are exact by construction, plus frame I/O."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bench import PALETTE
from .errors import InputError, SpecError
from .grounding import BBox, InstanceTrack, VideoGrounding

FRAMES_MAGIC = b"GVF1"
_HEADER = struct.Struct("<4sIIII")  # magic, n_frames, height, width, channels


@dataclass(frozen=True)
class RectSpec:
    label: str
    prompt: str
    color: tuple
    bbox: tuple  # start box (x0, y0, x1, y1)
    velocity: tuple = (0, 0)


@dataclass(frozen=True)
class SyntheticSceneSpec:
    n_frames: int = 8
    width: int = 64
    height: int = 64
    rects: tuple = ()
    background_color: tuple = PALETTE["gray"]
    background_prompt: str = "a plain gray backdrop"
    caption: str = ""
    seed: int = 0
    random_rects: int = 0  # extra rectangles drawn from the seed

    def __post_init__(self):
        if min(self.n_frames, self.width, self.height) < 1:
            raise SpecError("n_frames, width and height must be positive")
        colors = {}
        for r in self.rects:
            if colors.setdefault(r.label, tuple(r.color)) != tuple(r.color):
                raise SpecError(f"label {r.label!r} uses two colours")

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSceneSpec":
        rects = tuple(RectSpec(r["label"], r["prompt"], tuple(r["color"]), tuple(r["bbox"]),
                               tuple(r.get("velocity", (0, 0)))) for r in doc.get("rects", []))
        kwargs = {k: doc[k] for k in ("n_frames", "width", "height", "background_prompt",
                                      "caption", "seed", "random_rects") if k in doc}
        if "background_color" in doc:
            kwargs["background_color"] = tuple(doc["background_color"])
        return cls(rects=rects, **kwargs)

    def to_dict(self) -> dict:
        return {
            "n_frames": self.n_frames, "width": self.width, "height": self.height,
            "background_color": list(self.background_color),
            "background_prompt": self.background_prompt, "caption": self.caption,
            "seed": self.seed, "random_rects": self.random_rects,
            "rects": [{"label": r.label, "prompt": r.prompt, "color": list(r.color),
                       "bbox": list(r.bbox), "velocity": list(r.velocity)} for r in self.rects],
        }


def load_scene_spec(path) -> SyntheticSceneSpec:
    return SyntheticSceneSpec.from_dict(json.loads(Path(path).read_text()))


def random_rects(spec: SyntheticSceneSpec):
    """Draw ``spec.random_rects`` rectangles, one palette colour per label."""
    rng = np.random.default_rng(spec.seed)
    names = [c for c in PALETTE if tuple(PALETTE[c]) != tuple(spec.background_color)]
    used = {r.label for r in spec.rects}
    names = [c for c in names if c not in used]
    if spec.random_rects > len(names):
        raise SpecError(f"only {len(names)} free palette colours for {spec.random_rects} rects")
    out = []
    for name in rng.permutation(names)[:spec.random_rects]:
        w = int(rng.integers(max(2, spec.width // 8), max(3, spec.width // 2)))
        h = int(rng.integers(max(2, spec.height // 8), max(3, spec.height // 2)))
        x0 = int(rng.integers(0, spec.width - w + 1))
        y0 = int(rng.integers(0, spec.height - h + 1))
        steps = max(spec.n_frames - 1, 1)
        # velocities that keep the whole rect inside the frame for every frame
        vx = int(rng.integers(max(-2, -(x0 // steps)), min(2, (spec.width - x0 - w) // steps) + 1))
        vy = int(rng.integers(max(-2, -(y0 // steps)), min(2, (spec.height - y0 - h) // steps) + 1))
        vel = (vx, vy)
        out.append(RectSpec(str(name), f"a {name} block", PALETTE[str(name)],
                            (x0, y0, x0 + w, y0 + h), vel))
    return out


def rect_at(r: RectSpec, frame: int, width: int, height: int) -> BBox:
    x0, y0, x1, y1 = r.bbox
    dx, dy = r.velocity[0] * frame, r.velocity[1] * frame
    cx0, cy0 = max(x0 + dx, 0), max(y0 + dy, 0)
    cx1, cy1 = min(x1 + dx, width), min(y1 + dy, height)
    if cx0 >= cx1 or cy0 >= cy1:
        raise SpecError(f"rect {r.label!r} leaves the frame at frame {frame}")
    return BBox(cx0, cy0, cx1, cy1)


def gen_synthetic(spec: SyntheticSceneSpec):
    """Rasterize the scene; returns ``(frames uint8 (n, H, W, 3), VideoGrounding)``."""
    rects = list(spec.rects) + random_rects(spec)
    frames = np.empty((spec.n_frames, spec.height, spec.width, 3), dtype=np.uint8)
    frames[:] = np.asarray(spec.background_color, dtype=np.uint8)
    boxes = [{} for _ in rects]
    for t in range(spec.n_frames):
        for k, r in enumerate(rects):  # later rects occlude earlier ones
            b = rect_at(r, t, spec.width, spec.height)
            frames[t, b.y0:b.y1, b.x0:b.x1] = np.asarray(r.color, dtype=np.uint8)
            boxes[k][t] = b
    tracks = tuple(InstanceTrack(k, r.label, r.prompt, boxes[k]) for k, r in enumerate(rects))
    caption = spec.caption or " and ".join(r.prompt for r in rects) or spec.background_prompt
    g = VideoGrounding(spec.width, spec.height, spec.n_frames, caption,
                       spec.background_prompt, tracks)
    return frames, g


def save_frames(frames: np.ndarray, path) -> None:
    frames = np.ascontiguousarray(frames, dtype=np.uint8)
    n, h, w, c = frames.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FRAMES_MAGIC, n, h, w, c))
        fh.write(frames.tobytes())


def load_frames(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InputError(f"{path}: truncated frames header")
    magic, n, h, w, c = _HEADER.unpack_from(raw)
    if magic != FRAMES_MAGIC:
        raise InputError(f"{path}: not a frames file (magic {magic!r})")
    payload = raw[_HEADER.size:]
    if len(payload) != n * h * w * c:
        raise InputError(f"{path}: payload holds {len(payload)} bytes, header says {n * h * w * c}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(n, h, w, c).copy()


def write_ppm(frame: np.ndarray, path) -> None:
    h, w, _ = frame.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(frame, dtype=np.uint8).tobytes())
