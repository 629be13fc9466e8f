"""Run configuration loading and cross-field validation."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .encoder import EmbedderConfig
from .errors import ConfigError, GroundVidError
from .grounding import DownscaleSpec, MaskConfig, VideoGrounding
from .guidance import GuidanceConfig
from .model import ShapeConfig

SHAPE_DEFAULTS = {"d": 16, "n_heads": 2, "n_blocks": 2, "n_ctx": 8}


@dataclass(frozen=True)
class RunConfig:
    shapes: dict = field(default_factory=lambda: dict(SHAPE_DEFAULTS))
    downscale: DownscaleSpec = DownscaleSpec()
    mask: MaskConfig = MaskConfig()
    guidance: GuidanceConfig = GuidanceConfig()
    embedder: EmbedderConfig = EmbedderConfig()
    seed: int = 0
    timestep: float = 500.0
    init_scale: float = 0.02
    m_v: float | None = None
    m_t: float | None = None
    paths: dict = field(default_factory=dict)

    def shape_config(self, g: VideoGrounding) -> ShapeConfig:
        """Resolve the model shapes for ``g``, checking any explicitly given dims."""
        try:
            grid_h, grid_w = self.downscale.latent_dims(g.width, g.height)
        except GroundVidError as exc:
            raise ConfigError("downscale", str(exc)) from exc
        derived = {
            "f": len(range(0, g.n_frames, self.downscale.t_ds)),
            "h": grid_h, "w": grid_w,
            "d_text": self.embedder.d_text,
            "n_ins": self.mask.n_ins,
        }
        for key, value in derived.items():
            if key in self.shapes and self.shapes[key] != value:
                raise ConfigError(f"shapes.{key}",
                                  f"is {self.shapes[key]} but grounding/config imply {value}")
        merged = {**SHAPE_DEFAULTS, **self.shapes, **derived}
        try:
            return ShapeConfig(**merged)
        except GroundVidError as exc:
            raise ConfigError("shapes", str(exc)) from exc


_SECTIONS = {
    "downscale": DownscaleSpec,
    "mask": MaskConfig,
    "guidance": GuidanceConfig,
    "embedder": EmbedderConfig,
}
_SCALARS = {"seed": int, "timestep": float, "init_scale": float, "m_v": float, "m_t": float}


def config_from_dict(doc: dict) -> RunConfig:
    known = set(_SECTIONS) | set(_SCALARS) | {"shapes", "paths"}
    for key in doc:
        if key not in known:
            raise ConfigError(key, "unknown configuration key")
    kwargs = {}
    for name, cls in _SECTIONS.items():
        section = doc.get(name, {})
        allowed = {f.name for f in fields(cls)}
        for key in section:
            if key not in allowed:
                raise ConfigError(f"{name}.{key}", "unknown configuration key")
        try:
            kwargs[name] = cls(**section)
        except (GroundVidError, TypeError) as exc:
            raise ConfigError(name, str(exc)) from exc
    shapes = dict(SHAPE_DEFAULTS)
    shape_keys = {f.name for f in fields(ShapeConfig)}
    for key, value in doc.get("shapes", {}).items():
        if key not in shape_keys:
            raise ConfigError(f"shapes.{key}", "unknown configuration key")
        if not isinstance(value, int) or value < 1:
            raise ConfigError(f"shapes.{key}", f"must be a positive integer, got {value!r}")
        shapes[key] = value
    kwargs["shapes"] = shapes
    for key, cast in _SCALARS.items():
        if key in doc and doc[key] is not None:
            try:
                kwargs[key] = cast(doc[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, f"cannot parse {doc[key]!r}") from exc
    kwargs["paths"] = dict(doc.get("paths", {}))
    cfg = RunConfig(**kwargs)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.shapes.get("d_text", cfg.embedder.d_text) != cfg.embedder.d_text:
        raise ConfigError("shapes.d_text", "must equal embedder.d_text")
    if cfg.shapes.get("n_ins", cfg.mask.n_ins) != cfg.mask.n_ins:
        raise ConfigError("shapes.n_ins", "must equal mask.n_ins")
    if cfg.embedder.d_text > cfg.shapes["d"]:
        raise ConfigError("embedder.d_text", "must not exceed shapes.d")
    if cfg.shapes["d"] % cfg.shapes["n_heads"]:
        raise ConfigError("shapes.n_heads", "must divide shapes.d")
    if cfg.embedder.n_extra_ids < cfg.mask.n_slots:
        raise ConfigError("embedder.n_extra_ids",
                          f"pool of {cfg.embedder.n_extra_ids} cannot cover {cfg.mask.n_slots} slots")
    if cfg.init_scale <= 0:
        raise ConfigError("init_scale", "must be positive")


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config", "top level must be an object")
    return config_from_dict(doc)
