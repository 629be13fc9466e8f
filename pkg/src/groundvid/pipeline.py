"""Glue that turns a grounding plus configs into a model-ready forward state."""
from __future__ import annotations

import numpy as np

from .encoder import (CONDITIONAL, UNCONDITIONAL, EmbedderConfig, assemble_instance_tokens,
                      encode_prompt, stack_tokens)
from .grounding import DownscaleSpec, MaskConfig, VideoGrounding, build_mask
from .model import ForwardState, ShapeConfig
from .numerics import timestep_embedding


def shapes_for(g: VideoGrounding, spec: DownscaleSpec, mask_cfg: MaskConfig,
               embedder: EmbedderConfig, d: int = 16, n_heads: int = 2,
               n_blocks: int = 2, n_ctx: int = 8) -> ShapeConfig:
    grid_h, grid_w = spec.latent_dims(g.width, g.height)
    f = len(range(0, g.n_frames, spec.t_ds))
    return ShapeConfig(f=f, h=grid_h, w=grid_w, d=d, d_text=embedder.d_text,
                       n_ins=mask_cfg.n_ins, n_ctx=n_ctx, n_heads=n_heads, n_blocks=n_blocks)


def build_state(g: VideoGrounding, spec: DownscaleSpec, mask_cfg: MaskConfig,
                embedder: EmbedderConfig, shapes: ShapeConfig, rng: np.random.Generator,
                timestep: float = 500.0, v=None):
    """Return ``(state, mask)`` for a grounding; ``v`` defaults to seeded Gaussian noise."""
    mask = build_mask(g, spec, mask_cfg)
    cond = stack_tokens(assemble_instance_tokens(g, mask, mask_cfg, embedder, CONDITIONAL))
    uncond = stack_tokens(assemble_instance_tokens(g, mask, mask_cfg, embedder, UNCONDITIONAL))
    caption = encode_prompt(g.caption, shapes.n_ctx, embedder).tokens
    if v is None:
        v = rng.standard_normal((mask.f, mask.n_tok, shapes.d))
    state = ForwardState(v=v, i_tokens=cond, t_tokens=caption, mask=mask.logits,
                         t_emb=timestep_embedding(timestep, shapes.d), timestep=timestep,
                         h=mask.height, w=mask.width, uncond_i_tokens=uncond)
    return state, mask
