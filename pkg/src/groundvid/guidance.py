"""Spatially-aware unconditional guidance, prompt dropout and the staged LR schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .model import ForwardState, ModelWeights, forward_stack

SAUG = "saug"
ZERO = "zero"
DEFAULT_SCALE = 5.0
DEFAULT_DROPOUT = 0.2


@dataclass(frozen=True)
class GuidanceConfig:
    w: float = DEFAULT_SCALE
    uncond_mode: str = SAUG
    dropout_p: float = DEFAULT_DROPOUT

    def __post_init__(self):
        if self.w < 0:
            raise InputError("guidance.w must be >= 0")
        if self.uncond_mode not in (SAUG, ZERO):
            raise InputError(f"guidance.uncond_mode must be 'saug' or 'zero', got {self.uncond_mode!r}")
        if not 0.0 <= self.dropout_p <= 1.0:
            raise InputError("guidance.dropout_p must lie in [0, 1]")


def saug_combine(eps_cond, eps_uncond, w: float):
    """``(1 + w) * eps_cond - w * eps_uncond``.

    Evaluated as ``eps_cond + w * (eps_cond - eps_uncond)`` so that ``w = 0``
    and ``eps_cond == eps_uncond`` both return ``eps_cond`` bit-exactly.
    """
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    if eps_cond.shape != eps_uncond.shape:
        raise DimensionError(f"shape mismatch {eps_cond.shape} vs {eps_uncond.shape}")
    return eps_cond + w * (eps_cond - eps_uncond)


def unconditional_state(state: ForwardState, mode: str = SAUG) -> ForwardState:
    """Sibling state with instance prompts emptied; the mask is kept in both modes."""
    if mode == ZERO:
        return state.with_instance_tokens(np.zeros_like(state.i_tokens))
    if mode == SAUG:
        if state.uncond_i_tokens is None:
            raise InputError("state carries no extra_id tokens for the saug unconditional pass")
        return state.with_instance_tokens(state.uncond_i_tokens)
    raise InputError(f"unknown unconditional mode {mode!r}")


def run_guided_step(state: ForwardState, weights: ModelWeights, cfg: GuidanceConfig):
    eps_cond = forward_stack(state, weights)
    if cfg.w == 0:
        return saug_combine(eps_cond, eps_cond, 0.0)
    eps_uncond = forward_stack(unconditional_state(state, cfg.uncond_mode), weights)
    return saug_combine(eps_cond, eps_uncond, cfg.w)


def apply_prompt_dropout(state: ForwardState, rng: np.random.Generator, p: float,
                         mode: str = SAUG):
    """With probability ``p`` swap in unconditional instance tokens.

    Returns ``(state, dropped)``. The decision consumes exactly one draw from
    ``rng`` and never looks at the state's contents.
    """
    if not 0.0 <= p <= 1.0:
        raise InputError("dropout probability must lie in [0, 1]")
    dropped = bool(rng.random() < p)
    if dropped:
        return unconditional_state(state, mode), True
    return state, False


@dataclass(frozen=True)
class LrSchedule:
    warm_end: int = 1000
    ramp_end: int = 3000
    hold_end: int = 8000
    decay_end: int = 10000
    lr_lo: float = 1e-5
    lr_hi: float = 5e-4

    def __post_init__(self):
        if not 0 < self.warm_end < self.ramp_end < self.hold_end < self.decay_end:
            raise InputError("schedule marks must be strictly increasing")
        if self.lr_lo <= 0 or self.lr_hi <= 0:
            raise InputError("learning rates must be positive")

    def stages(self):
        """``(start, end, lr_at_start, lr_at_end)`` for each stage, in order."""
        return (
            (0, self.warm_end, self.lr_lo, self.lr_lo),
            (self.warm_end, self.ramp_end, self.lr_lo, self.lr_hi),
            (self.ramp_end, self.hold_end, self.lr_hi, self.lr_hi),
            (self.hold_end, self.decay_end, self.lr_hi, self.lr_lo),
        )


def stage_value(stage, step) -> float:
    start, end, a, b = stage
    frac = (step - start) / (end - start)
    return a * (1.0 - frac) + b * frac


def lr_at(step: int, s: LrSchedule = LrSchedule()) -> float:
    if step < 0:
        raise InputError("step must be >= 0")
    if step >= s.decay_end:
        return s.lr_lo
    for stage in s.stages():
        if step < stage[1]:
            return stage_value(stage, step)
    raise AssertionError("unreachable")
