"""Dense attention and AdaLN kernels used by every model component.

Tensors are plain ``numpy.ndarray`` objects in float64. Weight matrices follow
the ``Linear`` convention ``y = x @ W.T`` so that a matrix applied to a single
column vector reads ``W @ x``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError

N_MODULATIONS = 6
MODULATION_NAMES = ("shift1", "scale1", "gate1", "shift2", "scale2", "gate2")
# gate2 is the slot consumed as the prompt-enhancement gate by default
ALPHA_INDEX = 5


@dataclass(frozen=True)
class AttnWeights:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    n_heads: int

    def __post_init__(self):
        d = self.w_q.shape[0]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            m = getattr(self, name)
            if m.ndim != 2 or m.shape != (d, d):
                raise DimensionError(f"{name} must be ({d}, {d}), got {m.shape}")
        if self.n_heads < 1 or d % self.n_heads:
            raise DimensionError(f"model dim {d} not divisible by n_heads={self.n_heads}")

    @property
    def dim(self) -> int:
        return self.w_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.dim // self.n_heads

    def copy(self) -> "AttnWeights":
        return AttnWeights(self.w_q.copy(), self.w_k.copy(), self.w_v.copy(),
                           self.w_o.copy(), self.n_heads)

    @classmethod
    def random(cls, rng: np.random.Generator, d: int, n_heads: int, scale: float = 0.02):
        mats = [rng.normal(0.0, scale, size=(d, d)) for _ in range(4)]
        return cls(*mats, n_heads=n_heads)


@dataclass(frozen=True)
class AdaLNWeights:
    w: np.ndarray  # (6*d, d_t)
    b: np.ndarray  # (6*d,)

    def __post_init__(self):
        if self.w.ndim != 2 or self.b.ndim != 1 or self.w.shape[0] != self.b.shape[0]:
            raise DimensionError(f"adaln w {self.w.shape} and b {self.b.shape} disagree")
        if self.b.shape[0] % N_MODULATIONS:
            raise DimensionError("adaln output does not split into six modulation vectors")

    @property
    def dim(self) -> int:
        return self.b.shape[0] // N_MODULATIONS

    def copy(self) -> "AdaLNWeights":
        return AdaLNWeights(self.w.copy(), self.b.copy())


def _check_finite(name, x):
    if np.isnan(x).any():
        raise NumericError(f"NaN in {name}")


def masked_softmax(logits: np.ndarray) -> np.ndarray:
    """Row softmax along the last axis; rows with no finite entry become zero."""
    row_max = logits.max(axis=-1, keepdims=True)
    dead = ~np.isfinite(row_max)
    safe_max = np.where(dead, 0.0, row_max)
    e = np.exp(logits - safe_max)
    denom = e.sum(axis=-1, keepdims=True)
    return np.where(dead, 0.0, e / np.where(dead, 1.0, denom))


def split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, d = x.shape
    return x.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2)


def merge_heads(x: np.ndarray) -> np.ndarray:
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def masked_attention(q_in, kv_in, weights: AttnWeights, mask=None, *, return_cache=False):
    """Multi-head scaled dot-product attention with an additive logit mask.

    ``mask`` has shape ``(n_q, n_k)`` and is shared by all heads. A query whose
    mask row is entirely ``-inf`` produces an exactly zero output row.
    """
    q_in = np.asarray(q_in, dtype=np.float64)
    kv_in = np.asarray(kv_in, dtype=np.float64)
    d = weights.dim
    if q_in.ndim != 2 or q_in.shape[1] != d:
        raise DimensionError(f"query input must be (n_q, {d}), got {q_in.shape}")
    if kv_in.ndim != 2 or kv_in.shape[1] != d:
        raise DimensionError(f"key/value input must be (n_k, {d}), got {kv_in.shape}")
    _check_finite("query input", q_in)
    _check_finite("key/value input", kv_in)
    n_q, n_k = q_in.shape[0], kv_in.shape[0]
    if mask is not None:
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != (n_q, n_k):
            raise DimensionError(f"mask must be ({n_q}, {n_k}), got {mask.shape}")
        _check_finite("mask", mask)

    h = weights.n_heads
    scale = 1.0 / np.sqrt(weights.head_dim)
    q = split_heads(q_in @ weights.w_q.T, h)
    k = split_heads(kv_in @ weights.w_k.T, h)
    v = split_heads(kv_in @ weights.w_v.T, h)
    logits = (q @ k.transpose(0, 2, 1)) * scale
    if mask is not None:
        logits = logits + mask
    probs = masked_softmax(logits)
    heads = probs @ v
    merged = merge_heads(heads)
    out = merged @ weights.w_o.T
    if return_cache:
        cache = dict(q_in=q_in, kv_in=kv_in, q=q, k=k, v=v, probs=probs,
                     merged=merged, scale=scale)
        return out, cache
    return out


def masked_attention_backward(grad_out, cache, weights: AttnWeights):
    """Reverse-mode gradients of :func:`masked_attention`.

    Returns a dict with ``q_in``, ``kv_in``, ``w_q``, ``w_k``, ``w_v``, ``w_o``.
    """
    h = weights.n_heads
    scale = cache["scale"]
    q, k, v, probs = cache["q"], cache["k"], cache["v"], cache["probs"]

    g_wo = grad_out.T @ cache["merged"]
    g_heads = split_heads(grad_out @ weights.w_o, h)
    g_probs = g_heads @ v.transpose(0, 2, 1)
    g_v = probs.transpose(0, 2, 1) @ g_heads
    g_logits = probs * (g_probs - (g_probs * probs).sum(axis=-1, keepdims=True))
    g_q = (g_logits @ k) * scale
    g_k = (g_logits.transpose(0, 2, 1) @ q) * scale

    g_q, g_k, g_v = merge_heads(g_q), merge_heads(g_k), merge_heads(g_v)
    q_in, kv_in = cache["q_in"], cache["kv_in"]
    return {
        "q_in": g_q @ weights.w_q,
        "kv_in": g_k @ weights.w_k + g_v @ weights.w_v,
        "w_q": g_q.T @ q_in,
        "w_k": g_k.T @ kv_in,
        "w_v": g_v.T @ kv_in,
        "w_o": g_wo,
    }


def adaln_modulate(t_emb, weights: AdaLNWeights):
    """Return the six modulation vectors ``(shift1, scale1, gate1, shift2, scale2, gate2)``."""
    t_emb = np.asarray(t_emb, dtype=np.float64)
    if t_emb.ndim != 1 or t_emb.shape[0] != weights.w.shape[1]:
        raise DimensionError(
            f"timestep embedding must have dim {weights.w.shape[1]}, got {t_emb.shape}")
    out = weights.w @ t_emb + weights.b
    return tuple(np.split(out, N_MODULATIONS))


def timestep_embedding(t: float, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Sinusoidal features of a scalar timestep (cos half, then sin half)."""
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = float(t) * freqs
    emb = np.concatenate([np.cos(args), np.sin(args)])
    if dim % 2:
        emb = np.concatenate([emb, [0.0]])
    return emb
