"""Toy diffusion-transformer block stack with instance grounding branches.

Each block runs

    I' = I + (m_t + alpha1) * CrossAttn(I, T)      shared enhancement, real rows only
    V  = V + SelfAttn(V)                            global over all f*h*w tokens
    V  = V + m_v * IMCA(V, I', M)                   per key frame, masked
    V  = V + CrossAttn(V, T)
    V  = V + MLP(V)

``alpha1`` is one of the six AdaLN modulation vectors of the block.
"""
from __future__ import annotations

import io
import zipfile
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, InitError, InputError
from .grounding import AttentionMask
from .numerics import (ALPHA_INDEX, AdaLNWeights, AttnWeights, adaln_modulate,
                       masked_attention, masked_attention_backward, timestep_embedding)


@dataclass(frozen=True)
class ShapeConfig:
    f: int = 2
    h: int = 4
    w: int = 4
    d: int = 16
    d_text: int = 16
    n_ins: int = 8
    n_ctx: int = 8
    n_heads: int = 2
    n_blocks: int = 2

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 1:
                raise InputError(f"shapes.{name} must be positive, got {value}")
        if self.d % self.n_heads:
            raise InputError(f"shapes.d={self.d} not divisible by n_heads={self.n_heads}")
        if self.d_text > self.d:
            raise InputError("shapes.d_text must not exceed d (alpha1 is a d_text slice)")

    @property
    def n_tok(self) -> int:
        return self.h * self.w


@dataclass(frozen=True)
class TextAttn:
    """Attention whose keys/values come from text tokens projected d_text -> d."""

    attn: AttnWeights
    proj: np.ndarray  # (d, d_text)

    def copy(self) -> "TextAttn":
        return TextAttn(self.attn.copy(), self.proj.copy())


@dataclass(frozen=True)
class MLPWeights:
    w_in: np.ndarray  # (2*hidden, d): value half then gate half
    w_out: np.ndarray  # (d, hidden)


@dataclass(frozen=True)
class BlockWeights:
    self_attn: AttnWeights
    cross_attn: TextAttn
    imca: TextAttn
    adaln: AdaLNWeights
    mlp: MLPWeights
    m_v: float = 0.0
    alpha_index: int = ALPHA_INDEX


@dataclass(frozen=True)
class StapeWeights:
    attn: TextAttn  # model dim d_text, projection d_text -> d_text
    m_t: np.ndarray  # (d_text,)


@dataclass(frozen=True)
class ModelWeights:
    blocks: tuple
    stape: StapeWeights


@dataclass(frozen=True)
class ForwardState:
    v: np.ndarray  # (f, h*w, d)
    i_tokens: np.ndarray  # (f, n_ins, d_text)
    t_tokens: np.ndarray  # (n_ctx, d_text)
    mask: np.ndarray  # (f, n_ins, h*w) additive logits
    t_emb: np.ndarray  # (d,)
    timestep: float = 0.0
    h: int = 0
    w: int = 0
    uncond_i_tokens: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        f, n_tok, _ = self.v.shape
        if self.i_tokens.ndim != 3 or self.i_tokens.shape[0] != f:
            raise DimensionError(f"instance tokens {self.i_tokens.shape} do not match {f} frames")
        if self.mask.shape != (f, self.i_tokens.shape[1], n_tok):
            raise DimensionError(
                f"mask {self.mask.shape} inconsistent with v {self.v.shape} "
                f"and instance tokens {self.i_tokens.shape}")
        if not np.isfinite(self.v).all():
            raise DimensionError("visual tokens must be finite")

    def with_instance_tokens(self, tokens) -> "ForwardState":
        return replace(self, i_tokens=tokens)


def _mask_logits(mask) -> np.ndarray:
    return mask.logits if isinstance(mask, AttentionMask) else np.asarray(mask)


def _identity_or_random(rng, d, d_text, scale):
    if d == d_text:
        return np.eye(d)
    return rng.normal(0.0, scale, size=(d, d_text))


def init_block(shapes: ShapeConfig, rng: np.random.Generator, scale: float = 0.02) -> BlockWeights:
    d, h = shapes.d, shapes.n_heads
    hidden = 2 * d
    cross = TextAttn(AttnWeights.random(rng, d, h, scale),
                     _identity_or_random(rng, d, shapes.d_text, scale))
    block = BlockWeights(
        self_attn=AttnWeights.random(rng, d, h, scale),
        cross_attn=cross,
        imca=cross,  # replaced by a deep copy below
        adaln=AdaLNWeights(rng.normal(0.0, scale, size=(6 * d, d)), np.zeros(6 * d)),
        mlp=MLPWeights(rng.normal(0.0, scale, size=(2 * hidden, d)),
                       rng.normal(0.0, scale, size=(d, hidden))),
    )
    return init_imca_from_cross_attn(block)


def init_stape(shapes: ShapeConfig, rng: np.random.Generator, scale: float = 0.02) -> StapeWeights:
    dt = shapes.d_text
    heads = shapes.n_heads if dt % shapes.n_heads == 0 else 1
    return StapeWeights(TextAttn(AttnWeights.random(rng, dt, heads, scale), np.eye(dt)),
                        np.zeros(dt))


def init_weights(shapes: ShapeConfig, rng: np.random.Generator, scale: float = 0.02) -> ModelWeights:
    blocks = tuple(init_block(shapes, rng, scale) for _ in range(shapes.n_blocks))
    return ModelWeights(blocks, init_stape(shapes, rng, scale))


def init_imca_from_cross_attn(b: BlockWeights) -> BlockWeights:
    """Deep-copy the block's cross-attention weights into its IMCA branch; m_v stays 0."""
    src, dst = b.cross_attn, b.imca
    if (src.attn.dim != dst.attn.dim or src.attn.n_heads != dst.attn.n_heads
            or src.proj.shape != dst.proj.shape):
        raise InitError("IMCA and cross-attention shapes differ; cannot copy weights")
    return replace(b, imca=src.copy(), m_v=0.0)


def text_attention(x, text_tokens, ta: TextAttn, mask=None):
    return masked_attention(x, text_tokens @ ta.proj.T, ta.attn, mask)


def mlp_forward(x, mlp: MLPWeights):
    value, gate = np.split(x @ mlp.w_in.T, 2, axis=-1)
    silu = value / (1.0 + np.exp(-value))
    return (silu * gate) @ mlp.w_out.T


def alpha1_from(t_emb, b: BlockWeights, d_text: int) -> np.ndarray:
    return adaln_modulate(t_emb, b.adaln)[b.alpha_index][:d_text]


def stape_forward(i_tokens, t_tokens, sw: StapeWeights, alpha1):
    """Enrich instance tokens with caption context under the gate ``m_t + alpha1``.

    Accepts ``(n_ins, d_text)`` or ``(f, n_ins, d_text)``. All-zero (padding)
    rows are left untouched.
    """
    i_tokens = np.asarray(i_tokens, dtype=np.float64)
    alpha1 = np.asarray(alpha1, dtype=np.float64)
    d_text = sw.m_t.shape[0]
    if alpha1.shape != (d_text,) or i_tokens.shape[-1] != d_text:
        raise DimensionError(
            f"alpha1 {alpha1.shape} / instance tokens {i_tokens.shape} need d_text={d_text}")
    if i_tokens.ndim == 2:
        return stape_forward(i_tokens[None], t_tokens, sw, alpha1)[0]
    gate = sw.m_t + alpha1
    out = i_tokens.copy()
    for t in range(i_tokens.shape[0]):
        frame = i_tokens[t]
        real = np.any(frame != 0.0, axis=1)
        if not real.any():
            continue
        ctx = text_attention(frame[real], t_tokens, sw.attn)
        out[t, real] = frame[real] + gate * ctx
    return out


def imca_attention(v_frame, i_frame, mask_frame, b: BlockWeights, return_cache=False):
    """IMCA for one key frame: visual tokens query projected instance tokens.

    ``mask_frame`` is ``(n_ins, n_tok)``; it is transposed to query-major order.
    """
    kv = i_frame @ b.imca.proj.T
    return masked_attention(v_frame, kv, b.imca.attn, mask_frame.T, return_cache=return_cache)


def imca_forward(v, i_tokens, mask, b: BlockWeights):
    logits = _mask_logits(mask)
    v = np.asarray(v, dtype=np.float64)
    if logits.shape[0] != v.shape[0] or i_tokens.shape[0] != v.shape[0]:
        raise DimensionError(
            f"mask has {logits.shape[0]} frames, instance tokens {i_tokens.shape[0]}, "
            f"visual tokens {v.shape[0]}")
    out = np.empty_like(v)
    for t in range(v.shape[0]):
        out[t] = v[t] + b.m_v * imca_attention(v[t], i_tokens[t], logits[t], b)
    return out


def imca_backward(v, i_tokens, mask, b: BlockWeights, upstream_grad):
    """Gradients of ``sum(upstream_grad * imca_forward(v, i_tokens, mask, b))``.

    Returns a dict keyed ``v``, ``i_tokens``, ``m_v``, ``w_q``, ``w_k``, ``w_v``,
    ``w_o`` and ``proj`` (the latter five are the IMCA weights).
    """
    logits = _mask_logits(mask)
    v = np.asarray(v, dtype=np.float64)
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != v.shape:
        raise DimensionError(f"upstream gradient {upstream_grad.shape} != output {v.shape}")
    attn = b.imca.attn
    grads = {
        "v": upstream_grad.copy(),
        "i_tokens": np.zeros_like(i_tokens, dtype=np.float64),
        "m_v": 0.0,
        "w_q": np.zeros_like(attn.w_q),
        "w_k": np.zeros_like(attn.w_k),
        "w_v": np.zeros_like(attn.w_v),
        "w_o": np.zeros_like(attn.w_o),
        "proj": np.zeros_like(b.imca.proj),
    }
    for t in range(v.shape[0]):
        out, cache = imca_attention(v[t], i_tokens[t], logits[t], b, return_cache=True)
        grads["m_v"] += float(np.sum(upstream_grad[t] * out))
        g = masked_attention_backward(b.m_v * upstream_grad[t], cache, attn)
        grads["v"][t] += g["q_in"]
        grads["i_tokens"][t] = g["kv_in"] @ b.imca.proj
        grads["proj"] += g["kv_in"].T @ i_tokens[t]
        for name in ("w_q", "w_k", "w_v", "w_o"):
            grads[name] += g[name]
    return grads


def positional_encoding(f: int, h: int, w: int, d: int) -> np.ndarray:
    """Additive sinusoidal position term over (frame, row, column), shape ``(f, h*w, d)``."""
    pe = np.zeros((f, h * w, d))
    for t in range(f):
        for r in range(h):
            for c in range(w):
                pe[t, r * w + c] = (timestep_embedding(t, d, 10000.0)
                                    + timestep_embedding(r, d, 1000.0)
                                    + timestep_embedding(c, d, 100.0))
    return 0.1 * pe


def _global_branches_pre(v, b: BlockWeights):
    f, n_tok, d = v.shape
    flat = v.reshape(f * n_tok, d)
    flat = flat + masked_attention(flat, flat, b.self_attn)
    return flat.reshape(f, n_tok, d)


def _global_branches_post(v, t_tokens, b: BlockWeights):
    f, n_tok, d = v.shape
    flat = v.reshape(f * n_tok, d)
    flat = flat + text_attention(flat, t_tokens, b.cross_attn)
    flat = flat + mlp_forward(flat, b.mlp)
    return flat.reshape(f, n_tok, d)


def dit_block_forward(state: ForwardState, b: BlockWeights, sw: StapeWeights, v=None):
    """One grounded block. ``v`` overrides ``state.v`` when chaining blocks."""
    v = state.v if v is None else v
    d_text = sw.m_t.shape[0]
    alpha1 = alpha1_from(state.t_emb, b, d_text)
    enhanced = stape_forward(state.i_tokens, state.t_tokens, sw, alpha1)
    v = _global_branches_pre(v, b)
    v = imca_forward(v, enhanced, state.mask, b)
    return _global_branches_post(v, state.t_tokens, b)


def baseline_block_forward(v, t_tokens, b: BlockWeights):
    """The same block with every grounding branch removed."""
    return _global_branches_post(_global_branches_pre(v, b), t_tokens, b)


def _stack_input(state: ForwardState):
    f, n_tok, d = state.v.shape
    if state.h * state.w != n_tok:
        raise DimensionError(f"state lattice {state.h}x{state.w} != {n_tok} tokens")
    return state.v + positional_encoding(f, state.h, state.w, d)


def forward_stack(state: ForwardState, weights: ModelWeights) -> np.ndarray:
    v = _stack_input(state)
    for b in weights.blocks:
        v = dit_block_forward(state, b, weights.stape, v=v)
    return v


def forward_baseline(state: ForwardState, weights: ModelWeights) -> np.ndarray:
    v = _stack_input(state)
    for b in weights.blocks:
        v = baseline_block_forward(v, state.t_tokens, b)
    return v


def checkpoint_arrays(weights: ModelWeights) -> dict:
    """Flatten weights into ``name -> float64 array`` (see README for the name list)."""
    out = {}

    def put_attn(prefix, a: AttnWeights):
        for name in ("w_q", "w_k", "w_v", "w_o"):
            out[f"{prefix}.{name}"] = getattr(a, name)
        out[f"{prefix}.n_heads"] = np.array(float(a.n_heads))

    for i, b in enumerate(weights.blocks):
        p = f"block{i}"
        put_attn(f"{p}.self_attn", b.self_attn)
        put_attn(f"{p}.cross_attn", b.cross_attn.attn)
        out[f"{p}.cross_attn.proj"] = b.cross_attn.proj
        put_attn(f"{p}.imca", b.imca.attn)
        out[f"{p}.imca.proj"] = b.imca.proj
        out[f"{p}.imca.m_v"] = np.array(b.m_v)
        out[f"{p}.adaln.w"] = b.adaln.w
        out[f"{p}.adaln.b"] = b.adaln.b
        out[f"{p}.adaln.alpha_index"] = np.array(float(b.alpha_index))
        out[f"{p}.mlp.w_in"] = b.mlp.w_in
        out[f"{p}.mlp.w_out"] = b.mlp.w_out
    put_attn("stape.attn", weights.stape.attn.attn)
    out["stape.attn.proj"] = weights.stape.attn.proj
    out["stape.m_t"] = weights.stape.m_t
    return {k: np.asarray(v, dtype=np.float64) for k, v in out.items()}


def weights_from_arrays(arrays) -> ModelWeights:
    def attn(prefix):
        return AttnWeights(*(np.array(arrays[f"{prefix}.{n}"]) for n in ("w_q", "w_k", "w_v", "w_o")),
                           n_heads=int(arrays[f"{prefix}.n_heads"]))

    blocks = []
    i = 0
    while f"block{i}.self_attn.w_q" in arrays:
        p = f"block{i}"
        blocks.append(BlockWeights(
            self_attn=attn(f"{p}.self_attn"),
            cross_attn=TextAttn(attn(f"{p}.cross_attn"), np.array(arrays[f"{p}.cross_attn.proj"])),
            imca=TextAttn(attn(f"{p}.imca"), np.array(arrays[f"{p}.imca.proj"])),
            adaln=AdaLNWeights(np.array(arrays[f"{p}.adaln.w"]), np.array(arrays[f"{p}.adaln.b"])),
            mlp=MLPWeights(np.array(arrays[f"{p}.mlp.w_in"]), np.array(arrays[f"{p}.mlp.w_out"])),
            m_v=float(arrays[f"{p}.imca.m_v"]),
            alpha_index=int(arrays[f"{p}.adaln.alpha_index"]),
        ))
        i += 1
    stape = StapeWeights(TextAttn(attn("stape.attn"), np.array(arrays["stape.attn.proj"])),
                         np.array(arrays["stape.m_t"]))
    return ModelWeights(tuple(blocks), stape)


def save_checkpoint(weights: ModelWeights, path) -> None:
    """Write an ``.npz``-compatible archive with fixed timestamps (byte-reproducible)."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in sorted(checkpoint_arrays(weights).items()):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, arr, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)),
                        buf.getvalue())


def load_checkpoint(path) -> ModelWeights:
    with np.load(path) as data:
        return weights_from_arrays({k: data[k] for k in data.files})
