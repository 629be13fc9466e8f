"""Deterministic hash-based text embedder with reserved null (extra_id) tokens."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConsistencyError, InputError
from .grounding import BACKGROUND, AttentionMask, MaskConfig, VideoGrounding

CONDITIONAL = "conditional"
UNCONDITIONAL = "unconditional"


@dataclass(frozen=True)
class EmbedderConfig:
    d_text: int = 16
    seed: int = 0
    n_extra_ids: int = 16

    def __post_init__(self):
        if self.d_text < 8:
            raise InputError("d_text must be >= 8")
        if self.n_extra_ids < 1:
            raise InputError("n_extra_ids must be >= 1")


@dataclass(frozen=True)
class TokenEmbedding:
    tokens: np.ndarray  # (n, d_text)
    n_real: int

    def __len__(self):
        return self.tokens.shape[0]


def _unit_vector(namespace: bytes, key: str, seed: int, dim: int) -> np.ndarray:
    # separate blake2b personalisations keep word and extra_id seeds disjoint
    digest = hashlib.blake2b(f"{seed}\x00{key}".encode(), digest_size=16,
                             person=namespace).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def word_vector(word: str, cfg: EmbedderConfig) -> np.ndarray:
    return _unit_vector(b"word", word, cfg.seed, cfg.d_text)


def encode_prompt(text: str, budget: int, cfg: EmbedderConfig) -> TokenEmbedding:
    if budget < 1:
        raise InputError("token budget must be >= 1")
    words = text.split()[:budget]
    tokens = np.zeros((budget, cfg.d_text))
    for i, w in enumerate(words):
        tokens[i] = word_vector(w, cfg)
    return TokenEmbedding(tokens, len(words))


def extra_id_tokens(k: int, cfg: EmbedderConfig) -> TokenEmbedding:
    if k > cfg.n_extra_ids:
        raise CapacityError(f"requested {k} extra_id tokens, pool holds {cfg.n_extra_ids}")
    tokens = np.zeros((k, cfg.d_text))
    for i in range(k):
        tokens[i] = _unit_vector(b"extra_id", str(i), cfg.seed, cfg.d_text)
    return TokenEmbedding(tokens, k)


def assemble_instance_tokens(g: VideoGrounding, mask: AttentionMask, cfg: MaskConfig,
                             e: EmbedderConfig, mode: str = CONDITIONAL):
    """Lay out instance prompt tokens per key frame following the mask's slot table.

    Returns one ``TokenEmbedding`` of shape ``(n_ins, d_text)`` per key frame.
    Slot ``s`` occupies rows ``[s*tpi, (s+1)*tpi)``; unused rows are zero.
    """
    if mode not in (CONDITIONAL, UNCONDITIONAL):
        raise InputError(f"unknown mode {mode!r}")
    if mask.n_ins != cfg.n_ins or mask.tokens_per_instance != cfg.tokens_per_instance:
        raise ConsistencyError("mask layout does not match mask config")
    tpi = cfg.tokens_per_instance
    prompts = {t.id: t.prompt for t in g.instances}
    prompts[BACKGROUND] = g.background_prompt
    max_slots = max(len(s) for s in mask.slots) if mask.slots else 0
    null = extra_id_tokens(max_slots, e).tokens if mode == UNCONDITIONAL else None

    out = []
    for frame, ids in zip(mask.key_frames, mask.slots):
        rows = np.zeros((cfg.n_ins, e.d_text))
        for s, inst_id in enumerate(ids):
            if inst_id not in prompts:
                raise ConsistencyError(f"slot table names unknown instance {inst_id}")
            if inst_id != BACKGROUND and frame not in g.track(inst_id).boxes:
                raise ConsistencyError(f"instance {inst_id} has no box at key frame {frame}")
            if mode == CONDITIONAL:
                rows[s * tpi:(s + 1) * tpi] = encode_prompt(prompts[inst_id], tpi, e).tokens
            else:
                rows[s * tpi] = null[s]
        n_real = int(np.count_nonzero(np.any(rows != 0.0, axis=1)))
        out.append(TokenEmbedding(rows, n_real))
    return out


def stack_tokens(embeddings) -> np.ndarray:
    return np.stack([e.tokens for e in embeddings])
