"""Seeded random cases shared by the unit and acceptance tests."""
from dataclasses import replace

import numpy as np

from groundvid import model
from groundvid.encoder import EmbedderConfig
from groundvid.grounding import BBox, DownscaleSpec, InstanceTrack, MaskConfig, VideoGrounding
from groundvid.numerics import AdaLNWeights, AttnWeights
from groundvid.pipeline import build_state

from reference import batched_imca_loss, central_difference, max_relative_error

WORDS = "red blue green small large dog cat car tree bird person ball kite boat".split()


def random_prompt(rng, n_words=None):
    n = n_words or int(rng.integers(1, 4))
    return " ".join(rng.choice(WORDS, size=n))


def random_grounding(rng, width=64, height=64, n_frames=8, max_instances=3, min_instances=1):
    """Random boxes on a stride-16 lattice video (4x4 tokens at the default downscale)."""
    k = int(rng.integers(min_instances, max_instances + 1))
    tracks = []
    for i in range(k):
        boxes = {}
        for frame in range(n_frames):
            x0 = int(rng.integers(0, width - 1))
            y0 = int(rng.integers(0, height - 1))
            x1 = int(rng.integers(x0 + 1, width + 1))
            y1 = int(rng.integers(y0 + 1, height + 1))
            boxes[frame] = BBox(x0, y0, x1, y1)
        tracks.append(InstanceTrack(i, f"obj{i}", random_prompt(rng), boxes))
    return VideoGrounding(width, height, n_frames, random_prompt(rng, 5), "plain backdrop",
                          tuple(tracks))


def small_shapes(**overrides):
    base = dict(f=2, h=4, w=4, d=16, d_text=16, n_ins=8, n_ctx=6, n_heads=2, n_blocks=2)
    base.update(overrides)
    return model.ShapeConfig(**base)


def random_state(rng, shapes=None, mask_cfg=MaskConfig(), embedder=EmbedderConfig(),
                 grounding=None):
    """Grounded state on a 64x64, 8-frame video -> f=2 key frames of 4x4 tokens."""
    shapes = shapes or small_shapes()
    g = grounding or random_grounding(rng)
    state, mask = build_state(g, DownscaleSpec(), mask_cfg, embedder, shapes, rng,
                              timestep=float(rng.integers(0, 1000)))
    return state, mask, g


def random_weights(rng, shapes, scale=0.3, m_v=None, m_t=None):
    w = model.init_weights(shapes, rng, scale=scale)
    blocks = tuple(replace(b, m_v=float(rng.normal()) if m_v is None else m_v) for b in w.blocks)
    mt = rng.normal(size=shapes.d_text) if m_t is None else np.full(shapes.d_text, m_t)
    return model.ModelWeights(blocks, replace(w.stape, m_t=mt))


def zero_alpha(b):
    """Zero the AdaLN rows feeding alpha1 so it is identically 0."""
    d = b.adaln.dim
    rows = slice(b.alpha_index * d, (b.alpha_index + 1) * d)
    w, bias = b.adaln.w.copy(), b.adaln.b.copy()
    w[rows] = 0.0
    bias[rows] = 0.0
    return replace(b, adaln=AdaLNWeights(w, bias))


def gradient_case(seed, f=2, n_tok=4, n_ins=4, d=16, d_text=8, n_heads=2):
    rng = np.random.default_rng(seed)
    ta = model.TextAttn(AttnWeights.random(rng, d, n_heads, 0.4), rng.normal(0, 0.4, (d, d_text)))
    b = model.BlockWeights(AttnWeights.random(rng, d, n_heads, 0.1), ta, ta.copy(),
                           AdaLNWeights(np.zeros((6 * d, d)), np.zeros(6 * d)),
                           model.MLPWeights(np.zeros((4 * d, d)), np.zeros((d, 2 * d))),
                           m_v=float(rng.normal()))
    v = rng.normal(size=(f, n_tok, d))
    it = rng.normal(size=(f, n_ins, d_text))
    mask = np.where(rng.random((f, n_ins, n_tok)) < 0.5, -np.inf,
                    0.3 * rng.random((f, n_ins, n_tok)))
    mask[:, :, 0] = -np.inf  # one fully masked visual token per frame
    up = rng.normal(size=v.shape)
    return v, it, mask, b, up


def gradcheck(seed, h=1e-5):
    """Analytic IMCA gradients vs batched central differences; returns rel errors."""
    v, it, mask, b, up = gradient_case(seed)
    analytic = model.imca_backward(v, it, mask, b, up)
    a = b.imca.attn
    params = {"v": v, "i_tokens": it, "w_q": a.w_q, "w_k": a.w_k, "w_v": a.w_v,
              "w_o": a.w_o, "proj": b.imca.proj, "m_v": np.array([b.m_v])}

    def loss_for(name):
        def loss(batch):
            args = {k: p[None] for k, p in params.items()}
            args[name] = batch
            return batched_imca_loss(args["v"], args["i_tokens"], mask, args["w_q"],
                                     args["w_k"], args["w_v"], args["w_o"], args["proj"],
                                     args["m_v"].reshape(-1), up, a.n_heads)
        return loss

    errors = {}
    for name, p in params.items():
        numeric = central_difference(loss_for(name), p, h=h)
        errors[name] = max_relative_error(np.reshape(analytic[name], p.shape), numeric)
    return errors
