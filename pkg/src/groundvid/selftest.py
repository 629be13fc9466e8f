"""Fast in-package property checks behind ``groundvid selftest``.

These are reduced-size versions of the test-suite properties, meant as a
smoke check on an installed copy where the tests directory is absent.
"""
from __future__ import annotations

import numpy as np

from . import bench, grounding, guidance, model
from .encoder import EmbedderConfig
from .grounding import BBox, DownscaleSpec, MaskConfig
from .pipeline import build_state, shapes_for
from .synthetic import SyntheticSceneSpec, gen_synthetic


def _scene(seed, k=3):
    return gen_synthetic(SyntheticSceneSpec(n_frames=8, width=64, height=64,
                                            random_rects=k, seed=seed))


def check_gate_off(n=5):
    for seed in range(n):
        rng = np.random.default_rng(seed)
        _, g = _scene(seed)
        e = EmbedderConfig()
        shapes = shapes_for(g, DownscaleSpec(), MaskConfig(), e)
        state, _ = build_state(g, DownscaleSpec(), MaskConfig(), e, shapes, rng)
        w = model.init_weights(shapes, rng, scale=0.3)
        w = model.ModelWeights(tuple(_zero_alpha(b) for b in w.blocks), w.stape)
        if not np.array_equal(model.forward_stack(state, w), model.forward_baseline(state, w)):
            return False
    return True


def _zero_alpha(b):
    a = b.adaln
    rows = slice(b.alpha_index * a.dim, (b.alpha_index + 1) * a.dim)
    wz, bz = a.w.copy(), a.b.copy()
    wz[rows] = 0.0
    bz[rows] = 0.0
    return model.BlockWeights(b.self_attn, b.cross_attn, b.imca,
                              model.AdaLNWeights(wz, bz), b.mlp, 0.0, b.alpha_index)


def check_lr_anchors():
    s = guidance.LrSchedule()
    anchors = {0: 1e-5, 3000: 5e-4, 8000: 5e-4, 10000: 1e-5}
    return all(guidance.lr_at(k, s) == v for k, v in anchors.items())


def check_iou():
    return bench.iou(BBox(0, 0, 2, 2), BBox(1, 1, 3, 3)) == 1 / 7


def check_mask_coverage(n=10):
    for seed in range(n):
        _, g = _scene(seed)
        m = grounding.build_mask(g, DownscaleSpec(), MaskConfig())
        for f in range(m.f):
            opened = set().union(*(m.open_tokens(f, s) for s in range(len(m.slots[f]))))
            if opened != set(range(m.n_tok)):
                return False
    return True


def check_closed_loop():
    frames, g = _scene(0)
    rep = bench.evaluate_video(g, g, frames, [bench.ToyColorProvider()])
    return rep.mean_iou == 1.0 and rep.aw_iou == 1.0 and rep.mean_sim("toy") == 1.0


CHECKS = {
    "gate_off_equivalence": check_gate_off,
    "lr_anchors": check_lr_anchors,
    "iou_worked_case": check_iou,
    "mask_coverage": check_mask_coverage,
    "closed_loop": check_closed_loop,
}


def run_all():
    return {name: bool(fn()) for name, fn in CHECKS.items()}
