import itertools

import numpy as np
import pytest

from groundvid.encoder import (CONDITIONAL, UNCONDITIONAL, EmbedderConfig,
                               assemble_instance_tokens, encode_prompt, extra_id_tokens,
                               word_vector)
from groundvid.errors import CapacityError, ConsistencyError
from groundvid.grounding import (BACKGROUND, BBox, DownscaleSpec, InstanceTrack, MaskConfig,
                                 VideoGrounding, build_mask)

from cases import random_grounding

E = EmbedderConfig(d_text=16, seed=3, n_extra_ids=8)


def test_encode_deterministic_and_padding():
    a = encode_prompt("a red kite", 5, E)
    b = encode_prompt("a red kite", 5, E)
    assert np.array_equal(a.tokens, b.tokens)
    assert a.n_real == 3
    assert np.all(a.tokens[3:] == 0.0)
    np.testing.assert_allclose(np.linalg.norm(a.tokens[:3], axis=1), 1.0, rtol=0, atol=1e-12)


def test_encode_empty_and_truncation():
    e = encode_prompt("", 4, E)
    assert e.n_real == 0 and np.all(e.tokens == 0.0)
    t = encode_prompt("one two three four five", 2, E)
    assert t.n_real == 2
    assert np.array_equal(t.tokens[1], word_vector("two", E))


def test_seed_changes_embedding():
    other = EmbedderConfig(d_text=16, seed=4)
    assert not np.array_equal(word_vector("dog", E), word_vector("dog", other))


def test_thousand_words_no_collisions():
    cfg = EmbedderConfig(d_text=64, seed=0)
    vecs = np.stack([word_vector(f"w{i}", cfg) for i in range(1000)])
    # collision scan oracle
    assert len({v.tobytes() for v in vecs}) == 1000
    cos = vecs @ vecs.T
    np.fill_diagonal(cos, np.nan)
    assert np.nanmin(cos) < 0.9
    assert np.nanmax(cos) < 0.999


def test_extra_ids():
    assert extra_id_tokens(0, E).tokens.shape == (0, 16)
    a, b = extra_id_tokens(5, E), extra_id_tokens(5, E)
    assert np.array_equal(a.tokens, b.tokens)
    for i, j in itertools.combinations(range(5), 2):
        assert not np.array_equal(a.tokens[i], a.tokens[j])
    np.testing.assert_allclose(np.linalg.norm(a.tokens, axis=1), 1.0, atol=1e-12)
    with pytest.raises(CapacityError):
        extra_id_tokens(9, E)


def test_extra_ids_disjoint_from_words():
    # the extra_id namespace does not collide with a word spelled like its key
    assert not np.array_equal(extra_id_tokens(1, E).tokens[0], word_vector("0", E))


def _three_instance_video():
    tracks = [InstanceTrack(i, f"l{i}", p, {0: BBox(0, 0, 16 * (3 - i), 16 * (3 - i))})
              for i, p in enumerate(["big red", "mid blue", "tiny"])]
    return VideoGrounding(64, 64, 1, "caption here", "the backdrop", tuple(tracks))


def test_conditional_layout():
    g = _three_instance_video()
    cfg = MaskConfig(n_ins=10, tokens_per_instance=2)
    m = build_mask(g, DownscaleSpec(), cfg)
    (emb,) = assemble_instance_tokens(g, m, cfg, E, CONDITIONAL)
    assert emb.tokens.shape == (10, 16)
    prompts = {BACKGROUND: g.background_prompt, **{t.id: t.prompt for t in g.instances}}
    for s, inst in enumerate(m.slots[0]):
        assert np.array_equal(emb.tokens[2 * s:2 * s + 2], encode_prompt(prompts[inst], 2, E).tokens)
    assert np.all(emb.tokens[8:] == 0.0)


def test_conditional_spec_layout_n_ins_8():
    g = _three_instance_video()
    cfg = MaskConfig(n_ins=8, tokens_per_instance=2)
    m = build_mask(g, DownscaleSpec(), cfg)
    (emb,) = assemble_instance_tokens(g, m, cfg, E, CONDITIONAL)
    assert np.array_equal(emb.tokens[0:2], encode_prompt("the backdrop", 2, E).tokens)
    # "tiny" is one word: its second row is padding and aligns with nothing else
    assert np.all(emb.tokens[7] == 0.0) and np.any(emb.tokens[6] != 0.0)


def test_identical_prompts_identical_rows():
    tracks = [InstanceTrack(i, "x", "same words", {0: BBox(0, 0, 16, 16)}) for i in range(2)]
    g = VideoGrounding(64, 64, 1, "c", "bg", tuple(tracks))
    cfg = MaskConfig()
    (emb,) = assemble_instance_tokens(g, build_mask(g, DownscaleSpec(), cfg), cfg, E)
    assert np.array_equal(emb.tokens[2:4], emb.tokens[4:6])


def test_unconditional_uses_distinct_extra_ids():
    g = _three_instance_video()
    cfg = MaskConfig(n_ins=8, tokens_per_instance=2)
    m = build_mask(g, DownscaleSpec(), cfg)
    (emb,) = assemble_instance_tokens(g, m, cfg, E, UNCONDITIONAL)
    pool = extra_id_tokens(4, E).tokens
    for s in range(4):
        assert np.array_equal(emb.tokens[2 * s], pool[s])
        assert np.all(emb.tokens[2 * s + 1] == 0.0)
    assert not np.array_equal(emb.tokens[2], emb.tokens[4])


def test_unconditional_ignores_prompt_text():
    rng = np.random.default_rng(5)
    g = random_grounding(rng, min_instances=2)
    a, b = g.instances[0], g.instances[1]
    swapped = VideoGrounding(g.width, g.height, g.n_frames, g.caption, g.background_prompt,
                             (InstanceTrack(a.id, a.label, b.prompt, a.boxes),
                              InstanceTrack(b.id, b.label, a.prompt, b.boxes), *g.instances[2:]))
    cfg = MaskConfig()
    m = build_mask(g, DownscaleSpec(), cfg)
    u1 = assemble_instance_tokens(g, m, cfg, E, UNCONDITIONAL)
    u2 = assemble_instance_tokens(swapped, m, cfg, E, UNCONDITIONAL)
    assert all(x.tokens.tobytes() == y.tokens.tobytes() for x, y in zip(u1, u2))


def test_padding_rows_align_with_closed_mask_rows():
    rng = np.random.default_rng(9)
    for _ in range(20):
        g = random_grounding(rng)
        cfg = MaskConfig(n_ins=10, tokens_per_instance=2)
        m = build_mask(g, DownscaleSpec(), cfg)
        for mode in (CONDITIONAL, UNCONDITIONAL):
            embs = assemble_instance_tokens(g, m, cfg, E, mode)
            for f, emb in enumerate(embs):
                for row in range(len(m.slots[f]) * 2, 10):
                    assert np.all(emb.tokens[row] == 0.0)
                    assert np.all(m.logits[f, row] == -np.inf)


def test_slot_table_mismatch():
    g = _three_instance_video()
    cfg = MaskConfig(n_ins=8)
    m = build_mask(g, DownscaleSpec(), cfg)
    fewer = VideoGrounding(64, 64, 1, "c", "bg", g.instances[:1])
    with pytest.raises(ConsistencyError):
        assemble_instance_tokens(fewer, m, cfg, E)
