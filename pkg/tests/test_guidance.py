from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groundvid import model
from groundvid.errors import DimensionError, InputError
from groundvid.guidance import (SAUG, ZERO, GuidanceConfig, LrSchedule, apply_prompt_dropout,
                                lr_at, run_guided_step, saug_combine, stage_value,
                                unconditional_state)

from cases import random_state, random_weights, small_shapes


def test_saug_examples():
    x = np.array([0.3, -1.2, 4.0])
    y = np.array([1.0, 2.0, -3.0])
    assert np.array_equal(saug_combine(x, y, 0.0), x)
    assert np.array_equal(saug_combine(x, x, 5.0), x)
    assert saug_combine(np.ones(1), np.zeros(1), 5.0)[0] == 6.0
    with pytest.raises(DimensionError):
        saug_combine(np.ones(2), np.ones(3), 1.0)


@given(w=st.floats(0, 20), seed=st.integers(0, 2**32 - 1))
def test_saug_affine_in_w(w, seed):
    rng = np.random.default_rng(seed)
    c, u = rng.normal(size=5), rng.normal(size=5)
    np.testing.assert_allclose(saug_combine(c, u, w), c + w * (c - u), rtol=1e-12, atol=1e-12)


def test_default_scale_and_dropout():
    cfg = GuidanceConfig()
    assert cfg.w == 5 and cfg.uncond_mode == SAUG and cfg.dropout_p == 0.2
    with pytest.raises(InputError):
        GuidanceConfig(w=-1)
    with pytest.raises(InputError):
        GuidanceConfig(uncond_mode="none")


@pytest.fixture
def setup():
    rng = np.random.default_rng(12)
    shapes = small_shapes()
    state, _, _ = random_state(rng, shapes)
    return rng, shapes, state


def test_guided_w0_is_conditional(setup):
    rng, shapes, state = setup
    w = random_weights(rng, shapes)
    out = run_guided_step(state, w, GuidanceConfig(w=0.0))
    assert np.array_equal(out, model.forward_stack(state, w))


def test_gate_off_makes_guidance_inert(setup):
    rng, shapes, state = setup
    w = random_weights(rng, shapes, m_v=0.0)
    cond = model.forward_stack(state, w)
    for scale in (1.0, 5.0, 7.0):
        out = run_guided_step(state, w, GuidanceConfig(w=scale))
        np.testing.assert_allclose(out, cond, rtol=0, atol=1e-12)


def test_saug_and_zero_modes_differ(setup):
    rng, shapes, state = setup
    w = random_weights(rng, shapes, m_v=1.0)
    a = run_guided_step(state, w, GuidanceConfig(w=5.0, uncond_mode=SAUG))
    b = run_guided_step(state, w, GuidanceConfig(w=5.0, uncond_mode=ZERO))
    assert not np.allclose(a, b)
    assert np.array_equal(a, run_guided_step(state, w, GuidanceConfig(w=5.0, uncond_mode=SAUG)))


def test_unconditional_state_keeps_mask(setup):
    _, _, state = setup
    for mode in (SAUG, ZERO):
        u = unconditional_state(state, mode)
        assert u.mask is state.mask
        assert np.array_equal(u.t_tokens, state.t_tokens)
    assert np.all(unconditional_state(state, ZERO).i_tokens == 0.0)
    with pytest.raises(InputError):
        unconditional_state(replace(state, uncond_i_tokens=None), SAUG)


def test_dropout_extremes(setup):
    _, _, state = setup
    rng = np.random.default_rng(0)
    for _ in range(200):
        s, flag = apply_prompt_dropout(state, rng, 0.0)
        assert not flag and s is state
        s, flag = apply_prompt_dropout(state, rng, 1.0)
        assert flag and np.array_equal(s.i_tokens, state.uncond_i_tokens)


def test_dropout_depends_only_on_rng(setup):
    rng, shapes, state = setup
    other, _, _ = random_state(np.random.default_rng(99), shapes)
    f1 = [apply_prompt_dropout(state, r, 0.5)[1] for r in [np.random.default_rng(5)] * 50]
    f2 = [apply_prompt_dropout(other, r, 0.5)[1] for r in [np.random.default_rng(5)] * 50]
    assert f1 == f2


def test_dropout_rate_monte_carlo(setup):
    _, _, state = setup
    rng = np.random.default_rng(2025)
    n = 100_000
    hits = sum(apply_prompt_dropout(state, rng, 0.2)[1] for _ in range(n))
    # binomial 3-sigma bound: 3 * sqrt(0.2 * 0.8 / n) ~ 0.0038
    assert abs(hits / n - 0.2) <= 0.01


def test_lr_anchor_values():
    assert lr_at(0) == 1e-5
    assert lr_at(3000) == 5e-4
    assert lr_at(8000) == 5e-4
    assert lr_at(10000) == 1e-5
    assert lr_at(999) == 1e-5
    assert lr_at(50_000) == 1e-5


def test_lr_midpoints():
    mid = 1e-5 + 0.5 * (5e-4 - 1e-5)  # linear interpolation oracle
    assert lr_at(2000) == pytest.approx(2.55e-4, rel=1e-12) == mid
    assert lr_at(9000) == pytest.approx(2.55e-4, rel=1e-12)


def test_lr_continuity():
    s = LrSchedule()
    stages = s.stages()
    for left, right in zip(stages, stages[1:]):
        boundary = left[1]
        assert stage_value(left, boundary) == stage_value(right, boundary) == lr_at(boundary)
    assert stage_value(stages[-1], s.decay_end) == lr_at(s.decay_end)


def test_lr_monotone_segments():
    vals = [lr_at(s) for s in range(0, 10_001, 50)]
    ramp = vals[20:61]
    decay = vals[160:201]
    assert all(a <= b for a, b in zip(ramp, ramp[1:]))
    assert all(a >= b for a, b in zip(decay, decay[1:]))
    with pytest.raises(InputError):
        lr_at(-1)
