from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from skipsr.codec import LatentTensor
from skipsr.oracle import SkipMask
from skipsr.skipdit import (VARIANTS, DiTConfig, DiTWeights, RefinedCells, assign_windows,
                            attend, attention_cost, compose_output, dit_forward,
                            estimated_speedup, flop_cost, rope_dims, rope_rotate, route,
                            run_blocks, tokenize, window_attention)

import reference as ref

seeds = st.integers(0, 2**31 - 1)
SMALL = DiTConfig(dim=24, heads=2, layers=2, window=(2, 2, 2))


def _latent(rng, t=2, h=8, w=8, C=6):
    return LatentTensor(rng.standard_normal((t, h, w, C)), C // 3)


def _weights(cfg, C, seed=0, zero=False):
    return DiTWeights.init(cfg, C, seed=seed, zero_unembed=zero, std=0.2)


# ---------------------------------------------------------------- config


def test_defaults():
    c = DiTConfig()
    assert (c.dim, c.heads, c.layers, c.window, c.rope_base) == (128, 4, 4, (4, 8, 8), 1e4)
    assert c.layer_shift(0) == (0, 0, 0) and c.layer_shift(1) == (2, 4, 4)


def test_rope_dims_even_sum():
    for hd in (6, 8, 16, 32, 64, 96):
        dims = rope_dims(hd)
        assert sum(dims) == hd and all(x % 2 == 0 for x in dims)


def test_config_errors():
    with pytest.raises(ValueError):
        DiTConfig(dim=30, heads=4)
    with pytest.raises(ValueError):
        DiTConfig(variant="sparse")


def test_config_json_roundtrip():
    c = DiTConfig(dim=64, heads=2, variant="dense", threads=3)
    assert DiTConfig.from_json(c.to_json()) == c


# ---------------------------------------------------------------- tokens and windows


def test_tokenize_indices(rng):
    ts = tokenize(_latent(rng, 1, 4, 4))
    assert ts.orig_index.tolist() == [[0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1]]


def test_tokenize_zero_latent():
    cfg = replace(SMALL)
    w = _weights(cfg, 6)
    ts = tokenize(LatentTensor(np.zeros((1, 4, 4, 6)), 2), w, cfg)
    assert np.all(ts.tokens == 0.0)


def test_tokenize_one_hot_locality():
    c = np.zeros((1, 4, 6, 6))
    c[0, 3, 4, 2] = 1.0
    ts = tokenize(LatentTensor(c, 2))
    nz = np.flatnonzero(np.any(ts.patches != 0, axis=1))
    assert nz.tolist() == [1 * 3 + 2]


def test_tokenize_odd():
    with pytest.raises(ValueError):
        tokenize(LatentTensor(np.zeros((1, 3, 4, 6)), 2))


def test_windows_single():
    assert np.all(assign_windows((4, 8, 8), (4, 8, 8), (0, 0, 0)) == 0)


def test_windows_split_h():
    ids = assign_windows((4, 16, 8), (4, 8, 8), (0, 0, 0))
    assert len(np.unique(ids)) == 2
    assert np.all(ids[:, :8] == ids[0, 0, 0]) and np.all(ids[:, 8:] == ids[0, 8, 0])


def test_windows_shifted_nine():
    ids = assign_windows((4, 16, 16), (4, 8, 8), (0, 4, 4))
    want = ref.tile_windows((4, 16, 16), (4, 8, 8), (0, 4, 4))
    assert len(np.unique(ids)) == 9
    # same partition, and the same window sizes
    pairs = set(zip(ids.ravel().tolist(), want.ravel().tolist()))
    assert len(pairs) == 9
    assert sorted(np.bincount(ids.ravel())[np.unique(ids)]) == sorted(np.bincount(want.ravel()))
    assert sorted(np.bincount(want.ravel())) == [64] * 4 + [128] * 4 + [256]


@given(st.tuples(*[st.integers(1, 9)] * 3), st.tuples(*[st.integers(1, 5)] * 3), st.data())
def test_windows_match_tiler(grid, window, data):
    shift = tuple(data.draw(st.integers(0, w - 1)) for w in window)
    ids = assign_windows(grid, window, shift)
    want = ref.tile_windows(grid, window, shift)
    assert len(set(zip(ids.ravel().tolist(), want.ravel().tolist()))) == len(np.unique(want))
    assert len(np.unique(ids)) == len(np.unique(want))


def test_route_identity_and_empty(rng):
    ts = tokenize(_latent(rng), cfg=SMALL)
    un, sk = route(ts, SkipMask(np.zeros(ts.grid, bool)))
    assert np.array_equal(un.orig_index, ts.orig_index) and sk.size == 0
    un, sk = route(ts, SkipMask(np.ones(ts.grid, bool)))
    assert len(un) == 0 and sk.size == len(ts)


def test_route_checkerboard():
    cfg = DiTConfig(dim=24, heads=2, layers=2, window=(2, 2, 2))
    ts = tokenize(LatentTensor(np.zeros((4, 8, 8, 6)), 2), cfg=cfg)
    bits = (np.indices(ts.grid).sum(axis=0) % 2).astype(bool)
    un, _ = route(ts, SkipMask(bits))
    for layer in range(cfg.layers):
        full = np.bincount(ts.window_id[layer])
        kept = np.bincount(un.window_id[layer], minlength=full.size)
        if layer == 0:
            assert np.array_equal(kept * 2, full)
        # ids are carried over, not recomputed
        sel = np.flatnonzero(~bits.ravel())
        assert np.array_equal(un.window_id[layer], ts.window_id[layer][sel])
    assert np.all(np.diff(np.ravel_multi_index(un.orig_index.T, ts.grid)) > 0)


def test_route_grid_mismatch(rng):
    ts = tokenize(_latent(rng))
    with pytest.raises(ValueError):
        route(ts, SkipMask(np.zeros((1, 1, 1), bool)))


# ---------------------------------------------------------------- rope


def test_rope_origin_identity(rng):
    v = rng.standard_normal(32)
    np.testing.assert_array_equal(rope_rotate(v, (0, 0, 0), (4, 8, 8), (4, 8, 8)), v)


@given(seeds, st.tuples(st.integers(0, 3), st.integers(0, 7), st.integers(0, 7)))
def test_rope_norm(seed, idx):
    v = np.random.default_rng(seed).standard_normal(32)
    r = rope_rotate(v, idx, (4, 8, 8), (4, 8, 8))
    assert abs(np.linalg.norm(r) - np.linalg.norm(v)) < 1e-9


@given(seeds, st.tuples(st.integers(0, 1), st.integers(0, 3), st.integers(0, 3)),
       st.tuples(st.integers(0, 1), st.integers(0, 3), st.integers(0, 3)),
       st.tuples(st.integers(0, 2), st.integers(0, 4), st.integers(0, 4)))
def test_rope_relative(seed, i, j, delta):
    rng = np.random.default_rng(seed)
    q, k = rng.standard_normal((2, 32))
    grid, window = (4, 8, 8), (4, 8, 8)
    a = rope_rotate(q, i, grid, window) @ rope_rotate(k, j, grid, window)
    i2 = tuple(x + d for x, d in zip(i, delta))
    j2 = tuple(x + d for x, d in zip(j, delta))
    b = rope_rotate(q, i2, grid, window) @ rope_rotate(k, j2, grid, window)
    assert abs(a - b) < 1e-6


def test_rope_window_relative():
    # the same local offset in two different windows gets the same rotation
    v = np.arange(32, dtype=float)
    a = rope_rotate(v, (0, 1, 2), (4, 16, 16), (4, 8, 8))
    b = rope_rotate(v, (0, 9, 10), (4, 16, 16), (4, 8, 8))
    np.testing.assert_array_equal(a, b)


def test_rope_matches_complex_form(rng):
    v = rng.standard_normal((1, 1, 32))
    pos = np.array([[1, 2, 3]])
    want = ref._rope_complex(v, pos, 1e4, rope_dims(32))[0, 0]
    got = rope_rotate(v[0, 0], (1, 2, 3), (4, 8, 8), (4, 8, 8))
    np.testing.assert_allclose(got, want, atol=1e-12)


# ---------------------------------------------------------------- attention


def test_single_token_window(rng):
    q, k, v = rng.standard_normal((3, 1, 2, 4))
    out = attend(q, k, v, np.array([5]), np.array([5]))
    np.testing.assert_array_equal(out, v)


def test_two_token_scalar_oracle():
    q = np.array([[1.0, 0.0, 0.5, -1.0], [0.2, 0.3, -0.4, 0.1]])
    k = np.array([[0.0, 1.0, 1.0, 0.0], [1.0, -1.0, 0.0, 2.0]])
    v = np.array([[1.0, 2.0, 3.0, 4.0], [-1.0, 0.0, 1.0, 0.5]])
    got = attend(q[:, None], k[:, None], v[:, None], np.zeros(2, int), np.zeros(2, int))[:, 0]
    want = ref.softmax_attention(q.tolist(), k.tolist(), v.tolist())
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_attention_isolated_windows(rng):
    q, k, v = rng.standard_normal((3, 6, 1, 4))
    win = np.array([0, 0, 1, 1, 1, 2])
    out = attend(q, k, v, win, win)
    for w in (0, 1, 2):
        idx = np.flatnonzero(win == w)
        want = ref.softmax_attention(q[idx, 0].tolist(), k[idx, 0].tolist(), v[idx, 0].tolist())
        np.testing.assert_allclose(out[idx, 0], want, atol=1e-12)


def test_window_attention_variable_lengths(rng):
    cfg = SMALL
    w = _weights(cfg, 6)
    l = _latent(rng)
    ts = tokenize(l, w, cfg)
    bits = rng.random(ts.grid) < 0.5
    un, _ = route(ts, SkipMask(bits))
    out = window_attention(un, w, 0, cfg)
    assert out.shape == (len(un), cfg.dim)


# ---------------------------------------------------------------- forward


@pytest.mark.parametrize("variant", VARIANTS)
def test_variants_match_reference(rng, variant):
    cfg = replace(SMALL, variant=variant, layers=3)
    l = _latent(rng, 2, 8, 8)
    w = _weights(cfg, 6, seed=3)
    bits = rng.random((2, 4, 4)) < 0.4
    got = dit_forward(l, SkipMask(bits), cfg, w)
    want = ref.masked_dit(l.coeffs, ~bits, w, cfg, variant)
    np.testing.assert_allclose(got.cells.reshape(len(want), -1), want, rtol=1e-9, atol=1e-9)


@pytest.mark.parametrize("variant", VARIANTS)
def test_all_false_collapses_to_dense(rng, variant):
    cfg = replace(SMALL, variant=variant)
    l = _latent(rng)
    w = _weights(cfg, 6, seed=1)
    m = SkipMask(np.zeros((2, 4, 4), bool))
    a = dit_forward(l, m, cfg, w).cells
    b = dit_forward(l, m, replace(cfg, variant="dense"), w).cells
    assert np.abs(a - b).max() <= 1e-5 * np.abs(b).max()


def test_attention_mask_only_same_kept_output(rng):
    # skipped tokens get FFN compute but never reach kept tokens
    l = _latent(rng)
    w = _weights(SMALL, 6, seed=4)
    m = SkipMask(rng.random((2, 4, 4)) < 0.5)
    a = dit_forward(l, m, SMALL, w).cells
    b = dit_forward(l, m, replace(SMALL, variant="attention_mask_only"), w).cells
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_zero_unembed_passthrough(rng):
    l = _latent(rng)
    w = _weights(SMALL, 6, zero=True)
    m = SkipMask(rng.random((2, 4, 4)) < 0.3)
    r = dit_forward(l, m, SMALL, w)
    ts = tokenize(l)
    keep = ~m.bits.ravel()
    np.testing.assert_array_equal(r.cells.reshape(keep.sum(), -1), ts.patches[keep])


def test_only_unskipped_produced(rng):
    l = _latent(rng)
    m = SkipMask(rng.random((2, 4, 4)) < 0.5)
    r = dit_forward(l, m, SMALL, _weights(SMALL, 6))
    assert len(r.orig_index) == int((~m.bits).sum())
    assert not m.bits[tuple(r.orig_index.T)].any()


def test_channel_mismatch(rng):
    with pytest.raises(ValueError):
        dit_forward(_latent(rng, C=9), SkipMask(np.zeros((2, 4, 4), bool)), SMALL,
                    _weights(SMALL, 6))


def test_threads_bitwise(rng):
    cfg = DiTConfig(dim=32, heads=2, layers=2, window=(1, 2, 2))
    l = _latent(rng, 2, 8, 16)
    w = _weights(cfg, 6, seed=9)
    m = SkipMask(rng.random((2, 4, 8)) < 0.4)
    a = dit_forward(l, m, cfg, w).cells
    for threads in (2, 4):
        b = dit_forward(l, m, replace(cfg, threads=threads), w).cells
        assert a.tobytes() == b.tobytes()
    assert a.tobytes() == dit_forward(l, m, cfg, w).cells.tobytes()


@given(seeds)
def test_permutation_safety(seed):
    rng = np.random.default_rng(seed)
    cfg = SMALL
    l = _latent(rng)
    w = _weights(cfg, 6, seed=2)
    m = SkipMask(rng.random((2, 4, 4)) < 0.4)
    ts = tokenize(l, w, cfg)
    un, _ = route(ts, m)
    if len(un) == 0:
        return
    base = run_blocks(un, w, cfg)
    perm = rng.permutation(len(un))
    shuffled = un.select(perm)
    out = run_blocks(shuffled, w, cfg)
    np.testing.assert_allclose(out, base[perm], atol=1e-6)


# ---------------------------------------------------------------- compose


def test_compose_all_true(rng):
    src = _latent(rng)
    m = SkipMask(np.ones((2, 4, 4), bool))
    r = RefinedCells(np.zeros((0, 2, 2, 6)), np.zeros((0, 3), int), (2, 4, 4))
    assert np.array_equal(compose_output(r, src, m).coeffs, src.coeffs)


def test_compose_all_false(rng):
    l, src = _latent(rng), _latent(rng)
    w = _weights(SMALL, 6, seed=5)
    m = SkipMask(np.zeros((2, 4, 4), bool))
    r = dit_forward(l, m, SMALL, w)
    out = compose_output(r, src, m)
    assert np.array_equal(tokenize(out).patches, r.cells.reshape(32, -1))


@given(seeds)
def test_compose_zero_unembed_identity(seed):
    rng = np.random.default_rng(seed)
    l = _latent(rng)
    m = SkipMask(rng.random((2, 4, 4)) < 0.5)
    r = dit_forward(l, m, SMALL, _weights(SMALL, 6, zero=True))
    assert np.array_equal(compose_output(r, l, m).coeffs, l.coeffs)


def test_compose_mismatch(rng):
    l = _latent(rng)
    m = SkipMask(np.zeros((2, 4, 4), bool))
    r = dit_forward(l, m, SMALL, _weights(SMALL, 6))
    with pytest.raises(ValueError):
        compose_output(r, l, SkipMask(np.ones((2, 4, 4), bool)))


# ---------------------------------------------------------------- cost


@given(seeds)
def test_cost_monotone(seed):
    rng = np.random.default_rng(seed)
    grid = (2, 8, 8)
    cfg = DiTConfig()
    order = rng.permutation(np.prod(grid))
    prev_a = prev_f = None
    for k in range(0, order.size + 1, 16):
        skip = np.zeros(np.prod(grid), bool)
        skip[order[:k]] = True
        a = attention_cost(grid, ~skip.reshape(grid), cfg)
        f = flop_cost(grid, ~skip.reshape(grid), cfg, 48)
        if prev_a is not None:
            assert a <= prev_a and f <= prev_f
        prev_a, prev_f = a, f


def test_half_skip_speedup_window():
    # analytic FLOP model for a half-skipped grid lands in [1.3, 2.0 + margin]
    grid = (2, 4, 8)
    bits = np.zeros(grid, bool)
    bits[:, :, :4] = True
    s = estimated_speedup(grid, bits, DiTConfig(), 48)
    assert 1.3 <= s <= 2.1


def test_speedup_all_skipped_none():
    assert estimated_speedup((1, 2, 2), np.ones((1, 2, 2), bool), DiTConfig(), 48) is None


def test_weights_roundtrip(tmp_path):
    cfg = replace(SMALL, dtype="float32")
    w = DiTWeights.init(cfg, 6, zero_unembed=False)
    w.save(tmp_path / "d.json", cfg)
    back, cfg2 = DiTWeights.load(tmp_path / "d.json")
    assert cfg2 == cfg
    for k, v in w.tensors().items():
        assert np.array_equal(back.tensors()[k], v)
