import numpy as np
import pytest
from hypothesis import given, strategies as st

from skipsr.resample import area_downsample, bilinear_upsample, down_up

import reference as ref

seeds = st.integers(0, 2**31 - 1)


def test_constant_down():
    v = np.full((2, 8, 8, 3), 0.37)
    assert np.array_equal(area_downsample(v, 4), np.full((2, 2, 2, 3), 0.37))


def test_symmetric_block():
    v = np.array([[0.0, 1.0], [1.0, 0.0]])[None, :, :, None]
    assert area_downsample(v, 2)[0, 0, 0, 0] == 0.5


def test_down_matches_scalar(rng):
    frame = rng.uniform(size=(16, 16, 3))
    np.testing.assert_allclose(area_downsample(frame[None], 4)[0], ref.area_down(frame, 4),
                               atol=1e-7, rtol=0)


def test_down_nondivisible():
    with pytest.raises(ValueError):
        area_downsample(np.zeros((1, 10, 8, 3)), 4)


def test_down_non_pow2_factor(rng):
    frame = rng.uniform(size=(12, 9, 3))
    np.testing.assert_allclose(area_downsample(frame[None], 3)[0], ref.area_down(frame, 3),
                               atol=1e-12)


def test_up_identity(rng):
    v = rng.uniform(size=(2, 5, 6, 3))
    assert np.array_equal(bilinear_upsample(v, 1), v)


def test_up_constant():
    v = np.full((1, 3, 5, 3), 0.81)
    assert np.array_equal(bilinear_upsample(v, 4), np.full((1, 12, 20, 3), 0.81))


def test_up_hand_evaluated():
    v = np.array([[0.0, 1.0], [0.0, 1.0]])[None, :, :, None]
    out = bilinear_upsample(v, 2)[0, :, :, 0]
    for row in out:
        np.testing.assert_allclose(row, [0.0, 0.25, 0.75, 1.0], atol=0)


def test_up_matches_scalar(rng):
    frame = rng.uniform(size=(4, 5, 3))
    np.testing.assert_allclose(bilinear_upsample(frame[None], 4)[0], ref.bilinear_up(frame, 4),
                               atol=1e-12)


def test_temporal_untouched(rng):
    v = rng.uniform(size=(3, 8, 8, 3))
    assert down_up(v, 4).shape == v.shape
    for t in range(3):
        np.testing.assert_array_equal(down_up(v, 4)[t], down_up(v[t:t + 1], 4)[0])


@given(st.floats(0, 1), st.sampled_from([2, 4, 8]))
def test_down_up_constant_exact(c, f):
    v = np.full((2, 16, 16, 3), c)
    assert np.array_equal(down_up(v, f), v)


@given(seeds, st.sampled_from([2, 4]))
def test_range_preserved(seed, f):
    v = np.random.default_rng(seed).uniform(size=(1, 8, 16, 3))
    for out in (area_downsample(v, f), bilinear_upsample(v, f), down_up(v, f)):
        assert out.min() >= v.min() - 1e-15 and out.max() <= v.max() + 1e-15


def test_idempotent_on_ramp_interior():
    # an affine ramp survives U(D(.)) exactly wherever no edge clamping is involved
    f = 4
    x = np.arange(64, dtype=float) / 64.0
    v = np.broadcast_to(0.2 + 0.5 * x[None, :, None], (16, 64, 3))[None]
    once = down_up(v, f)
    twice = down_up(once, f)
    np.testing.assert_allclose(once[..., f:-f, :], v[..., f:-f, :], atol=1e-12)
    np.testing.assert_allclose(twice[..., 2 * f:-2 * f, :], once[..., 2 * f:-2 * f, :], atol=1e-12)


def test_not_idempotent_on_noise(rng):
    # U(D(.)) is a smoother, not a projector: a second pass keeps changing things
    v = rng.uniform(size=(1, 16, 16, 3))
    once = down_up(v, 4)
    assert np.abs(down_up(once, 4) - once).max() > 1e-3


@given(seeds)
def test_block_shift_equivariance(seed):
    # shifting content by the factor shifts the reconstruction by the same amount
    f = 4
    v = np.random.default_rng(seed).uniform(size=(1, 32, 32, 3))
    shifted = np.roll(v, f, axis=2)
    a = down_up(shifted, f)[:, :, 2 * f:-2 * f]
    b = np.roll(down_up(v, f), f, axis=2)[:, :, 2 * f:-2 * f]
    np.testing.assert_allclose(a, b, atol=1e-12)
