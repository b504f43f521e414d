import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from skipsr import metrics

import reference as ref

seeds = st.integers(0, 2**31 - 1)


def _ssim_scalar(a, b):
    # one grey image, brute-force 11x11 Gaussian windows
    x = np.arange(11) - 5.0
    g1 = np.exp(-x * x / (2 * 1.5 ** 2))
    g = np.outer(g1, g1)
    g /= g.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    H, W = a.shape
    vals = []
    for i in range(H - 10):
        for j in range(W - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = (g * pa).sum(), (g * pb).sum()
            va = (g * (pa - ma) ** 2).sum()
            vb = (g * (pb - mb) ** 2).sum()
            cov = (g * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2)
                        / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_psnr_identical_cap(rng):
    v = rng.uniform(size=(2, 8, 8, 3))
    assert metrics.psnr(v, v) == 99.0


def test_psnr_offset_20db():
    a = np.full((1, 4, 4, 3), 0.2)
    assert math.isclose(metrics.psnr(a, a + 0.1), 20.0, abs_tol=1e-9)


def test_psnr_scalar(rng):
    a, b = rng.uniform(size=(2, 2, 5, 6, 3))
    assert abs(metrics.psnr(a, b) - ref.psnr(a, b)) <= 1e-6


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        metrics.psnr(np.zeros((1, 2, 2, 3)), np.zeros((1, 2, 3, 3)))


def test_ssim_identical(rng):
    v = rng.uniform(size=(2, 16, 16, 3))
    assert metrics.ssim(v, v) == 1.0


def test_ssim_constants_closed_form():
    a = np.full((1, 16, 16, 3), 0.5)
    b = np.full((1, 16, 16, 3), 0.6)
    want = (2 * 0.5 * 0.6 + 1e-4) / (0.5 ** 2 + 0.6 ** 2 + 1e-4)
    assert math.isclose(metrics.ssim(a, b), want, rel_tol=1e-9)
    assert math.isclose(want, 0.6001 / 0.6101, rel_tol=1e-12)


def test_ssim_anticorrelated():
    yy, xx = np.indices((16, 16))
    chk = np.where((yy + xx) % 2, 0.05, -0.05)
    a = np.repeat((0.5 + chk)[None, :, :, None], 3, axis=-1)
    b = np.repeat((0.5 - chk)[None, :, :, None], 3, axis=-1)
    assert metrics.ssim(a, b) < 0


def test_ssim_scalar(rng):
    a, b = rng.uniform(size=(2, 1, 13, 14, 3))
    want = np.mean([_ssim_scalar(a[0, ..., c], b[0, ..., c]) for c in range(3)])
    assert abs(metrics.ssim(a, b) - want) < 1e-10


def test_ssim_small_frame():
    with pytest.raises(ValueError):
        metrics.ssim(np.zeros((1, 10, 16, 3)), np.zeros((1, 10, 16, 3)))


@given(seeds)
def test_symmetry(seed):
    a, b = np.random.default_rng(seed).uniform(size=(2, 1, 12, 12, 3))
    assert metrics.ssim(a, b) == metrics.ssim(b, a)
    assert metrics.psnr(a, b) == metrics.psnr(b, a)


@given(st.floats(1e-9, 1.0), st.floats(1e-9, 1.0))
def test_psnr_strictly_decreasing(m1, m2):
    if m1 < m2:
        assert metrics.psnr_from_mse(m1) > metrics.psnr_from_mse(m2)


@given(seeds)
def test_ssim_range(seed):
    a, b = np.random.default_rng(seed).uniform(size=(2, 1, 12, 12, 3))
    assert -1.0 <= metrics.ssim(a, b) <= 1.0


def test_quality_report(rng):
    a, b = rng.uniform(size=(2, 1, 12, 12, 3))
    q = metrics.quality(a, b)
    assert set(q.to_dict()) == {"psnr", "ssim", "mse"}
    assert q.psnr == metrics.psnr(a, b)
