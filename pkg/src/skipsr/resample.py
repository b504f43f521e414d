"""Spatial area downsampling and half-pixel bilinear upsampling.

Both operate on the two spatial axes of arrays shaped ``(..., H, W, C)``;
leading axes (frames, patches) are left alone.
"""
from __future__ import annotations

import numpy as np


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def _block_sum(x: np.ndarray, f: int, axis: int) -> np.ndarray:
    # Pairwise tree for power-of-two factors keeps sums of equal values exact.
    if _is_pow2(f):
        while f > 1:
            lo = np.take(x, np.arange(0, x.shape[axis], 2), axis=axis)
            hi = np.take(x, np.arange(1, x.shape[axis], 2), axis=axis)
            x = lo + hi
            f //= 2
        return x
    shape = list(x.shape)
    shape[axis:axis + 1] = [shape[axis] // f, f]
    return x.reshape(shape).sum(axis=axis + 1)


def area_downsample(v: np.ndarray, f: int) -> np.ndarray:
    """Mean over each ``f x f`` spatial block."""
    v = np.asarray(v, dtype=np.float64)
    if f < 1:
        raise ValueError(f"factor must be >= 1, got {f}")
    H, W = v.shape[-3], v.shape[-2]
    if H % f or W % f:
        raise ValueError(f"spatial dims {H}x{W} not divisible by factor {f}")
    if f == 1:
        return v.copy()
    # Strided-slice pairing in _block_sum requires contiguous f-blocks, which
    # holds because index 2k and 2k+1 belong to the same block at every level.
    s = _block_sum(_block_sum(v, f, v.ndim - 3), f, v.ndim - 2)
    return s / float(f * f)


def _taps(n_src: int, f: int):
    xd = np.arange(n_src * f, dtype=np.float64)
    xs = np.clip((xd + 0.5) / f - 0.5, 0.0, n_src - 1)
    i0 = np.floor(xs).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, xs - i0


def _lerp_axis(x: np.ndarray, f: int, axis: int) -> np.ndarray:
    i0, i1, w = _taps(x.shape[axis], f)
    a = np.take(x, i0, axis=axis)
    b = np.take(x, i1, axis=axis)
    shape = [1] * x.ndim
    shape[axis] = -1
    return a + w.reshape(shape) * (b - a)


def bilinear_upsample(v: np.ndarray, f: int) -> np.ndarray:
    """Separable bilinear upsampling, align-corners-false, edge clamped."""
    v = np.asarray(v, dtype=np.float64)
    if f < 1:
        raise ValueError(f"factor must be >= 1, got {f}")
    if f == 1:
        return v.copy()
    out = _lerp_axis(v, f, v.ndim - 3)
    return _lerp_axis(out, f, v.ndim - 2)


def down_up(v: np.ndarray, f: int) -> np.ndarray:
    """``U(D(v))``: the cheap reconstruction skipped regions receive."""
    return bilinear_upsample(area_downsample(v, f), f)
