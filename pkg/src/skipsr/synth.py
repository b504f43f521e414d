"""Synthetic test videos with known skippability structure."""
from __future__ import annotations

import numpy as np

from .resample import bilinear_upsample, down_up
from .vidio import PATCH_SHAPE, PatchGrid, compose_patches, extract_patches

PATCH_KINDS = ("constant", "gradient", "smooth", "texture", "noise", "edge")


def constant_video(T, H, W, value=0.5) -> np.ndarray:
    return np.full((T, H, W, 3), value, dtype=np.float64)


def composite_video(T=8, H=64, W=128, seed=0, value=0.5, amplitude=1.0) -> np.ndarray:
    """Left half constant, right half iid uniform noise.

    ``W`` must be a multiple of 32 so each half is a whole number of patch
    columns.  ``amplitude`` scales the noise around ``value``; an array of
    length ``W // 32`` gives each noisy patch column its own amplitude.
    """
    if W % 32 or H % 16 or T % 4:
        raise ValueError("composite video needs T%4 == 0, H%16 == 0, W%32 == 0")
    rng = np.random.default_rng(seed)
    v = constant_video(T, H, W, value)
    half = W // 2
    noise = rng.uniform(-0.5, 0.5, size=(T, H, half, 3))
    amp = np.broadcast_to(np.asarray(amplitude, dtype=np.float64), (half // 16,))
    v[:, :, half:] = np.clip(value + noise * np.repeat(amp, 16)[None, None, :, None], 0.0, 1.0)
    return v


def graded_composite(T=8, H=64, W=256, seed=0) -> np.ndarray:
    """Composite whose noisy columns span amplitudes from 1e-3 to 1 (log spaced)."""
    cols = W // 32
    return composite_video(T, H, W, seed, amplitude=np.logspace(-3, 0, cols))


def noise_video(T, H, W, seed=0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(T, H, W, 3))


def _patch(kind: str, rng: np.random.Generator) -> np.ndarray:
    pt, ph, pw = PATCH_SHAPE
    base = rng.uniform(0.15, 0.85, size=3)
    if kind == "constant":
        return np.broadcast_to(base, (pt, ph, pw, 3)).copy()
    if kind == "gradient":
        slope = rng.uniform(-0.01, 0.01, size=2)
        yy, xx = np.meshgrid(np.arange(ph) - ph / 2, np.arange(pw) - pw / 2, indexing="ij")
        g = base + (slope[0] * yy + slope[1] * xx)[..., None]
        return np.broadcast_to(g, (pt, ph, pw, 3)).copy()
    if kind == "smooth":
        # content that is already band-limited to the coarse grid
        coarse = base + rng.uniform(-0.02, 0.02, size=(pt, ph // 4, pw // 4, 3))
        return bilinear_upsample(coarse, 4)
    if kind == "texture":
        amp = rng.uniform(0.3, 0.6)
        return base + amp * rng.uniform(-0.5, 0.5, size=(pt, ph, pw, 3))
    if kind == "noise":
        return rng.uniform(0.0, 1.0, size=(pt, ph, pw, 3))
    if kind == "edge":
        other = rng.uniform(0.0, 1.0, size=3)
        out = np.broadcast_to(base, (pt, ph, pw, 3)).copy()
        cut = rng.integers(2, pw - 2)
        if rng.random() < 0.5:
            out[:, :, cut:] = other
        else:
            out[:, cut:, :] = other
        return out
    raise ValueError(f"unknown patch kind {kind!r}")


def patchwork_video(grid=(1, 4, 4), seed=0, kinds=PATCH_KINDS, p=None) -> np.ndarray:
    """Video assembled from independently drawn patch types, one per grid cell."""
    rng = np.random.default_rng(seed)
    Gt, Gh, Gw = grid
    pt, ph, pw = PATCH_SHAPE
    v = np.empty((Gt * pt, Gh * ph, Gw * pw, 3))
    for it in range(Gt):
        for ih in range(Gh):
            for iw in range(Gw):
                kind = kinds[rng.choice(len(kinds), p=p)]
                v[it * pt:(it + 1) * pt, ih * ph:(ih + 1) * ph, iw * pw:(iw + 1) * pw] = _patch(kind, rng)
    return np.clip(v, 0.0, 1.0)


def smooth_video(T=8, H=64, W=64, seed=0, factor=4, amplitude=0.5) -> np.ndarray:
    """Low-contrast noise passed through ``U(D(.))`` patch by patch.

    ``U(D(.))`` is not idempotent, so this is not an exact fixed point of the
    criterion; at ``amplitude <= 0.5`` every patch lands well below the
    default threshold (patch MSE mostly 5e-5 to 1e-4).
    """
    x = 0.5 + amplitude * (noise_video(T, H, W, seed) - 0.5)
    g = extract_patches(x)
    g = PatchGrid(down_up(g.patches, factor), g.pad, g.patch_shape)
    return compose_patches(g, (T, H, W))
