"""End-to-end procedures behind the command-line tools."""
from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from . import codec, metrics
from .oracle import DEFAULT_FACTOR, DEFAULT_TAU, SkipMask, oracle_mask, patch_mse_grid
from .predictor import PredictorNet, predict_mask, predictor_input
from .resample import bilinear_upsample, down_up
from .skipdit import (VARIANTS, DiTConfig, DiTWeights, compose_output, dit_forward,
                      estimated_speedup, flop_cost)
from .vidio import (PATCH_SHAPE, PatchGrid, check_video, compose_patches, extract_patches,
                    reflect_pad)

ANALYSIS_KEEP = codec.BLOCK_SIZE


def _pad_to_patches(v):
    padded, _ = reflect_pad(np.asarray(v, dtype=np.float64), PATCH_SHAPE)
    return padded


def patchwise_down_up(v, factor: int = DEFAULT_FACTOR) -> np.ndarray:
    """``U(D(.))`` applied to each patch on its own, as the skip criterion does.

    Returns the padded reconstruction (whole patches).
    """
    g = extract_patches(check_video(v))
    g = PatchGrid(down_up(g.patches, factor), g.pad, g.patch_shape)
    return compose_patches(g, tuple(n * p for n, p in zip(g.grid_dims, g.patch_shape)))


def swap_experiment(v, mask: SkipMask, factor: int = DEFAULT_FACTOR, keep: int = ANALYSIS_KEEP):
    """Decode the HR latent with skippable cells swapped for the ``U(D(v))`` latent.

    ``U(D(.))`` runs patch by patch so that a swapped patch carries exactly
    the reconstruction error the mask was computed from.  Returns
    ``(swapped, baseline)`` cropped to ``v``'s size, where ``baseline``
    decodes the ``U(D(v))`` latent everywhere.
    """
    v = check_video(v)
    dims = v.shape[:3]
    padded = _pad_to_patches(v)
    pdims = padded.shape[:3]
    l_hr = codec.encode(padded, keep)
    l_ud = codec.encode(patchwise_down_up(v, factor), keep)
    swapped = codec.decode(codec.latent_swap(l_hr, l_ud, mask), pdims)
    baseline = codec.decode(l_ud, pdims)
    T, H, W = dims
    return swapped[:T, :H, :W], baseline[:T, :H, :W]


def analyze_video(v, label: str = "video", tau: float = DEFAULT_TAU, factor: int = DEFAULT_FACTOR,
                  mask: SkipMask | None = None, keep: int = ANALYSIS_KEEP,
                  cfg: DiTConfig | None = None, channels: int = 3 * codec.DEFAULT_KEEP,
                  mask_source: str = "oracle") -> dict:
    """Skippable fraction, swap quality and estimated DiT speedup for one video.

    ``mask`` defaults to the oracle mask.  The speedup is a FLOP-model estimate
    for a DiT with ``cfg`` over ``channels``-channel latents.
    """
    v = check_video(v)
    cfg = cfg or DiTConfig()
    if mask is None:
        mask = oracle_mask(v, tau, factor)
    swapped, baseline = swap_experiment(v, mask, factor, keep)
    q_swap = metrics.quality(swapped, v)
    q_base = metrics.quality(baseline, v)
    grid = mask.grid_dims
    return {
        "label": label,
        "dims": list(v.shape[:3]),
        "grid": list(grid),
        "mask_source": mask_source,
        "skipped_fraction": mask.skipped_fraction,
        "per_frame_fraction": [float(x) for x in mask.stats().per_frame_fraction],
        "swap": q_swap.to_dict(),
        "baseline_ud": q_base.to_dict(),
        "cost": {
            "dense": flop_cost(grid, np.ones(grid, bool), cfg, channels),
            "sparse": flop_cost(grid, ~mask.bits, cfg, channels),
        },
        "speedup": estimated_speedup(grid, mask.bits, cfg, channels),
    }


def predicted_mask_for(v, net: PredictorNet, factor: int = DEFAULT_FACTOR,
                       threshold: float = 0.5, tau: float = DEFAULT_TAU) -> SkipMask:
    """Predictor mask from ``U(D(v))``, i.e. without looking at the HR detail."""
    padded = _pad_to_patches(v)
    keep = net.c_in // 3
    return predict_mask(net, predictor_input(down_up(padded, factor), keep), threshold, tau, factor)


def sweep_video(v, taus, factor: int = DEFAULT_FACTOR, keep: int = ANALYSIS_KEEP) -> list[dict]:
    """One row per threshold: skipped fraction and swap PSNR against ``v``."""
    v = check_video(v)
    taus = sorted(float(t) for t in taus)
    mse = patch_mse_grid(v, factor)
    rows = []
    for tau in taus:
        mask = SkipMask(mse <= tau, tau, factor)
        swapped, _ = swap_experiment(v, mask, factor, keep)
        rows.append({"tau": tau, "skipped_pct": 100.0 * mask.skipped_fraction,
                     "swap_psnr": metrics.psnr(swapped, v)})
    return rows


def super_resolve(lr, net: PredictorNet, weights: DiTWeights, cfg: DiTConfig,
                  scale: int = 4, threshold: float = 0.5, mask: SkipMask | None = None):
    """Upsample, encode, predict skips, refine the rest, compose, decode.

    Returns ``(hr_video, mask, report)``; the report's ``timing`` holds
    per-stage wall times in seconds.
    """
    lr = check_video(lr)
    T, h, w = lr.shape[:3]
    keep = net.c_in // 3
    if weights.patch_dim != 4 * net.c_in:
        raise ValueError(f"DiT expects {weights.patch_dim // 4} latent channels, "
                         f"predictor {net.c_in}")
    times = {}
    t_all = time.perf_counter()

    t0 = time.perf_counter()
    up = upsampled_input(lr, scale)
    times["upsample"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    latent = codec.encode(up, keep)
    times["encode"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if mask is None:
        mask = predict_mask(net, latent, threshold)
    times["predictor"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if mask.bits.all():
        refined = None
    else:
        refined = dit_forward(latent, mask, cfg, weights)
    times["dit"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if refined is None:
        out_latent = latent
    else:
        out_latent = compose_output(refined, latent, mask)
    hr = codec.decode(out_latent, up.shape[:3])[:T, :h * scale, :w * scale]
    times["decode"] = time.perf_counter() - t0
    times["total"] = time.perf_counter() - t_all

    report = {
        "input_dims": [T, h, w],
        "output_dims": list(hr.shape[:3]),
        "scale": scale,
        "variant": cfg.variant,
        "threshold": threshold,
        "grid": list(mask.grid_dims),
        "skipped_fraction": mask.skipped_fraction,
        "tokens_total": int(mask.bits.size),
        "tokens_refined": int(np.count_nonzero(~mask.bits)),
        "timing": times,
    }
    return np.ascontiguousarray(hr), mask, report


def bilinear_path(lr, keep: int, scale: int = 4):
    """What skipped regions receive: decode(encode(U(lr)))."""
    lr = check_video(lr)
    T, h, w = lr.shape[:3]
    up = upsampled_input(lr, scale)
    return codec.decode(codec.encode(up, keep), up.shape[:3])[:T, :h * scale, :w * scale]


def upsampled_input(lr, scale: int = 4) -> np.ndarray:
    """``U(lr)`` reflect-padded to whole patches: what gets encoded at inference."""
    return _pad_to_patches(bilinear_upsample(check_video(lr), scale))


def fraction_mask(grid, fraction: float, seed: int = 0) -> SkipMask:
    """Exactly ``round(fraction * N)`` skipped cells at seeded random positions."""
    n = int(np.prod(grid))
    k = int(round(fraction * n))
    bits = np.zeros(n, dtype=bool)
    bits[np.random.default_rng(seed).permutation(n)[:k]] = True
    return SkipMask(bits.reshape(grid))


def profile_variants(grid=(16, 32, 32), fractions=(0.0, 0.4), variants=VARIANTS, repeats: int = 5,
                     cfg: DiTConfig | None = None, channels: int = 3 * codec.DEFAULT_KEEP,
                     seed: int = 0, warmup: int = 1) -> list[dict]:
    """Wall-clock DiT forward time per variant on random tokens.

    Variants are timed round-robin within each repeat so slow drift in machine
    load affects all of them alike.  Warmup runs are not recorded.
    """
    if repeats < 5:
        raise ValueError("profiling needs at least 5 repeats")
    cfg = cfg or DiTConfig(dtype="float32")
    Gt, Gh, Gw = grid
    rng = np.random.default_rng(seed)
    latent = codec.LatentTensor(
        rng.standard_normal((Gt, 2 * Gh, 2 * Gw, channels)).astype(cfg.dtype), channels // 3)
    weights = DiTWeights.init(cfg, channels, seed=seed, zero_unembed=False)
    rows = []
    for frac in fractions:
        mask = fraction_mask(grid, frac, seed)
        cfgs = {v: replace(cfg, variant=v) for v in variants}
        for v in variants:
            for _ in range(warmup):
                dit_forward(latent, mask, cfgs[v], weights)
        samples = {v: [] for v in variants}
        for _ in range(repeats):
            for v in variants:
                t0 = time.perf_counter()
                dit_forward(latent, mask, cfgs[v], weights)
                samples[v].append(time.perf_counter() - t0)
        for v in variants:
            s = np.array(samples[v])
            rows.append({
                "variant": v, "skip_fraction": float(frac),
                "tokens_total": int(mask.bits.size),
                "tokens_kept": int(np.count_nonzero(~mask.bits)),
                "repeats": repeats, "mean_s": float(s.mean()), "std_s": float(s.std(ddof=1)),
            })
        dense = next((r["mean_s"] for r in rows if r["variant"] == "dense"
                      and r["skip_fraction"] == float(frac)), None)
        for r in rows:
            if r["skip_fraction"] == float(frac):
                r["speedup_vs_dense"] = None if dense is None else dense / r["mean_s"]
    return rows
