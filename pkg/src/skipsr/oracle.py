"""Ground-truth skippability masks from high-resolution video.

A ``4x16x16`` patch is skippable when the mean squared error between it and
its area-downsample / bilinear-upsample reconstruction is at most ``tau``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .resample import down_up
from .vidio import extract_patches

DEFAULT_TAU = 0.0002
DEFAULT_FACTOR = 4

MASK_MAGIC = b"SKPM"
MASK_VERSION = 1
_MASK_HEADER = struct.Struct("<4sBIIIdI")


@dataclass
class SkipMask:
    """Binary grid over patches; ``True`` means the patch is skipped."""

    bits: np.ndarray
    tau: float = DEFAULT_TAU
    factor: int = DEFAULT_FACTOR

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 3:
            raise ValueError(f"mask must be 3-D (Gt, Gh, Gw), got {self.bits.shape}")

    @property
    def grid_dims(self) -> tuple[int, int, int]:
        return tuple(self.bits.shape)

    @property
    def skipped_fraction(self) -> float:
        return float(self.bits.mean()) if self.bits.size else 0.0

    def __eq__(self, other):
        if not isinstance(other, SkipMask):
            return NotImplemented
        return (self.tau == other.tau and self.factor == other.factor
                and np.array_equal(self.bits, other.bits))

    def stats(self) -> "MaskStats":
        per_frame = self.bits.reshape(self.bits.shape[0], -1).mean(axis=1)
        return MaskStats(self.skipped_fraction, per_frame, self.tau, self.factor)


@dataclass
class MaskStats:
    skipped_fraction: float
    per_frame_fraction: np.ndarray = field(repr=False)
    tau: float
    factor: int


def patch_mse(p: np.ndarray, f: int = DEFAULT_FACTOR) -> np.ndarray:
    """Reconstruction MSE of one patch, or of a stack of patches.

    ``p`` has shape ``(..., 4, 16, 16, 3)``; the mean is taken over the last
    four axes, so a stack yields one value per patch.
    """
    p = np.asarray(p, dtype=np.float64)
    err = p - down_up(p, f)
    return np.mean(err * err, axis=(-4, -3, -2, -1))


def patch_mse_grid(v: np.ndarray, f: int = DEFAULT_FACTOR) -> np.ndarray:
    """Per-patch MSE over the whole patch grid, shape ``(Gt, Gh, Gw)``."""
    return patch_mse(extract_patches(v).patches, f)


def oracle_mask(v: np.ndarray, tau: float = DEFAULT_TAU, f: int = DEFAULT_FACTOR) -> SkipMask:
    if tau < 0:
        raise ValueError("tau must be non-negative")
    return SkipMask(patch_mse_grid(v, f) <= tau, tau=float(tau), factor=int(f))


def threshold_sweep(v: np.ndarray, taus, f: int = DEFAULT_FACTOR) -> list[tuple[float, float]]:
    taus = [float(t) for t in taus]
    if any(b < a for a, b in zip(taus, taus[1:])):
        raise ValueError("taus must be sorted ascending")
    mse = patch_mse_grid(v, f)
    return [(t, float(np.mean(mse <= t))) for t in taus]


# --------------------------------------------------------------------------
# mask file: "SKPM" | u8 version | u32 Gt Gh Gw | f64 tau | u32 factor | bits


def write_mask(path, m: SkipMask) -> None:
    Gt, Gh, Gw = m.grid_dims
    head = _MASK_HEADER.pack(MASK_MAGIC, MASK_VERSION, Gt, Gh, Gw, float(m.tau), int(m.factor))
    body = np.packbits(m.bits.ravel(), bitorder="little").tobytes()
    Path(path).write_bytes(head + body)


def read_mask(path) -> SkipMask:
    data = Path(path).read_bytes()
    if len(data) < _MASK_HEADER.size:
        raise ValueError("mask file truncated")
    magic, ver, Gt, Gh, Gw, tau, factor = _MASK_HEADER.unpack_from(data)
    if magic != MASK_MAGIC:
        raise ValueError(f"bad mask magic {magic!r}")
    if ver != MASK_VERSION:
        raise ValueError(f"unsupported mask version {ver}")
    n = Gt * Gh * Gw
    body = np.frombuffer(data, dtype=np.uint8, offset=_MASK_HEADER.size)
    if body.size != (n + 7) // 8:
        raise ValueError("mask bit payload has wrong length")
    bits = np.unpackbits(body, count=n, bitorder="little").astype(bool)
    return SkipMask(bits.reshape(Gt, Gh, Gw), tau=tau, factor=factor)
