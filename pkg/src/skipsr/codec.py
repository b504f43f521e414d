"""Orthonormal 3-D Haar block codec used in place of a learned video VAE.

Each ``4x8x8`` pixel block of each color channel is transformed with a
separable orthonormal Haar basis and truncated to its ``keep`` lowest-frequency
coefficients.  The latent therefore has ``t = ceil(T/4)``, ``h = ceil(H/8)``,
``w = ceil(W/8)`` cells and ``C = 3 * keep`` channels, laid out channel-major
(``c * keep + k``).
"""
from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .vidio import check_video, reflect_pad

BLOCK = (4, 8, 8)
BLOCK_SIZE = 4 * 8 * 8
DEFAULT_KEEP = 16

LATENT_MAGIC = b"SKPL"
_LATENT_HEADER = struct.Struct("<4sIIIII")


@lru_cache(maxsize=None)
def haar_matrix(n: int) -> np.ndarray:
    """Orthonormal Haar analysis matrix; row 0 is DC, then coarse to fine."""
    if n == 1:
        return np.ones((1, 1))
    if n & (n - 1):
        raise ValueError(f"Haar size must be a power of two, got {n}")
    h = haar_matrix(n // 2)
    top = np.kron(h, [1.0, 1.0])
    bot = np.kron(np.eye(n // 2), [1.0, -1.0])
    m = np.vstack([top, bot]) / np.sqrt(2.0)
    m.setflags(write=False)
    return m


def subband_level(i: int) -> int:
    return 0 if i == 0 else int(i).bit_length()


@lru_cache(maxsize=None)
def coefficient_order() -> np.ndarray:
    """Flat indices into a ``4x8x8`` coefficient block, lowest frequency first.

    Sorted by the sum of per-axis subband levels, ties broken by the
    (t, h, w) coefficient index.
    """
    idx = itertools.product(*(range(n) for n in BLOCK))
    ranked = sorted(idx, key=lambda c: (sum(subband_level(i) for i in c), c))
    order = np.array([np.ravel_multi_index(c, BLOCK) for c in ranked], dtype=np.intp)
    order.setflags(write=False)
    return order


def _apply(x: np.ndarray, m: np.ndarray, axis: int) -> np.ndarray:
    # Explicit accumulation instead of matmul: every block goes through the
    # same elementwise sequence, so results never depend on array layout.
    x = np.moveaxis(x, axis, -1)
    acc = x[..., :1] * m[:, 0]
    for k in range(1, m.shape[1]):
        acc = acc + x[..., k:k + 1] * m[:, k]
    return np.moveaxis(acc, -1, axis)


def _forward_blocks(blocks: np.ndarray) -> np.ndarray:
    for ax, n in zip((-3, -2, -1), BLOCK):
        blocks = _apply(blocks, haar_matrix(n), ax)
    return blocks


def _inverse_blocks(coeffs: np.ndarray) -> np.ndarray:
    for ax, n in zip((-3, -2, -1), BLOCK):
        coeffs = _apply(coeffs, haar_matrix(n).T, ax)
    return coeffs


@dataclass
class LatentTensor:
    coeffs: np.ndarray  # (t, h, w, 3 * keep)
    keep: int

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return tuple(self.coeffs.shape)

    @property
    def channels(self) -> int:
        return self.coeffs.shape[-1]

    def copy(self) -> "LatentTensor":
        return LatentTensor(self.coeffs.copy(), self.keep)


def latent_dims(video_dims) -> tuple[int, int, int]:
    return tuple(-(-d // b) for d, b in zip(video_dims, BLOCK))


def encode(v: np.ndarray, keep: int = DEFAULT_KEEP) -> LatentTensor:
    v = check_video(v)
    if not 1 <= keep <= BLOCK_SIZE:
        raise ValueError(f"keep must be in [1, {BLOCK_SIZE}], got {keep}")
    padded, _ = reflect_pad(np.asarray(v, dtype=np.float64), BLOCK)
    T, H, W, C = padded.shape
    t, h, w = T // 4, H // 8, W // 8
    blocks = padded.reshape(t, 4, h, 8, w, 8, C).transpose(0, 2, 4, 6, 1, 3, 5)
    coeffs = _forward_blocks(blocks).reshape(t, h, w, C, BLOCK_SIZE)
    kept = coeffs[..., coefficient_order()[:keep]]
    return LatentTensor(np.ascontiguousarray(kept.reshape(t, h, w, C * keep)), keep)


def decode(l: LatentTensor, dims, clamp: bool = True) -> np.ndarray:
    T, H, W = dims
    t, h, w, C = l.dims
    if (t, h, w) != latent_dims(dims) or C % l.keep:
        raise ValueError(f"latent {l.dims} does not match video dims {tuple(dims)}")
    nc = C // l.keep
    full = np.zeros((t, h, w, nc, BLOCK_SIZE))
    full[..., coefficient_order()[:l.keep]] = l.coeffs.reshape(t, h, w, nc, l.keep)
    blocks = _inverse_blocks(full.reshape(t, h, w, nc, *BLOCK))
    video = blocks.transpose(0, 4, 1, 5, 2, 6, 3).reshape(t * 4, h * 8, w * 8, nc)
    video = video[:T, :H, :W]
    if clamp:
        video = np.clip(video, 0.0, 1.0)
    return np.ascontiguousarray(video)


def mask_to_cells(bits: np.ndarray, latent_hw) -> np.ndarray:
    """Expand a patch mask to latent resolution (each patch -> 1x2x2 cells)."""
    h, w = latent_hw
    up = np.repeat(np.repeat(bits, 2, axis=1), 2, axis=2)
    return up[:, :h, :w]


def check_mask_grid(mask_dims, latent: LatentTensor) -> None:
    t, h, w, _ = latent.dims
    expected = (t, -(-h // 2), -(-w // 2))
    if tuple(mask_dims) != expected:
        raise ValueError(f"mask grid {tuple(mask_dims)} does not fit latent {latent.dims}")


def latent_swap(l_hr: LatentTensor, l_ud: LatentTensor, m) -> LatentTensor:
    """Replace the skippable cells of ``l_hr`` with those of ``l_ud``."""
    if l_hr.dims != l_ud.dims or l_hr.keep != l_ud.keep:
        raise ValueError(f"latent shapes differ: {l_hr.dims} vs {l_ud.dims}")
    check_mask_grid(m.grid_dims, l_hr)
    cells = mask_to_cells(m.bits, l_hr.dims[1:3])
    out = np.where(cells[..., None], l_ud.coeffs, l_hr.coeffs)
    return LatentTensor(out, l_hr.keep)


# --------------------------------------------------------------------------
# latent file: "SKPL" | u32 t h w C | u32 keep | f32 coefficients


def write_latent(path, l: LatentTensor) -> None:
    head = _LATENT_HEADER.pack(LATENT_MAGIC, *l.dims, l.keep)
    Path(path).write_bytes(head + np.ascontiguousarray(l.coeffs, dtype="<f4").tobytes())


def read_latent(path) -> LatentTensor:
    data = Path(path).read_bytes()
    magic, t, h, w, C, keep = _LATENT_HEADER.unpack_from(data)
    if magic != LATENT_MAGIC:
        raise ValueError(f"bad latent magic {magic!r}")
    coeffs = np.frombuffer(data, dtype="<f4", offset=_LATENT_HEADER.size)
    if coeffs.size != t * h * w * C:
        raise ValueError("latent payload has wrong length")
    return LatentTensor(coeffs.reshape(t, h, w, C).astype(np.float64), keep)
