"""Full-reference quality metrics on unit-range video."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 99.0
MSE_FLOOR = 1e-10

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class QualityReport:
    psnr: float
    ssim: float
    mse: float

    def to_dict(self):
        return asdict(self)


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    d = a - b
    return float(np.mean(d * d))


def psnr_from_mse(m: float) -> float:
    if m <= MSE_FLOOR:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / m))


def psnr(a, b) -> float:
    """PSNR in dB with peak 1; identical inputs give the 99 dB cap."""
    return psnr_from_mse(mse(a, b))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # x: (..., H, W); separable valid-mode correlation
    n = g.size
    x = sliding_window_view(x, n, axis=-2) @ g
    return sliding_window_view(x, n, axis=-1) @ g


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """SSIM map for single-channel images shaped ``(..., H, W)``."""
    g = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    # variance by subtraction can overshoot the bound by a few ulps
    return np.clip(num / den, -1.0, 1.0)


def ssim(a, b) -> float:
    """Mean SSIM over frames and channels of two ``(T, H, W, 3)`` videos."""
    a, b = _pair(a, b)
    if a.shape[-3] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise ValueError(f"frames must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    # channels to the front so the filter sees (..., H, W)
    a = np.moveaxis(a, -1, 0)
    b = np.moveaxis(b, -1, 0)
    per_image = ssim_map(a, b).mean(axis=(-2, -1))
    return float(per_image.mean())


def quality(a, b) -> QualityReport:
    m = mse(a, b)
    return QualityReport(psnr=psnr_from_mse(m), ssim=ssim(a, b), mse=m)
