"""Image quality metrics on display-referred intensities.

Callers hand in images already gamma-mapped and white-level-restored; both
metrics are plain numpy, not differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CEILING = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class MetricsRow:
    method: str
    gain: str
    psnr: float
    ssim: float


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE), capped at 99 dB so output stays finite."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CEILING
    return min(10.0 * np.log10(peak**2 / mse), PSNR_CEILING)


def _gaussian_window() -> np.ndarray:
    half = SSIM_WINDOW // 2
    x = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(x**2) / (2.0 * SSIM_SIGMA**2))
    w = np.outer(g, g)
    return w / w.sum()


_WINDOW = _gaussian_window()


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean local structural similarity over valid 11x11 windows."""
    a, b = _check_pair(a, b)
    h, w = a.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(
            f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    def smooth(img):
        win = sliding_window_view(img, (SSIM_WINDOW, SSIM_WINDOW))
        return np.tensordot(win, _WINDOW, axes=([2, 3], [0, 1]))

    mu1, mu2 = smooth(a), smooth(b)
    var1 = smooth(a * a) - mu1 * mu1
    var2 = smooth(b * b) - mu2 * mu2
    cov = smooth(a * b) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + c1) * (2.0 * cov + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2)
    return float(np.mean(num / den))
