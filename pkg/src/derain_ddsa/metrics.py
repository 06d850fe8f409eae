"""Image quality metrics on the BT.601 luma channel.

Inputs are float arrays scaled to [0, 1].  PSNR uses a peak of 1 and is
capped at 99 dB so identical images compare equal instead of infinite.
SSIM follows the standard single-scale form: 11x11 Gaussian window with
sigma 1.5, K1=0.01, K2=0.03, dynamic range 1, averaged over valid window
positions only (no padding).
"""
from __future__ import annotations

import math

import numpy as np

# BT.601 full-range luma weights
_YR, _YG, _YB = 0.299, 0.587, 0.114

PSNR_CAP = 99.0

_WINDOW = 11
_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


def rgb_to_y(img: np.ndarray) -> np.ndarray:
    """Luma of an RGB image [3, h, w] -> [h, w]."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected [3, h, w] RGB image, got shape {img.shape}")
    return _YR * img[0] + _YG * img[1] + _YB * img[2]


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB between two [0, 1] arrays."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def gaussian_window(size: int = _WINDOW, sigma: float = _SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian kernel (sums to 1)."""
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _windowed_mean(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid-mode weighted local means of a 2-D array."""
    size = kernel.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(x, (size, size))
    return np.tensordot(win, kernel, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity between two single-channel [0, 1] images."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError(f"expected 2-D single-channel images, got shape {a.shape}")
    if min(a.shape) < _WINDOW:
        raise ValueError(
            f"images must be at least {_WINDOW}x{_WINDOW}, got {a.shape}"
        )
    kernel = gaussian_window()
    c1 = (_K1) ** 2
    c2 = (_K2) ** 2
    mu_a = _windowed_mean(a, kernel)
    mu_b = _windowed_mean(b, kernel)
    var_a = _windowed_mean(a * a, kernel) - mu_a * mu_a
    var_b = _windowed_mean(b * b, kernel) - mu_b * mu_b
    cov = _windowed_mean(a * b, kernel) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
