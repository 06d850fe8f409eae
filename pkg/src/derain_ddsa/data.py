"""Procedural training data: smooth synthetic "clean" images and additive
rain streaks.

Rain is rendered as bright, slightly blurred line segments tilted between 60
and 120 degrees from horizontal (mostly vertical), added on top of the clean
image and clamped to [0, 1].  Severity scales streak count, length, and
brightness; severity 0 returns the clean image unchanged, bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class ImagePair:
    """One training example: both arrays are [3, h, w] float64 in [0, 1]."""

    rainy: np.ndarray
    clean: np.ndarray


def _bilinear_resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Resize [c, gh, gw] -> [c, h, w] with bilinear interpolation."""
    c, gh, gw = img.shape
    ys = np.linspace(0.0, gh - 1.0, h)
    xs = np.linspace(0.0, gw - 1.0, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
    bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
    return top * (1 - fy) + bot * fy


def gen_clean(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Smooth random scene: coarse colored noise plus a few soft ellipses."""
    gh, gw = max(2, h // 8), max(2, w // 8)
    img = _bilinear_resize(rng.uniform(0.1, 0.9, (3, gh, gw)), h, w)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(h / 8, h / 2), rng.uniform(w / 8, w / 2)
        q = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        soft = 1.0 / (1.0 + np.exp((q - 1.0) * 6.0))       # soft ellipse edge
        color = rng.uniform(0.0, 1.0, 3)
        alpha = rng.uniform(0.2, 0.6)
        img = img * (1 - alpha * soft) + color[:, None, None] * (alpha * soft)
    return np.clip(img, 0.0, 1.0)


def _streak_layer(rng: np.random.Generator, h: int, w: int, severity: float) -> np.ndarray:
    """Accumulated streak intensities in [0, 1], single channel."""
    yy, xx = np.mgrid[0:h, 0:w]
    layer = np.zeros((h, w))
    count = max(1, round(severity * h * w / 64.0))
    angles = []
    for _ in range(count):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        theta = np.deg2rad(rng.uniform(60.0, 120.0))
        angles.append(theta)
        length = rng.uniform(h / 8.0, h / 2.0) * (0.5 + 0.5 * severity)
        sigma = rng.uniform(0.4, 0.9)
        amp = rng.uniform(0.25, 0.7) * severity
        uy, ux = np.sin(theta), np.cos(theta)
        t = np.clip((yy - cy) * uy + (xx - cx) * ux, -length / 2, length / 2)
        dy = yy - (cy + t * uy)
        dx = xx - (cx + t * ux)
        layer += amp * np.exp(-(dy * dy + dx * dx) / (sigma * sigma))
    # short motion blur along the mean streak direction
    mean_theta = float(np.mean(angles))
    ky, kx = np.mgrid[-2:3, -2:3]
    along = ky * np.sin(mean_theta) + kx * np.cos(mean_theta)
    across = -ky * np.cos(mean_theta) + kx * np.sin(mean_theta)
    kernel = np.exp(-(across ** 2) * 2.0) * (np.abs(along) <= 2.5)
    kernel /= kernel.sum()
    layer = ndimage.convolve(layer, kernel, mode="constant")
    return np.clip(layer, 0.0, 1.0)


def synth_rain(
    clean: np.ndarray, rng: np.random.Generator, severity: float = 0.5
) -> np.ndarray:
    """Add rain to a clean [3, h, w] image; result stays in [0, 1].

    The streak layer is non-negative and shared by all channels, so the rainy
    image is >= the clean image everywhere.  severity <= 0 is a bitwise no-op.
    """
    if severity < 0:
        raise ValueError(f"severity must be >= 0, got {severity}")
    if severity == 0:
        return clean.copy()
    _, h, w = clean.shape
    layer = _streak_layer(rng, h, w, severity)
    return np.clip(clean + layer[None, :, :], 0.0, 1.0)


def make_dataset(
    rng: np.random.Generator, count: int, h: int, w: int, severity: float = 0.5
) -> list[ImagePair]:
    """Generate ``count`` rainy/clean pairs from one RNG stream."""
    pairs = []
    for _ in range(count):
        clean = gen_clean(rng, h, w)
        pairs.append(ImagePair(rainy=synth_rain(clean, rng, severity), clean=clean))
    return pairs
