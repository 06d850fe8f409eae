"""PNG loading/saving and the float <-> byte conventions.

Images travel through the package as [3, h, w] float64 arrays in [0, 1].
Byte conversion rounds half-up (floor(v * 255 + 0.5)), which makes the
byte -> float -> byte round trip exact.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


class ImageError(RuntimeError):
    """Raised for unreadable or undecodable image files."""


def u8_to_float(b: np.ndarray) -> np.ndarray:
    return np.asarray(b, dtype=np.float64) / 255.0


def float_to_u8(x: np.ndarray) -> np.ndarray:
    """Round-half-up quantization of [0, 1] floats to bytes."""
    return np.clip(np.floor(x * 255.0 + 0.5), 0.0, 255.0).astype(np.uint8)


def load_image(path: str | Path) -> np.ndarray:
    """Read a PNG as [3, h, w] float64 in [0, 1]; non-RGB files are converted."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.uint8)
    except FileNotFoundError:
        raise ImageError(f"image not found: {path}")
    except Exception as exc:
        raise ImageError(f"cannot decode image {path}: {exc}")
    return u8_to_float(arr.transpose(2, 0, 1))


def save_image(path: str | Path, img: np.ndarray) -> None:
    """Write a [3, h, w] float image in [0, 1] as an 8-bit RGB PNG."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected [3, h, w] image, got shape {img.shape}")
    arr = float_to_u8(img).transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(Path(path), format="PNG")


def pad_to_multiple(img: np.ndarray, multiple: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad bottom/right so both spatial dims divide ``multiple``.

    Returns the padded image and the original (h, w) for :func:`crop_to`.
    """
    _, h, w = img.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        img = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    return img, (h, w)


def crop_to(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    return img[:, :h, :w]
