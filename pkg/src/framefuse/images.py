"""Raster I/O and sampling helpers shared by the pipeline stages."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ManifestError

# Rec.601 luma weights.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


def load_image(path: str | Path) -> np.ndarray:
    """Load an 8-bit PNG or PPM file as float RGB in [0, 1], shape (H, W, 3)."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"image file not found: {path}")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise ManifestError(f"cannot decode image {path}: {exc}") from exc
    return arr / 255.0


def save_image(image: np.ndarray, path: str | Path) -> None:
    """Write a float [0, 1] RGB or gray image as an 8-bit PNG/PPM."""
    arr = np.asarray(image, dtype=np.float64)
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data).save(path)


def save_label_raster(labels: np.ndarray, path: str | Path) -> None:
    """Write an integer label raster as 16-bit grayscale PNG."""
    data = np.asarray(labels)
    if data.min() < 0 or data.max() > np.iinfo(np.uint16).max:
        raise ValueError("label raster does not fit in uint16")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data.astype(np.uint16), mode="I;16").save(path)


def save_indexed(labels: np.ndarray, palette: np.ndarray, path: str | Path) -> None:
    """Write a small-alphabet label raster as a paletted PNG."""
    data = np.asarray(labels).astype(np.uint8)
    im = Image.fromarray(data, mode="P")
    pal = np.zeros((256, 3), dtype=np.uint8)
    pal[: len(palette)] = np.clip(np.rint(np.asarray(palette) * 255.0), 0, 255)
    im.putpalette(pal.ravel().tolist())
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    im.save(path)


def to_luma(image: np.ndarray) -> np.ndarray:
    """Rec.601 luminance of an (H, W, 3) image."""
    return np.asarray(image, dtype=np.float64) @ LUMA_WEIGHTS


def luma_gradient(image: np.ndarray) -> np.ndarray:
    """Central-difference gradient magnitude of the luminance channel."""
    luma = to_luma(image) if image.ndim == 3 else np.asarray(image, dtype=np.float64)
    gy, gx = np.gradient(luma)
    return np.hypot(gx, gy)


def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinearly sample `image` at real coordinates (x, y).

    Coordinates must lie inside [0, W-1] x [0, H-1]; callers mask
    out-of-bounds positions before sampling. Values within 1e-9 of an
    integer grid position reproduce the stored pixel exactly.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    # Snap near-integer coordinates so integer warps stay lossless.
    xr = np.rint(x)
    yr = np.rint(y)
    x = np.where(np.abs(x - xr) <= 1e-9, xr, x)
    y = np.where(np.abs(y - yr) <= 1e-9, yr, y)

    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 1)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(x - x0, 0.0, 1.0)
    fy = np.clip(y - y0, 0.0, 1.0)

    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]

    v00 = img[y0, x0]
    v01 = img[y0, x1]
    v10 = img[y1, x0]
    v11 = img[y1, x1]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy
