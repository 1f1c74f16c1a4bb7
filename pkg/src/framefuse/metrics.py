"""Image quality metrics and template tracking for evaluation."""

from __future__ import annotations

import numpy as np
from skimage.metrics import structural_similarity

from .errors import FramefuseError
from .images import to_luma


def evaluate(pred: np.ndarray, truth: np.ndarray) -> dict:
    """SSIM, MSE, and PSNR between two float [0, 1] RGB images.

    SSIM is computed on luminance with an 11x11 Gaussian window
    (sigma 1.5) and the standard stability constants; MSE averages over
    all channels and PSNR follows from it (infinite for identical
    frames).
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise FramefuseError(
            f"cannot compare images of shapes {pred.shape} and {truth.shape}"
        )
    ssim = structural_similarity(
        to_luma(pred),
        to_luma(truth),
        gaussian_weights=True,
        sigma=1.5,
        use_sample_covariance=False,
        data_range=1.0,
    )
    mse = float(((pred - truth) ** 2).mean())
    psnr = float("inf") if mse == 0 else float(10.0 * np.log10(1.0 / mse))
    return {"ssim": float(ssim), "mse": mse, "psnr": psnr}


def _ncc(template: np.ndarray, window: np.ndarray) -> float:
    t = template - template.mean()
    w = window - window.mean()
    denom = np.sqrt((t * t).sum() * (w * w).sum())
    if denom < 1e-12:
        return -1.0
    return float((t * w).sum() / denom)


def _quadratic_peak(c_minus: float, c0: float, c_plus: float) -> float:
    denom = c_minus - 2.0 * c0 + c_plus
    if abs(denom) < 1e-12:
        return 0.0
    shift = 0.5 * (c_minus - c_plus) / denom
    return float(np.clip(shift, -0.5, 0.5))


def track_trajectory(
    frames: list[np.ndarray],
    start: tuple[float, float],
    patch_radius: int = 7,
    search_radius: int = 8,
    min_correlation: float = 0.5,
) -> tuple[np.ndarray, bool]:
    """Track a template patch through a frame list.

    The template is cut around `start` in the first frame and matched by
    normalized cross-correlation in a local window around the previous
    position, with a quadratic fit for subpixel precision. Returns the
    per-frame positions (truncated at the failure point) and a lost
    flag, raised when the correlation peak collapses or the template is
    textureless.
    """
    if not frames:
        raise FramefuseError("cannot track through an empty frame list")
    grays = [to_luma(f) if f.ndim == 3 else np.asarray(f, float) for f in frames]
    h, w = grays[0].shape
    r = patch_radius

    x0, y0 = int(round(start[0])), int(round(start[1]))
    if not (r <= x0 < w - r and r <= y0 < h - r):
        raise FramefuseError("start point too close to the frame border")
    template = grays[0][y0 - r : y0 + r + 1, x0 - r : x0 + r + 1]
    if template.std() < 1e-6:
        return np.array([start], dtype=np.float64), True

    positions = [np.asarray(start, dtype=np.float64)]
    for gray in grays[1:]:
        cx, cy = positions[-1]
        cx, cy = int(round(cx)), int(round(cy))
        scores = np.full((2 * search_radius + 1, 2 * search_radius + 1), -np.inf)
        for dy in range(-search_radius, search_radius + 1):
            for dx in range(-search_radius, search_radius + 1):
                px, py = cx + dx, cy + dy
                if not (r <= px < w - r and r <= py < h - r):
                    continue
                window = gray[py - r : py + r + 1, px - r : px + r + 1]
                scores[dy + search_radius, dx + search_radius] = _ncc(template, window)
        best = np.unravel_index(np.argmax(scores), scores.shape)
        peak = scores[best]
        if not np.isfinite(peak) or peak < min_correlation:
            return np.array(positions), True
        by, bx = best
        sub_x = sub_y = 0.0
        if 0 < bx < scores.shape[1] - 1 and np.isfinite(scores[by, bx - 1]) and np.isfinite(scores[by, bx + 1]):
            sub_x = _quadratic_peak(scores[by, bx - 1], peak, scores[by, bx + 1])
        if 0 < by < scores.shape[0] - 1 and np.isfinite(scores[by - 1, bx]) and np.isfinite(scores[by + 1, bx]):
            sub_y = _quadratic_peak(scores[by - 1, bx], peak, scores[by + 1, bx])
        positions.append(
            np.array(
                [
                    cx + bx - search_radius + sub_x,
                    cy + by - search_radius + sub_y,
                ]
            )
        )
    return np.array(positions), False
