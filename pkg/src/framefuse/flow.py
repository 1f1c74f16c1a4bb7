"""Optical flow I/O, estimation fallback, and correspondence validation.

Flow fields are float32 arrays of shape (H, W, 2) holding (u, v) pixel
displacements, serialized in the common binary interchange layout:
little-endian float32 sanity tag 202021.25, int32 width, int32 height,
then row-major interleaved (u, v) float32 pairs.

Validation compares small patches around every correspondence a field
proposes and converts the worst mean-squared color difference into a
per-pixel reliability weight in [0, 1], with a forward/backward
consistency test zeroing weights at inconsistent pixels.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from scipy.ndimage import median_filter, uniform_filter

from .errors import FlowFileError, MissingFlowError
from .images import bilinear_sample, to_luma
from .sequence import SLOT_REF_NEXT, SLOT_REF_PREV, SLOT_SOURCE

log = logging.getLogger(__name__)

FLO_TAG = np.float32(202021.25)

# Mean-squared patch difference at which the reliability weight crosses
# the region-classification threshold 0.96 for sigma_m = 0.05.
DEFAULT_SIGMA_M = 0.05
DEFAULT_TAU_FB = 1.0
DEFAULT_PATCH_RADIUS = 3


def read_flow(path: str | Path) -> np.ndarray:
    """Read a binary flow file into a float32 (H, W, 2) array."""
    path = Path(path)
    if not path.is_file():
        raise FlowFileError(f"flow file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 12:
        raise FlowFileError(f"flow file truncated (header): {path}")
    tag = np.frombuffer(raw, dtype="<f4", count=1)[0]
    if tag != FLO_TAG:
        raise FlowFileError(f"flow file has bad sanity tag {tag!r}: {path}")
    width, height = struct.unpack_from("<ii", raw, 4)
    if width <= 0 or height <= 0:
        raise FlowFileError(f"flow file has invalid dimensions {width}x{height}: {path}")
    expected = 12 + 8 * width * height
    if len(raw) != expected:
        raise FlowFileError(
            f"flow file payload is {len(raw) - 12} bytes, expected "
            f"{expected - 12}: {path}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(height, width, 2)
    if not np.isfinite(data).all():
        raise FlowFileError(f"flow file contains non-finite values: {path}")
    return data.copy()


def write_flow(field: np.ndarray, path: str | Path) -> None:
    """Write a float (H, W, 2) flow field; round-trips bit-exactly."""
    field = np.asarray(field)
    if field.ndim != 3 or field.shape[2] != 2:
        raise FlowFileError(f"flow field must be (H, W, 2), got {field.shape}")
    if not np.isfinite(field).all():
        raise FlowFileError("refusing to write non-finite flow field")
    height, width = field.shape[:2]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(FLO_TAG.tobytes())
        fh.write(struct.pack("<ii", width, height))
        fh.write(np.ascontiguousarray(field, dtype="<f4").tobytes())


@dataclass
class FlowBundle:
    """All pairwise flows a synthesis task consumes.

    Names encode direction: `src_to_ref_prev` maps source pixels onto the
    earlier reference frame. The first six fields are required for
    synthesis. The last three connect same-lens neighbors two stream
    steps away; they only feed the segmentation motion channel and are
    optional.
    """

    src_to_ref_prev: np.ndarray | None = None
    src_to_ref_next: np.ndarray | None = None
    ref_prev_to_ref_next: np.ndarray | None = None
    ref_next_to_ref_prev: np.ndarray | None = None
    ref_prev_to_src: np.ndarray | None = None
    ref_next_to_src: np.ndarray | None = None
    src_to_src_prev: np.ndarray | None = None
    src_to_src_next: np.ndarray | None = None
    ref_next_to_ref_next2: np.ndarray | None = None

    CORE = (
        "src_to_ref_prev",
        "src_to_ref_next",
        "ref_prev_to_ref_next",
        "ref_next_to_ref_prev",
        "ref_prev_to_src",
        "ref_next_to_src",
    )

    def present(self) -> list[str]:
        return [f.name for f in fields(self) if getattr(self, f.name) is not None]

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise MissingFlowError(missing)

    def validate_shapes(self) -> None:
        shape = None
        for name in self.present():
            field = getattr(self, name)
            if field.ndim != 3 or field.shape[2] != 2:
                raise FlowFileError(f"bundle field {name} must be (H, W, 2)")
            if shape is None:
                shape = field.shape
            elif field.shape != shape:
                raise FlowFileError(
                    f"bundle field {name} has shape {field.shape}, expected {shape}"
                )


def _downsample2(img: np.ndarray) -> np.ndarray:
    h2, w2 = img.shape[0] // 2, img.shape[1] // 2
    crop = img[: h2 * 2, : w2 * 2]
    return crop.reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _refine_level(a: np.ndarray, b: np.ndarray, flow: np.ndarray, radius: int) -> np.ndarray:
    """One integer block-matching pass around the current flow."""
    h, w = a.shape
    gy, gx = np.mgrid[0:h, 0:w]
    fx = flow[..., 0].astype(np.int64)
    fy = flow[..., 1].astype(np.int64)

    offsets = [
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
    ]
    # Zero displacement first so exact matches keep a zero field.
    offsets.sort(key=lambda o: (o[0] * o[0] + o[1] * o[1], o[0], o[1]))

    best_cost = None
    best_dy = np.zeros((h, w), dtype=np.int64)
    best_dx = np.zeros((h, w), dtype=np.int64)
    for dy, dx in offsets:
        ty = gy + fy + dy
        tx = gx + fx + dx
        valid = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
        sampled = b[np.clip(ty, 0, h - 1), np.clip(tx, 0, w - 1)]
        diff2 = np.where(valid, (a - sampled) ** 2, 4.0)
        cost = uniform_filter(diff2, size=5, mode="nearest")
        if best_cost is None:
            best_cost = cost
            best_dy.fill(dy)
            best_dx.fill(dx)
        else:
            better = cost < best_cost - 1e-12
            best_cost = np.where(better, cost, best_cost)
            best_dy = np.where(better, dy, best_dy)
            best_dx = np.where(better, dx, best_dx)

    out = np.empty_like(flow)
    out[..., 0] = fx + best_dx
    out[..., 1] = fy + best_dy
    return out


def estimate_flow(
    a: np.ndarray, b: np.ndarray, levels: int = 4, radius: int = 4
) -> np.ndarray:
    """Coarse-to-fine integer block matching from frame `a` to frame `b`.

    Deterministic fallback for tasks shipped without precomputed flow.
    Identical inputs produce an exactly zero field.
    """
    if a.shape != b.shape:
        raise FlowFileError(
            f"cannot estimate flow between shapes {a.shape} and {b.shape}"
        )
    ga = to_luma(a) if a.ndim == 3 else np.asarray(a, dtype=np.float64)
    gb = to_luma(b) if b.ndim == 3 else np.asarray(b, dtype=np.float64)

    pyr_a, pyr_b = [ga], [gb]
    for _ in range(1, max(1, levels)):
        if min(pyr_a[-1].shape) // 2 < 16:
            break
        pyr_a.append(_downsample2(pyr_a[-1]))
        pyr_b.append(_downsample2(pyr_b[-1]))

    flow = np.zeros(pyr_a[-1].shape + (2,), dtype=np.float64)
    for level in range(len(pyr_a) - 1, -1, -1):
        if level < len(pyr_a) - 1:
            up = flow.repeat(2, axis=0).repeat(2, axis=1) * 2.0
            th, tw = pyr_a[level].shape
            up = up[:th, :tw]
            pad_y, pad_x = th - up.shape[0], tw - up.shape[1]
            if pad_y or pad_x:
                up = np.pad(up, ((0, pad_y), (0, pad_x), (0, 0)), mode="edge")
            # Cost aggregation assumes a locally constant base field; smooth
            # the inherited flow so block seams do not poison the window.
            flow = _median_smooth(up)
        flow = _refine_level(pyr_a[level], pyr_b[level], flow, radius)
    # Fractional true displacements leave the per-level integer matches in
    # coherent +-1 chunks whose seams mislead window costs at the next level.
    # The pyramid result is therefore only trusted as a displacement range;
    # one exhaustive constant-offset sweep at full resolution settles every
    # pixel independently of its neighbours' guesses.
    sweep = int(
        min(
            16,
            max(
                radius,
                np.abs(flow[..., 0]).max() + radius,
                np.abs(flow[..., 1]).max() + radius,
            ),
        )
    )
    flow = _refine_level(ga, gb, np.zeros(ga.shape + (2,), dtype=np.float64), sweep)
    return flow.astype(np.float32)


def _median_smooth(flow: np.ndarray) -> np.ndarray:
    out = np.empty_like(flow)
    out[..., 0] = median_filter(flow[..., 0], size=3, mode="nearest")
    out[..., 1] = median_filter(flow[..., 1], size=3, mode="nearest")
    return out


def _patch_msd_scalar(
    frame: np.ndarray,
    other: np.ndarray,
    p: tuple[float, float],
    target: tuple[float, float],
    radius: int,
) -> float:
    """Mean squared difference between patches, or +inf with no overlap."""
    h, w = frame.shape[:2]
    px, py = p
    tx, ty = target
    total = 0.0
    count = 0
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            sx, sy = px + dx, py + dy
            qx, qy = tx + dx, ty + dy
            if not (0 <= sx <= w - 1 and 0 <= sy <= h - 1):
                continue
            if not (0 <= qx <= w - 1 and 0 <= qy <= h - 1):
                continue
            src = frame[int(round(sy)), int(round(sx))]
            dst = bilinear_sample(other, np.float64(qx), np.float64(qy))
            diff = np.asarray(src, dtype=np.float64) - np.asarray(dst, dtype=np.float64)
            total += float(np.mean(diff * diff))
            count += 1
    if count == 0:
        return float("inf")
    return total / count


def patch_distance(
    frame: np.ndarray,
    partner_a: np.ndarray,
    partner_b: np.ndarray,
    p: tuple[int, int],
    flow_to_a: np.ndarray,
    flow_to_b: np.ndarray,
    radius: int = DEFAULT_PATCH_RADIUS,
) -> float:
    """Worst mean-squared patch difference at pixel `p` of `frame`.

    `p` is (x, y). Each flow proposes a correspondence in one partner
    frame; the returned distance is the max of the two patch differences,
    comparing only pixels both patches cover. A correspondence entirely
    outside its partner yields +inf.
    """
    px, py = p
    fa = flow_to_a[py, px]
    fb = flow_to_b[py, px]
    da = _patch_msd_scalar(frame, partner_a, (px, py), (px + fa[0], py + fa[1]), radius)
    db = _patch_msd_scalar(frame, partner_b, (px, py), (px + fb[0], py + fb[1]), radius)
    return max(da, db)


def _patch_msd_map(
    frame: np.ndarray, other: np.ndarray, flow: np.ndarray, radius: int
) -> np.ndarray:
    """Vectorized mean-squared patch difference for every pixel."""
    h, w = frame.shape[:2]
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    tx = gx + flow[..., 0]
    ty = gy + flow[..., 1]

    acc = np.zeros((h, w), dtype=np.float64)
    cnt = np.zeros((h, w), dtype=np.float64)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            sy = gy + dy
            sx = gx + dx
            qx = tx + dx
            qy = ty + dy
            valid = (
                (sy >= 0) & (sy <= h - 1) & (sx >= 0) & (sx <= w - 1)
                & (qx >= 0) & (qx <= w - 1) & (qy >= 0) & (qy <= h - 1)
            )
            src = frame[
                np.clip(sy, 0, h - 1).astype(np.int64),
                np.clip(sx, 0, w - 1).astype(np.int64),
            ]
            dst = bilinear_sample(other, np.clip(qx, 0, w - 1), np.clip(qy, 0, h - 1))
            diff2 = ((src - dst) ** 2).mean(axis=-1)
            acc += np.where(valid, diff2, 0.0)
            cnt += valid
    msd = np.full((h, w), np.inf)
    covered = cnt > 0
    msd[covered] = acc[covered] / cnt[covered]
    return msd


def _fb_inconsistent(fwd: np.ndarray, bwd: np.ndarray, tau: float) -> np.ndarray:
    """Pixels whose forward/backward round trip misses by more than tau."""
    h, w = fwd.shape[:2]
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    lx = gx + fwd[..., 0]
    ly = gy + fwd[..., 1]
    inside = (lx >= 0) & (lx <= w - 1) & (ly >= 0) & (ly <= h - 1)
    back = bilinear_sample(bwd, np.clip(lx, 0, w - 1), np.clip(ly, 0, h - 1))
    err = np.hypot(fwd[..., 0] + back[..., 0], fwd[..., 1] + back[..., 1])
    return ~inside | (err > tau)


def _weight_map(
    frame: np.ndarray,
    partners: list[tuple[np.ndarray, np.ndarray, np.ndarray | None]],
    radius: int,
    sigma_m: float,
    tau_fb: float,
) -> np.ndarray:
    """Reliability weights for one frame against its flow partners.

    Each partner is (image, forward flow, reverse flow or None). The
    weight is exp(-d^2 / 2 sigma^2) of the worst patch distance d, zeroed
    where any available forward/backward pair is inconsistent.
    """
    msd = None
    for other, fwd, _ in partners:
        m = _patch_msd_map(frame, other, fwd, radius)
        msd = m if msd is None else np.maximum(msd, m)
    weights = np.zeros_like(msd)
    finite = np.isfinite(msd)
    weights[finite] = np.exp(-(msd[finite] ** 2) / (2.0 * sigma_m**2))
    for _, fwd, bwd in partners:
        if bwd is not None:
            weights[_fb_inconsistent(fwd, bwd, tau_fb)] = 0.0
    return weights


def validate_flow(
    src: np.ndarray,
    ref_prev: np.ndarray,
    ref_next: np.ndarray,
    bundle: FlowBundle,
    radius: int = DEFAULT_PATCH_RADIUS,
    sigma_m: float = DEFAULT_SIGMA_M,
    tau_fb: float = DEFAULT_TAU_FB,
) -> dict[str, np.ndarray]:
    """Per-pixel reliability weight maps for the three task frames.

    Every frame is checked against both frames it can be warped toward,
    so a pixel is trusted only when all of its proposed correspondences
    look photometrically consistent and survive the round-trip test.
    """
    bundle.require(*FlowBundle.CORE)
    bundle.validate_shapes()
    return {
        SLOT_SOURCE: _weight_map(
            src,
            [
                (ref_prev, bundle.src_to_ref_prev, bundle.ref_prev_to_src),
                (ref_next, bundle.src_to_ref_next, bundle.ref_next_to_src),
            ],
            radius,
            sigma_m,
            tau_fb,
        ),
        SLOT_REF_PREV: _weight_map(
            ref_prev,
            [
                (ref_next, bundle.ref_prev_to_ref_next, bundle.ref_next_to_ref_prev),
                (src, bundle.ref_prev_to_src, bundle.src_to_ref_prev),
            ],
            radius,
            sigma_m,
            tau_fb,
        ),
        SLOT_REF_NEXT: _weight_map(
            ref_next,
            [
                (ref_prev, bundle.ref_next_to_ref_prev, bundle.ref_prev_to_ref_next),
                (src, bundle.ref_next_to_src, bundle.src_to_ref_next),
            ],
            radius,
            sigma_m,
            tau_fb,
        ),
    }
