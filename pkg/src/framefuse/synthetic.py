"""Synthetic capture generation with exact ground truth.

Scenes are two fronto-parallel textured planes: a moving foreground
rectangle over a static background. Lenses sit on a horizontal rail, so
each plane shifts by its disparity (baseline over depth) between lenses,
and every flow field between any two captured frames has a closed form.
Ground-truth frames are what the reference lens would have captured at
each source timestamp.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .flow import write_flow
from .images import save_image
from .sequence import assign_roles, build_tasks, load_sequence, write_manifest

log = logging.getLogger(__name__)


@dataclass
class SceneSpec:
    """Parameters of a synthetic two-plane scene."""

    seed: int = 0
    width: int = 192
    height: int = 192
    lens_count: int = 2
    frame_count: int = 8
    baseline: float = 0.0
    fg_depth: float = 1.0
    bg_depth: float = 2.0
    fg_size: tuple[float, float] = (70.0, 54.0)
    fg_start: tuple[float, float] | None = None
    fg_velocity: tuple[float, float] = (0.0, 0.0)
    firing_offsets: tuple[float, ...] | None = None
    texture_waves: int = 6
    texture_wavelengths: tuple[float, float] = (8.0, 64.0)
    bg_color: tuple[float, float, float] = (0.5, 0.5, 0.5)
    fg_color: tuple[float, float, float] = (0.5, 0.5, 0.5)
    noise_sigma: float = 0.0
    speckle_count: int = 0
    speckle_amp: float = 0.85

    def __post_init__(self):
        if self.lens_count < 2:
            raise ConfigError("scene needs at least two lenses")
        if not (0 < self.fg_depth < self.bg_depth):
            raise ConfigError("foreground must sit strictly closer than background")
        if self.firing_offsets is not None and len(self.firing_offsets) != self.lens_count:
            raise ConfigError("firing_offsets must list one offset per lens")
        lo, hi = self.texture_wavelengths
        if not (0 < lo <= hi):
            raise ConfigError("texture_wavelengths must be an increasing positive pair")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.speckle_count < 0:
            raise ConfigError("speckle_count must be non-negative")

    @property
    def offsets(self) -> np.ndarray:
        if self.firing_offsets is not None:
            return np.asarray(self.firing_offsets, dtype=np.float64)
        return np.arange(self.lens_count) / self.lens_count

    def lens_baseline(self, lens: int) -> float:
        """Rail offset in disparity pixels at unit depth; the reference
        lens (the last to fire) sits at zero."""
        return self.baseline * (lens - (self.lens_count - 1))

    def frame_time(self, index: int) -> float:
        return index // self.lens_count + self.offsets[index % self.lens_count]

    def fg_origin(self, time: float) -> tuple[float, float]:
        x0, y0 = self.fg_start if self.fg_start is not None else (
            self.width * 0.22,
            self.height * 0.3,
        )
        return (x0 + self.fg_velocity[0] * time, y0 + self.fg_velocity[1] * time)


def scene_from_json(path: str | Path) -> SceneSpec:
    """Read a SceneSpec from a JSON file of field overrides."""
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scene spec {path}: {exc}") from exc
    known = {f.name for f in dataclasses.fields(SceneSpec)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"unknown scene fields: {', '.join(unknown)}")
    tuple_keys = (
        "fg_size",
        "fg_start",
        "fg_velocity",
        "firing_offsets",
        "texture_wavelengths",
        "bg_color",
        "fg_color",
    )
    for key in tuple_keys:
        if key in payload and payload[key] is not None:
            payload[key] = tuple(payload[key])
    return SceneSpec(**payload)


class _Texture:
    """Smooth procedural RGB texture: a seeded sum of sine waves around a
    per-channel base color."""

    def __init__(
        self,
        rng: np.random.Generator,
        waves: int,
        base: tuple[float, float, float] = (0.5, 0.5, 0.5),
        wavelength_range: tuple[float, float] = (8.0, 64.0),
    ):
        angles = rng.uniform(0, 2 * np.pi, waves)
        lo, hi = wavelength_range
        wavelengths = np.exp(rng.uniform(np.log(lo), np.log(hi), waves))
        self.kx = np.cos(angles) / wavelengths
        self.ky = np.sin(angles) / wavelengths
        self.phase = rng.uniform(0, 2 * np.pi, (waves, 3))
        amps = rng.uniform(0.5, 1.0, (waves, 3))
        self.amp = 0.42 * amps / amps.sum(axis=0, keepdims=True)
        self.base = np.asarray(base, dtype=np.float64)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)[..., None, None]
        y = np.asarray(y, dtype=np.float64)[..., None, None]
        waves = self.amp * np.sin(
            2 * np.pi * (self.kx[:, None] * x + self.ky[:, None] * y) + self.phase
        )
        return np.clip(self.base + waves.sum(axis=-2), 0.0, 1.0)


def make_textures(spec: SceneSpec) -> tuple[_Texture, _Texture]:
    rng = np.random.default_rng(spec.seed)
    bg = _Texture(rng, spec.texture_waves, spec.bg_color, spec.texture_wavelengths)
    fg = _Texture(rng, spec.texture_waves, spec.fg_color, spec.texture_wavelengths)
    return bg, fg


def _fg_rect(spec: SceneSpec, disparity_fg: float, time: float):
    x0, y0 = spec.fg_origin(time)
    return (
        x0 + disparity_fg,
        y0,
        x0 + disparity_fg + spec.fg_size[0],
        y0 + spec.fg_size[1],
    )


def fg_mask(spec: SceneSpec, lens: int, time: float) -> np.ndarray:
    """Pixels showing the foreground plane in one captured view."""
    b = spec.lens_baseline(lens)
    x0, y0, x1, y1 = _fg_rect(spec, b / spec.fg_depth, time)
    gy, gx = np.mgrid[0 : spec.height, 0 : spec.width]
    return (gx >= x0) & (gx < x1) & (gy >= y0) & (gy < y1)


def _speckles(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Seeded plane-anchored speckle positions and colors.

    Returns (bg_pos, bg_delta, fg_pos, fg_delta); positions are plane
    coordinates, deltas are per-channel color offsets.
    """
    rng = np.random.default_rng((spec.seed, 777))
    n_fg = spec.speckle_count // 5
    n_bg = spec.speckle_count - n_fg
    margin = abs(spec.baseline) * (spec.lens_count - 1) / spec.bg_depth + 2.0
    bg_pos = np.column_stack(
        [
            rng.uniform(-margin, spec.width + margin, n_bg),
            rng.uniform(0, spec.height, n_bg),
        ]
    )
    bg_delta = spec.speckle_amp * rng.choice([-1.0, 1.0], (n_bg, 3))
    fg_pos = np.column_stack(
        [
            rng.uniform(1.0, spec.fg_size[0] - 1.0, n_fg),
            rng.uniform(1.0, spec.fg_size[1] - 1.0, n_fg),
        ]
    )
    fg_delta = spec.speckle_amp * rng.choice([-1.0, 1.0], (n_fg, 3))
    return bg_pos, bg_delta, fg_pos, fg_delta


def _splat(
    img: np.ndarray, cx: float, cy: float, delta: np.ndarray, allowed: np.ndarray
) -> None:
    """Add a small Gaussian impulse at (cx, cy) where `allowed` is true."""
    h, w = img.shape[:2]
    x0, x1 = int(np.floor(cx)) - 2, int(np.floor(cx)) + 3
    y0, y1 = int(np.floor(cy)) - 2, int(np.floor(cy)) + 3
    x0c, x1c = max(x0, 0), min(x1, w)
    y0c, y1c = max(y0, 0), min(y1, h)
    if x0c >= x1c or y0c >= y1c:
        return
    yy, xx = np.mgrid[y0c:y1c, x0c:x1c]
    bump = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * 0.7**2))
    bump = np.where(allowed[y0c:y1c, x0c:x1c], bump, 0.0)
    img[y0c:y1c, x0c:x1c] += bump[..., None] * delta[None, None, :]


def render_view(
    spec: SceneSpec,
    textures: tuple[_Texture, _Texture],
    lens: int,
    time: float,
) -> np.ndarray:
    """Render what `lens` sees at `time`, evaluated analytically."""
    bg_tex, fg_tex = textures
    b = spec.lens_baseline(lens)
    d_bg = b / spec.bg_depth
    d_fg = b / spec.fg_depth
    gy, gx = np.mgrid[0 : spec.height, 0 : spec.width].astype(np.float64)

    img = bg_tex(gx - d_bg, gy)
    mask = fg_mask(spec, lens, time)
    ox, oy = spec.fg_origin(time)
    if mask.any():
        fx = gx[mask] - d_fg - ox
        fy = gy[mask] - oy
        img[mask] = fg_tex(fx, fy)
    if spec.speckle_count:
        bg_pos, bg_delta, fg_pos, fg_delta = _speckles(spec)
        for (ux, uy), delta in zip(bg_pos, bg_delta):
            _splat(img, ux + d_bg, uy, delta, ~mask)
        for (vx, vy), delta in zip(fg_pos, fg_delta):
            _splat(img, vx + d_fg + ox, vy + oy, delta, mask)
        img = np.clip(img, 0.0, 1.0)
    return img


def analytic_flow(
    spec: SceneSpec, lens_a: int, time_a: float, lens_b: int, time_b: float
) -> np.ndarray:
    """Exact flow from view (lens_a, time_a) to view (lens_b, time_b)."""
    ba = spec.lens_baseline(lens_a)
    bb = spec.lens_baseline(lens_b)
    dt = time_b - time_a
    u_bg = (bb - ba) / spec.bg_depth
    u_fg = (bb - ba) / spec.fg_depth + spec.fg_velocity[0] * dt
    v_fg = spec.fg_velocity[1] * dt

    flow = np.empty((spec.height, spec.width, 2), dtype=np.float32)
    flow[..., 0] = u_bg
    flow[..., 1] = 0.0
    mask = fg_mask(spec, lens_a, time_a)
    flow[..., 0][mask] = u_fg
    flow[..., 1][mask] = v_fg
    return flow


def flow_filename(index_a: int, index_b: int) -> str:
    """Flow file naming convention: stream indexes, source first."""
    return f"flow_{index_a:04d}_{index_b:04d}.flo"


def corrupt_flow_block(
    field: np.ndarray,
    rect: tuple[int, int, int, int],
    rng: np.random.Generator,
    min_mag: float = 4.0,
    max_mag: float = 12.0,
    mode: str = "random",
) -> np.ndarray:
    """Copy of `field` with wrong displacements injected inside `rect`
    (x0, y0, x1, y1 exclusive). Used to exercise validation.

    mode "random" perturbs every pixel independently; mode "shift" adds one
    constant offset to the whole block, mimicking flow that locked onto the
    wrong surface.
    """
    out = np.array(field, copy=True)
    x0, y0, x1, y1 = rect
    shape = out[y0:y1, x0:x1].shape
    if mode == "shift":
        mag = rng.uniform(min_mag, max_mag, shape[-1])
        sign = rng.choice([-1.0, 1.0], shape[-1])
    elif mode == "random":
        mag = rng.uniform(min_mag, max_mag, shape)
        sign = rng.choice([-1.0, 1.0], shape)
    else:
        raise ValueError(f"unknown corruption mode {mode!r}")
    out[y0:y1, x0:x1] += (mag * sign).astype(out.dtype)
    return out


def generate_synthetic(spec: SceneSpec, out_dir: str | Path) -> dict:
    """Write a full synthetic dataset under `out_dir`.

    Produces captured frames and `manifest.json`, exact flow files for
    every pair a synthesis task consumes (under `flows/`), and reference
    ground truth at each usable source timestamp (under `gt/`). Returns
    a summary with the file layout.
    """
    out_dir = Path(out_dir)
    (out_dir / "flows").mkdir(parents=True, exist_ok=True)
    (out_dir / "gt").mkdir(parents=True, exist_ok=True)
    textures = make_textures(spec)

    entries = []
    for j in range(spec.frame_count):
        lens = j % spec.lens_count
        time = spec.frame_time(j)
        name = f"img_{j:04d}.png"
        frame = render_view(spec, textures, lens, time)
        if spec.noise_sigma > 0:
            # Captured frames carry seeded sensor noise; the ground-truth
            # renders below stay at the ideal scene values.
            noise_rng = np.random.default_rng((spec.seed, j))
            frame = np.clip(
                frame + noise_rng.normal(0.0, spec.noise_sigma, frame.shape),
                0.0,
                1.0,
            )
        save_image(frame, out_dir / name)
        entries.append({"lens": lens, "time": time, "path": name})
    reference_lens = spec.lens_count - 1
    write_manifest(entries, out_dir / "manifest.json", reference_lens)

    frames, ref_lens = load_sequence(out_dir / "manifest.json")
    frames = assign_roles(frames, ref_lens)
    tasks, skipped = build_tasks(frames)

    by_index = {f.index: f for f in frames}
    sources = sorted(f.index for f in frames if f.role == "source")
    refs = sorted(f.index for f in frames if f.role == "reference")

    def same_lens_neighbor(index: int, direction: int, pool: list[int]) -> int | None:
        lens = by_index[index].lens_id
        candidates = [
            i
            for i in pool
            if by_index[i].lens_id == lens
            and (i > index if direction > 0 else i < index)
        ]
        if not candidates:
            return None
        return min(candidates) if direction > 0 else max(candidates)

    written: set[tuple[int, int]] = set()

    def emit(a: int, b: int) -> None:
        if (a, b) in written:
            return
        fa, fb = by_index[a], by_index[b]
        field = analytic_flow(spec, fa.lens_id, fa.time, fb.lens_id, fb.time)
        write_flow(field, out_dir / "flows" / flow_filename(a, b))
        written.add((a, b))

    gt_files = {}
    for task in tasks:
        s = task.source.index
        p = task.ref_prev.index
        nx = task.ref_next.index
        for a, b in ((s, p), (s, nx), (p, nx), (nx, p), (p, s), (nx, s)):
            emit(a, b)
        prev_src = same_lens_neighbor(s, -1, sources)
        next_src = same_lens_neighbor(s, +1, sources)
        next_ref = same_lens_neighbor(nx, +1, refs)
        if prev_src is not None:
            emit(s, prev_src)
        if next_src is not None:
            emit(s, next_src)
        if next_ref is not None:
            emit(nx, next_ref)

        gt_name = f"gt_{s:04d}.png"
        save_image(
            render_view(spec, textures, reference_lens, task.source.time),
            out_dir / "gt" / gt_name,
        )
        gt_files[s] = f"gt/{gt_name}"

    (out_dir / "scene.json").write_text(
        json.dumps(dataclasses.asdict(spec), indent=2, sort_keys=True) + "\n"
    )
    summary = {
        "manifest": "manifest.json",
        "flows_dir": "flows",
        "gt_dir": "gt",
        "frames": len(frames),
        "tasks": [t.source.index for t in tasks],
        "skipped": [f.index for f in skipped],
        "gt_files": gt_files,
    }
    log.info(
        "generated %d frames, %d tasks under %s", len(frames), len(tasks), out_dir
    )
    return summary
