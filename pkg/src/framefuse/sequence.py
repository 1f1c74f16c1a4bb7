"""Capture stream modeling: manifests, lens roles, and synthesis tasks.

An asynchronous array interleaves frames from several lenses, each lens
firing at a fixed offset within a shooting iteration. One lens is the
reference viewpoint; every other frame is a source that gets re-rendered
into the reference viewpoint at its own timestamp. A synthesis task pairs
a source frame with the reference frames immediately before and after it.
"""

from __future__ import annotations

import bisect
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ManifestError
from .images import load_image

log = logging.getLogger(__name__)

ROLE_SOURCE = "source"
ROLE_REFERENCE = "reference"

# Per-task frame slots.
SLOT_SOURCE = "source"
SLOT_REF_PREV = "ref_prev"
SLOT_REF_NEXT = "ref_next"


@dataclass(frozen=True)
class CaptureFrame:
    """One captured frame: lens identity, firing time, pixels, provenance."""

    lens_id: int
    time: float
    image: np.ndarray
    path: str = ""
    index: int = -1
    role: str = ""


@dataclass(frozen=True)
class SynthesisTask:
    """A source frame bracketed by its nearest reference frames.

    `t` is the normalized timestamp of the source between the two
    reference exposures, strictly inside (0, 1).
    """

    ref_prev: CaptureFrame
    source: CaptureFrame
    ref_next: CaptureFrame
    t: float

    def __post_init__(self):
        if not (0.0 < self.t < 1.0):
            raise ManifestError(
                f"interpolation position t={self.t} outside (0, 1) for "
                f"source frame {self.source.index}"
            )


def load_sequence(manifest_path: str | Path) -> tuple[list[CaptureFrame], int | None]:
    """Load a capture manifest and its frames.

    The manifest is a JSON object with a `frames` array of
    `{lens, time, path}` records (paths relative to the manifest) and an
    optional `reference_lens`. Returns frames sorted by timestamp with
    stream indices assigned, plus the manifest's reference lens if any.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise ManifestError(f"manifest not found: {manifest_path}")
    try:
        payload = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from exc

    entries = payload.get("frames")
    if not isinstance(entries, list) or not entries:
        raise ManifestError("manifest has no frames")

    root = manifest_path.parent
    frames = []
    for i, entry in enumerate(entries):
        try:
            lens = int(entry["lens"])
            time = float(entry["time"])
            rel = str(entry["path"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"manifest frame {i} is malformed: {exc}") from exc
        image = load_image(root / rel)
        frames.append(CaptureFrame(lens_id=lens, time=time, image=image, path=rel))

    shape = frames[0].image.shape
    for i, frame in enumerate(frames):
        if frame.image.shape != shape:
            raise ManifestError(
                f"manifest frame {i} ({frame.path}) has shape "
                f"{frame.image.shape[:2]}, expected {shape[:2]}"
            )

    frames.sort(key=lambda f: f.time)
    for i in range(1, len(frames)):
        if not (frames[i].time > frames[i - 1].time):
            raise ManifestError(
                f"timestamps do not strictly increase: frame {frames[i].path!r} "
                f"at t={frames[i].time} follows t={frames[i - 1].time}"
            )
    frames = [replace(f, index=i) for i, f in enumerate(frames)]

    reference_lens = payload.get("reference_lens")
    if reference_lens is not None:
        reference_lens = int(reference_lens)
    return frames, reference_lens


def write_manifest(
    frames: list[dict],
    manifest_path: str | Path,
    reference_lens: int | None = None,
) -> None:
    """Write a manifest of `{lens, time, path}` records as JSON."""
    payload: dict = {"frames": frames}
    if reference_lens is not None:
        payload["reference_lens"] = reference_lens
    manifest_path = Path(manifest_path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def assign_roles(
    frames: list[CaptureFrame], reference_lens: int | None = None
) -> list[CaptureFrame]:
    """Tag every frame as reference or source.

    When `reference_lens` is None the reference is inferred as the lens
    that fires last within the first shooting iteration, i.e. the last
    lens to appear for the first time in stream order.
    """
    lenses = {f.lens_id for f in frames}
    if reference_lens is None:
        seen: set[int] = set()
        for frame in frames:
            if frame.lens_id not in seen:
                seen.add(frame.lens_id)
                reference_lens = frame.lens_id
                if len(seen) == len(lenses):
                    break
    elif reference_lens not in lenses:
        raise ManifestError(
            f"reference lens {reference_lens} absent from stream "
            f"(lenses: {sorted(lenses)})"
        )
    log.debug("reference lens: %d", reference_lens)
    return [
        replace(
            f,
            role=ROLE_REFERENCE if f.lens_id == reference_lens else ROLE_SOURCE,
        )
        for f in frames
    ]


def build_tasks(
    frames: list[CaptureFrame],
) -> tuple[list[SynthesisTask], list[CaptureFrame]]:
    """Pair each source frame with its bracketing reference frames.

    Source frames before the first reference exposure or after the last
    one cannot be bracketed; they are returned in the skipped list rather
    than raising. Tasks come back ordered by source timestamp.
    """
    refs = [f for f in frames if f.role == ROLE_REFERENCE]
    if not refs:
        raise ManifestError("stream has no reference frames; assign roles first")
    ref_times = [f.time for f in refs]

    tasks: list[SynthesisTask] = []
    skipped: list[CaptureFrame] = []
    for frame in frames:
        if frame.role != ROLE_SOURCE:
            continue
        after = bisect.bisect_right(ref_times, frame.time)
        if after == 0 or after == len(refs):
            skipped.append(frame)
            continue
        ref_prev = refs[after - 1]
        ref_next = refs[after]
        span = ref_next.time - ref_prev.time
        t = (frame.time - ref_prev.time) / span
        # Reconstruction of the source timestamp must be exact to rounding.
        recon = ref_prev.time + t * span
        tol = 1e-9 * max(1.0, abs(frame.time))
        if abs(recon - frame.time) > tol:
            raise ManifestError(
                f"timestamp interpolation drift for source frame {frame.index}"
            )
        tasks.append(SynthesisTask(ref_prev=ref_prev, source=frame, ref_next=ref_next, t=t))

    if skipped:
        log.info(
            "skipping %d boundary source frame(s): %s",
            len(skipped),
            ", ".join(str(f.index) for f in skipped),
        )
    return tasks, skipped
