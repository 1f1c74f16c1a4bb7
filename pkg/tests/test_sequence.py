"""Manifest loading, role assignment, and task construction."""

import json

import numpy as np
import pytest

from framefuse.errors import ManifestError
from framefuse.images import save_image
from framefuse.sequence import (
    SynthesisTask,
    assign_roles,
    build_tasks,
    load_sequence,
    write_manifest,
)


def _write_frames(root, records):
    """Write one flat gray PNG per record and the matching manifest."""
    rng = np.random.default_rng(7)
    entries = []
    for i, (lens, time) in enumerate(records):
        name = f"f{i}.png"
        img = np.full((8, 8, 3), 0.25 + 0.05 * (i % 5))
        img += rng.uniform(0, 0.01, img.shape)
        save_image(img, root / name)
        entries.append({"lens": lens, "time": time, "path": name})
    write_manifest(entries, root / "manifest.json")
    return root / "manifest.json"


def test_load_sequence_sorts_and_indexes(tmp_path):
    path = _write_frames(tmp_path, [(0, 1.0), (1, 0.5), (0, 0.0)])
    frames, ref = load_sequence(path)
    assert ref is None
    assert [f.time for f in frames] == [0.0, 0.5, 1.0]
    assert [f.index for f in frames] == [0, 1, 2]
    assert frames[0].image.shape == (8, 8, 3)


def test_load_sequence_reads_reference_lens(tmp_path):
    entries = []
    for i, (lens, time) in enumerate([(0, 0.0), (1, 0.5)]):
        name = f"f{i}.png"
        save_image(np.full((4, 4, 3), 0.5), tmp_path / name)
        entries.append({"lens": lens, "time": time, "path": name})
    write_manifest(entries, tmp_path / "m.json", reference_lens=1)
    _, ref = load_sequence(tmp_path / "m.json")
    assert ref == 1


def test_load_sequence_missing_file(tmp_path):
    with pytest.raises(ManifestError):
        load_sequence(tmp_path / "nope.json")


def test_load_sequence_bad_json(tmp_path):
    (tmp_path / "m.json").write_text("{not json")
    with pytest.raises(ManifestError):
        load_sequence(tmp_path / "m.json")


def test_load_sequence_no_frames(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"frames": []}))
    with pytest.raises(ManifestError):
        load_sequence(tmp_path / "m.json")


def test_load_sequence_malformed_entry(tmp_path):
    (tmp_path / "m.json").write_text(json.dumps({"frames": [{"lens": 0}]}))
    with pytest.raises(ManifestError):
        load_sequence(tmp_path / "m.json")


def test_load_sequence_shape_mismatch(tmp_path):
    save_image(np.full((4, 4, 3), 0.5), tmp_path / "a.png")
    save_image(np.full((6, 4, 3), 0.5), tmp_path / "b.png")
    write_manifest(
        [
            {"lens": 0, "time": 0.0, "path": "a.png"},
            {"lens": 1, "time": 0.5, "path": "b.png"},
        ],
        tmp_path / "m.json",
    )
    with pytest.raises(ManifestError):
        load_sequence(tmp_path / "m.json")


def test_load_sequence_duplicate_timestamps(tmp_path):
    path = _write_frames(tmp_path, [(0, 0.0), (1, 0.0)])
    with pytest.raises(ManifestError):
        load_sequence(path)


def test_assign_roles_infers_last_new_lens(tmp_path):
    # Lens 1 appears last within the first iteration, so it is the
    # reference when the manifest does not name one.
    path = _write_frames(tmp_path, [(0, 0.0), (1, 0.5), (0, 1.0), (1, 1.5)])
    frames, _ = load_sequence(path)
    frames = assign_roles(frames)
    roles = [f.role for f in frames]
    assert roles == ["source", "reference", "source", "reference"]


def test_assign_roles_explicit_reference(tmp_path):
    path = _write_frames(tmp_path, [(0, 0.0), (1, 0.5), (0, 1.0), (1, 1.5)])
    frames, _ = load_sequence(path)
    frames = assign_roles(frames, reference_lens=0)
    assert [f.role for f in frames] == [
        "reference",
        "source",
        "reference",
        "source",
    ]


def test_assign_roles_absent_reference(tmp_path):
    path = _write_frames(tmp_path, [(0, 0.0), (1, 0.5)])
    frames, _ = load_sequence(path)
    with pytest.raises(ManifestError):
        assign_roles(frames, reference_lens=9)


def test_build_tasks_midpoint_t(tmp_path):
    # Uniform two-lens firing: each source sits exactly between its
    # bracketing references, so t = 0.5.
    path = _write_frames(
        tmp_path, [(0, 0.0), (1, 0.5), (0, 1.0), (1, 1.5), (0, 2.0), (1, 2.5)]
    )
    frames, _ = load_sequence(path)
    frames = assign_roles(frames, reference_lens=1)
    tasks, skipped = build_tasks(frames)
    assert [t.source.index for t in tasks] == [2, 4]
    assert all(t.t == 0.5 for t in tasks)
    # The first source fires before any reference exposure.
    assert [f.index for f in skipped] == [0]


def test_build_tasks_uneven_offsets(tmp_path):
    path = _write_frames(tmp_path, [(1, 0.0), (0, 0.25), (1, 1.0)])
    frames, _ = load_sequence(path)
    frames = assign_roles(frames, reference_lens=1)
    tasks, skipped = build_tasks(frames)
    assert len(tasks) == 1 and not skipped
    assert tasks[0].t == pytest.approx(0.25, abs=1e-12)


def test_build_tasks_requires_assigned_roles(tmp_path):
    path = _write_frames(tmp_path, [(0, 0.0), (0, 1.0)])
    frames, _ = load_sequence(path)
    with pytest.raises(ManifestError):
        build_tasks(frames)


def test_task_t_must_be_interior(tmp_path):
    path = _write_frames(tmp_path, [(0, 0.0), (1, 0.5), (1, 1.5)])
    frames, _ = load_sequence(path)
    with pytest.raises(ManifestError):
        SynthesisTask(ref_prev=frames[1], source=frames[0], ref_next=frames[2], t=1.5)


def test_manifest_round_trip_preserves_tasks(tmp_path):
    records = [(0, 0.0), (1, 0.4), (0, 1.0), (1, 1.4), (0, 2.0), (1, 2.4)]
    path = _write_frames(tmp_path, records)
    frames, _ = load_sequence(path)
    frames = assign_roles(frames, reference_lens=1)
    tasks, _ = build_tasks(frames)

    entries = [
        {"lens": f.lens_id, "time": f.time, "path": f.path} for f in frames
    ]
    write_manifest(entries, tmp_path / "copy.json", reference_lens=1)
    frames2, ref2 = load_sequence(tmp_path / "copy.json")
    frames2 = assign_roles(frames2, ref2)
    tasks2, _ = build_tasks(frames2)

    key = lambda t: (t.ref_prev.index, t.source.index, t.ref_next.index, t.t)
    assert [key(t) for t in tasks] == [key(t) for t in tasks2]
