"""Label tables, data costs, blending, and hole filling."""

import numpy as np
import pytest
from scipy import ndimage

from framefuse.errors import HoleFillError, LabelingError
from framefuse.graphcut import INVALID_COST
from framefuse.render import (
    LABEL_TABLE,
    blend,
    coverage_labels,
    data_cost,
    init_labels,
    inpaint_holes,
    label_histogram,
    optimize_labels,
    pixel_costs,
    smoothness_cost,
    smoothness_matrix,
    valid_labels,
)
from framefuse.warp import WarpedLayer

SLOTS = ("source", "ref_prev", "ref_next")


def _layers(colors, coverage, weights=None):
    """Build the three-layer dict from (3,) per-slot scalars or arrays."""
    out = {}
    for i, slot in enumerate(SLOTS):
        layer = WarpedLayer.empty(4, 4)
        layer.color[:] = colors[i]
        layer.coverage[:] = coverage[i]
        layer.weight[:] = 1.0 if weights is None else weights[i]
        out[slot] = layer
    return out


def test_label_table_enumerates_all_subsets():
    assert LABEL_TABLE.shape == (8, 3)
    rows = {tuple(r) for r in LABEL_TABLE}
    assert len(rows) == 8
    assert tuple(LABEL_TABLE[0]) == (0, 0, 0)
    assert tuple(LABEL_TABLE[7]) == (1, 1, 1)


def test_valid_labels_by_coverage():
    full = valid_labels(np.array([True, True, True]))
    assert full.all()
    src_only = valid_labels(np.array([True, False, False]))
    assert list(np.flatnonzero(src_only)) == [0, 1]
    nothing = valid_labels(np.array([False, False, False]))
    assert list(np.flatnonzero(nothing)) == [0]


def test_data_cost_frozen_values():
    # Identical samples, everything covered. Costs follow
    # (1 + penalty + 8 * disagreement) / (n + 0.01)^3.
    samples = np.full((3, 3), 0.5)
    covered = np.array([True, True, True])
    assert data_cost(samples, covered, 7) == pytest.approx(
        0.18334561076658235, abs=1e-12
    )
    assert data_cost(samples, covered, 4) == pytest.approx(
        0.492574379654905, abs=1e-12
    )
    assert data_cost(samples, covered, 1) == pytest.approx(
        1.9411802958552886, abs=1e-12
    )


def test_data_cost_charges_disagreement():
    samples = np.array([[0.5, 0.5, 0.5], [0.6, 0.6, 0.6], [0.0, 0.0, 0.0]])
    covered = np.array([True, True, True])
    # Label 6 selects source and the earlier reference: squared RGB
    # distance 3 * 0.01 between them.
    assert data_cost(samples, covered, 6) == pytest.approx(
        0.46055704497733624, abs=1e-12
    )


def test_data_cost_uncovered_and_hole():
    samples = np.full((3, 3), 0.5)
    assert data_cost(samples, np.array([True, False, True]), 6) == INVALID_COST
    assert data_cost(samples, np.array([True, True, True]), 0) == 10.0


def test_pixel_costs_matches_scalar_oracle():
    rng = np.random.default_rng(8)
    layers = {}
    for slot in SLOTS:
        layer = WarpedLayer.empty(5, 6)
        layer.color[:] = rng.uniform(0, 1, (5, 6, 3))
        layer.coverage[:] = rng.uniform(0, 1, (5, 6)) > 0.3
        layers[slot] = layer
    costs = pixel_costs(layers)
    assert costs.shape == (5, 6, 8)
    color = np.stack([layers[s].color for s in SLOTS], axis=2)
    cov = np.stack([layers[s].coverage for s in SLOTS], axis=2)
    for y in range(5):
        for x in range(6):
            for label in range(8):
                assert costs[y, x, label] == pytest.approx(
                    data_cost(color[y, x], cov[y, x], label), rel=1e-12
                )


def test_smoothness_is_scaled_hamming():
    assert smoothness_cost(3, 3) == 0.0
    assert smoothness_cost(0, 7) == 6.0
    assert smoothness_cost(1, 2) == 4.0
    table = smoothness_matrix(gamma=2.0)
    assert np.allclose(table, table.T)
    assert np.all(np.diag(table) == 0.0)
    assert table[0, 7] == 6.0


def test_init_labels_argmin():
    costs = np.zeros((2, 2, 8))
    costs[..., :] = 5.0
    costs[0, 0, 3] = 1.0
    costs[1, 1, 7] = 0.5
    labels = init_labels(costs)
    assert labels[0, 0] == 3
    assert labels[1, 1] == 7
    # Ties resolve to the lowest label index.
    assert labels[0, 1] == 0


def test_optimize_labels_never_raises_energy():
    rng = np.random.default_rng(5)
    costs = rng.uniform(0.1, 2.0, (6, 7, 8))
    init = init_labels(costs)
    labels, info = optimize_labels(init, costs, gamma=2.0)
    trace = info["energy_trace"]
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))
    assert labels.shape == (6, 7)


def test_blend_weighted_average():
    layers = _layers([0.9, 0.3, 0.0], [True, True, False], weights=[2.0, 1.0, 1.0])
    labels = np.full((4, 4), 6, dtype=np.int64)  # source + earlier reference
    out, holes = blend(layers, labels)
    assert not holes.any()
    assert np.allclose(out, (2.0 * 0.9 + 1.0 * 0.3) / 3.0)


def test_blend_zero_weight_falls_back_to_uniform():
    layers = _layers([0.8, 0.2, 0.0], [True, True, False], weights=[0.0, 0.0, 1.0])
    labels = np.full((4, 4), 6, dtype=np.int64)
    out, _ = blend(layers, labels)
    assert np.allclose(out, 0.5)


def test_blend_marks_holes():
    layers = _layers([0.5, 0.5, 0.5], [True, True, True])
    labels = np.zeros((4, 4), dtype=np.int64)
    labels[0, 0] = 7
    out, holes = blend(layers, labels)
    assert holes.sum() == 15
    assert not holes[0, 0]
    assert np.allclose(out[0, 0], 0.5)


def test_blend_rejects_uncovered_selection():
    layers = _layers([0.5, 0.5, 0.5], [True, False, True])
    labels = np.full((4, 4), 6, dtype=np.int64)
    with pytest.raises(LabelingError):
        blend(layers, labels)


def test_coverage_labels_lut():
    layers = _layers([0.5, 0.5, 0.5], [True, False, True])
    labels = coverage_labels(layers)
    sel = LABEL_TABLE[labels[0, 0]]
    assert tuple(sel) == (1, 0, 1)
    none = _layers([0.5, 0.5, 0.5], [False, False, False])
    assert np.all(coverage_labels(none) == 0)


def test_label_histogram_counts():
    labels = np.array([[0, 7], [7, 3]])
    hist = label_histogram(labels)
    assert list(hist) == [1, 0, 0, 1, 0, 0, 0, 2]


# -------------------------------------------------------------- hole filling


def test_inpaint_constant_region():
    img = np.full((24, 24, 3), 0.42)
    holes = np.zeros((24, 24), dtype=bool)
    holes[8:16, 6:18] = True
    corrupted = img.copy()
    corrupted[holes] = 0.0
    filled = inpaint_holes(corrupted, holes)
    assert np.max(np.abs(filled - 0.42)) <= 1e-3


def test_inpaint_reproduces_linear_ramp():
    # The harmonic interpolant of a linear boundary is the same linear
    # function, so a ramp is recovered nearly exactly.
    gy, gx = np.mgrid[0:20, 0:20].astype(np.float64)
    img = np.repeat((0.1 + 0.03 * gx + 0.01 * gy)[..., None], 3, axis=2)
    holes = np.zeros((20, 20), dtype=bool)
    holes[5:12, 7:15] = True
    corrupted = img.copy()
    corrupted[holes] = 9.9
    filled = inpaint_holes(corrupted, holes)
    assert np.max(np.abs(filled - img)) <= 1e-6


def test_inpaint_obeys_maximum_principle():
    rng = np.random.default_rng(12)
    img = rng.uniform(0.2, 0.8, (30, 30, 3))
    holes = np.zeros((30, 30), dtype=bool)
    holes[4:20, 10:22] = True
    holes[22:27, 2:6] = True
    filled = inpaint_holes(img, holes)
    ring = ndimage.binary_dilation(holes) & ~holes
    for c in range(3):
        lo, hi = img[ring][:, c].min(), img[ring][:, c].max()
        values = filled[holes][:, c]
        assert values.min() >= lo - 1e-9
        assert values.max() <= hi + 1e-9


def test_inpaint_no_holes_is_copy():
    img = np.full((8, 8, 3), 0.3)
    out = inpaint_holes(img, np.zeros((8, 8), dtype=bool))
    assert np.array_equal(out, img)
    assert out is not img


def test_inpaint_all_holes_raises():
    with pytest.raises(HoleFillError):
        inpaint_holes(np.zeros((8, 8, 3)), np.ones((8, 8), dtype=bool))
