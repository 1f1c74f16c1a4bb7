"""Alpha expansion against an exhaustive oracle on tiny grids."""

import itertools

import numpy as np
import pytest

from framefuse.errors import LabelingError
from framefuse.graphcut import (
    INVALID_COST,
    alpha_expansion,
    grid_edges,
    labeling_energy,
)
from framefuse.render import smoothness_matrix

# All 8^6 labelings of a 6-pixel grid, shared across oracle tests.
ALL_LABELINGS = np.array(
    list(itertools.product(range(8), repeat=6)), dtype=np.int64
)


def brute_force_optimum(unary, edges, pairwise):
    """Exact minimum energy by enumerating every labeling."""
    data = unary[np.arange(unary.shape[0])[:, None], ALL_LABELINGS.T].sum(axis=0)
    smooth = np.zeros(len(ALL_LABELINGS))
    for a, b in edges:
        smooth += pairwise[ALL_LABELINGS[:, a], ALL_LABELINGS[:, b]]
    return float((data + smooth).min())


def test_grid_edges_2x3():
    edges = grid_edges(2, 3)
    got = {tuple(e) for e in edges}
    assert got == {(0, 1), (1, 2), (3, 4), (4, 5), (0, 3), (1, 4), (2, 5)}


def test_labeling_energy_manual():
    unary = np.array([[1.0, 5.0], [2.0, 0.5]])
    edges = np.array([[0, 1]])
    pairwise = np.array([[0.0, 3.0], [3.0, 0.0]])
    labels = np.array([0, 1])
    assert labeling_energy(unary, labels, edges, pairwise) == pytest.approx(
        1.0 + 0.5 + 3.0
    )


def test_expansion_matches_brute_force_on_random_instances():
    edges = grid_edges(2, 3)
    pairwise = smoothness_matrix(gamma=2.0)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        unary = rng.uniform(0.0, 3.0, (6, 8))
        init = np.argmin(unary, axis=1)
        labels, info = alpha_expansion(init, unary, edges, pairwise)
        energy = labeling_energy(unary, labels, edges, pairwise)
        optimum = brute_force_optimum(unary, edges, pairwise)
        assert energy <= 1.05 * optimum + 1e-9
        trace = info["energy_trace"]
        assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))
        assert energy == pytest.approx(trace[-1], abs=1e-9)
        assert info["truncated_edges"] == 0


def test_expansion_respects_invalid_labels():
    edges = grid_edges(2, 3)
    pairwise = smoothness_matrix(gamma=2.0)
    rng = np.random.default_rng(42)
    unary = rng.uniform(0.0, 3.0, (6, 8))
    unary[:, 5] = INVALID_COST  # label 5 unavailable everywhere
    init = np.argmin(unary, axis=1)
    labels, _ = alpha_expansion(init, unary, edges, pairwise)
    assert not np.any(labels == 5)


def test_expansion_rejects_invalid_initialization():
    edges = grid_edges(2, 2)
    pairwise = smoothness_matrix(gamma=2.0)
    unary = np.ones((4, 8))
    unary[:, 3] = INVALID_COST
    init = np.full(4, 3)
    with pytest.raises(LabelingError):
        alpha_expansion(init, unary, edges, pairwise)


def test_expansion_smooths_outlier():
    # A single disagreeing pixel with a weak data preference flips to
    # its neighborhood's label once smoothness is counted.
    edges = grid_edges(3, 3)
    pairwise = smoothness_matrix(gamma=2.0)
    unary = np.full((9, 8), 5.0)
    unary[:, 7] = 1.0
    unary[4, 7] = 1.2
    unary[4, 1] = 1.0
    init = np.argmin(unary, axis=1)
    assert init[4] == 1
    labels, _ = alpha_expansion(init, unary, edges, pairwise)
    assert labels[4] == 7
    assert np.all(labels == 7)
