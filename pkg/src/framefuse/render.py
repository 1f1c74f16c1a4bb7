"""Sample selection, blending, and hole filling for warped layers.

Every output pixel receives up to three warped samples (source, earlier
reference, later reference). A label picks which subset to blend: the
eight labels enumerate all subsets, from the empty selection (a hole to
be inpainted) through every single sample to all three. Label choice is
optimized as a grid MRF whose data term prefers agreeing, well-covered
selections and whose smoothness term counts selection differences
between neighbors.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import splu

from . import graphcut
from .errors import HoleFillError, LabelingError
from .sequence import SLOT_REF_NEXT, SLOT_REF_PREV, SLOT_SOURCE
from .warp import WarpedLayer

log = logging.getLogger(__name__)

# Selection table: rows are labels, columns select (source, earlier
# reference, later reference). Label 0 selects nothing and marks a hole.
LABEL_TABLE = np.array(
    [
        [0, 0, 0],
        [1, 0, 0],
        [0, 1, 0],
        [0, 0, 1],
        [0, 1, 1],
        [1, 0, 1],
        [1, 1, 0],
        [1, 1, 1],
    ],
    dtype=np.int64,
)
N_LABELS = len(LABEL_TABLE)
HOLE_LABEL = 0
SLOT_ORDER = (SLOT_SOURCE, SLOT_REF_PREV, SLOT_REF_NEXT)

DEFAULT_K_SOURCE = 1.0
DEFAULT_K_REFERENCE = 1.5
DEFAULT_ALPHA = 3.0
DEFAULT_BETA = 8.0
DEFAULT_GAMMA = 2.0
DEFAULT_EPSILON = 0.01
DEFAULT_HOLE_COST = 10.0


def valid_labels(coverage: np.ndarray) -> np.ndarray:
    """Label availability mask given per-slot coverage.

    `coverage` has shape (..., 3) ordered like `SLOT_ORDER`. A label is
    available iff it selects no uncovered sample; the empty selection is
    always available.
    """
    cov = np.asarray(coverage, dtype=bool)
    sel = LABEL_TABLE.astype(bool)
    return ~np.any(sel & ~cov[..., None, :], axis=-1)


def data_cost(
    samples: np.ndarray,
    covered: np.ndarray,
    label: int,
    k_source: float = DEFAULT_K_SOURCE,
    k_reference: float = DEFAULT_K_REFERENCE,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    epsilon: float = DEFAULT_EPSILON,
    hole_cost: float = DEFAULT_HOLE_COST,
) -> float:
    """Label cost at one pixel.

    `samples` is (3, 3): one RGB sample per slot in `SLOT_ORDER`;
    `covered` flags which slots hold real samples. Selecting any
    uncovered slot costs `graphcut.INVALID_COST`. The empty selection
    costs `hole_cost`. Otherwise the cost charges a per-slot penalty
    (references cost more than the source) plus `beta` times the summed
    squared RGB distances between selected samples, normalized by the
    selection size raised to `alpha`.
    """
    sel = LABEL_TABLE[label].astype(bool)
    covered = np.asarray(covered, dtype=bool)
    if np.any(sel & ~covered):
        return graphcut.INVALID_COST
    n_sel = int(sel.sum())
    if n_sel == 0:
        return float(hole_cost)
    prices = np.array([k_source, k_reference, k_reference])
    penalty = float(prices[sel].sum())
    chosen = np.asarray(samples, dtype=np.float64)[sel]
    agree = 0.0
    for i in range(n_sel):
        for j in range(i + 1, n_sel):
            diff = chosen[i] - chosen[j]
            agree += float(diff @ diff)
    return (1.0 + penalty + beta * agree) / (n_sel + epsilon) ** alpha


def pixel_costs(
    layers: dict[str, WarpedLayer],
    k_source: float = DEFAULT_K_SOURCE,
    k_reference: float = DEFAULT_K_REFERENCE,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    epsilon: float = DEFAULT_EPSILON,
    hole_cost: float = DEFAULT_HOLE_COST,
) -> np.ndarray:
    """Vectorized data costs for every pixel and label, shape (H, W, 8)."""
    color = np.stack([layers[s].color for s in SLOT_ORDER], axis=2)  # (H,W,3,3)
    cov = np.stack([layers[s].coverage for s in SLOT_ORDER], axis=2)  # (H,W,3)
    h, w = cov.shape[:2]

    prices = np.array([k_source, k_reference, k_reference])
    sel = LABEL_TABLE.astype(bool)
    n_sel = sel.sum(axis=1)

    # Pairwise squared RGB distances between the three slots.
    d01 = ((color[:, :, 0] - color[:, :, 1]) ** 2).sum(axis=-1)
    d02 = ((color[:, :, 0] - color[:, :, 2]) ** 2).sum(axis=-1)
    d12 = ((color[:, :, 1] - color[:, :, 2]) ** 2).sum(axis=-1)
    pair_d = np.stack([d01, d02, d12], axis=-1)  # (H,W,3)
    pair_sel = np.stack(
        [sel[:, 0] & sel[:, 1], sel[:, 0] & sel[:, 2], sel[:, 1] & sel[:, 2]],
        axis=1,
    )  # (8, 3)

    costs = np.empty((h, w, N_LABELS))
    for label in range(N_LABELS):
        if n_sel[label] == 0:
            costs[..., label] = hole_cost
            continue
        penalty = prices[sel[label]].sum()
        agree = pair_d @ pair_sel[label].astype(np.float64)
        costs[..., label] = (1.0 + penalty + beta * agree) / (
            n_sel[label] + epsilon
        ) ** alpha
    costs[~valid_labels(cov)] = graphcut.INVALID_COST
    return costs


def smoothness_cost(label_a: int, label_b: int, gamma: float = DEFAULT_GAMMA) -> float:
    """Smoothness between neighboring labels: gamma times the number of
    slots on which the two selections disagree."""
    return float(
        gamma * np.sum(LABEL_TABLE[label_a] != LABEL_TABLE[label_b])
    )


def smoothness_matrix(gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Full (8, 8) smoothness table."""
    diff = LABEL_TABLE[:, None, :] != LABEL_TABLE[None, :, :]
    return gamma * diff.sum(axis=-1).astype(np.float64)


def init_labels(costs: np.ndarray) -> np.ndarray:
    """Per-pixel cheapest label, ignoring smoothness. Ties resolve to the
    lowest label index."""
    return np.argmin(costs, axis=-1).astype(np.int64)


def optimize_labels(
    labels: np.ndarray,
    costs: np.ndarray,
    gamma: float = DEFAULT_GAMMA,
    max_sweeps: int = 10,
) -> tuple[np.ndarray, dict]:
    """Refine a label map with alpha expansion on the 4-neighbor grid."""
    h, w = labels.shape
    edges = graphcut.grid_edges(h, w)
    pairwise = smoothness_matrix(gamma)
    flat, info = graphcut.alpha_expansion(
        labels.ravel(), costs.reshape(-1, N_LABELS), edges, pairwise, max_sweeps
    )
    return flat.reshape(h, w), info


def blend(
    layers: dict[str, WarpedLayer], labels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Blend selected samples per pixel, weighted by carried weights.

    Returns the blended image and the hole mask (pixels with the empty
    selection). Where all selected weights are zero the selected samples
    average uniformly.
    """
    color = np.stack([layers[s].color for s in SLOT_ORDER], axis=2)
    weight = np.stack([layers[s].weight for s in SLOT_ORDER], axis=2)
    cov = np.stack([layers[s].coverage for s in SLOT_ORDER], axis=2)

    sel = LABEL_TABLE[labels].astype(bool)  # (H, W, 3)
    if np.any(sel & ~cov):
        raise LabelingError("labeling selects an uncovered sample")

    w_sel = np.where(sel, weight, 0.0)
    denom = w_sel.sum(axis=-1)
    num = (w_sel[..., None] * color).sum(axis=2)

    n_sel = sel.sum(axis=-1)
    flat = (denom <= 0.0) & (n_sel > 0)
    if flat.any():
        uniform = np.where(sel, 1.0, 0.0)
        num[flat] = (uniform[flat][..., None] * color[flat]).sum(axis=1)
        denom[flat] = n_sel[flat]

    holes = labels == HOLE_LABEL
    out = np.zeros_like(num)
    filled = ~holes
    out[filled] = num[filled] / denom[filled, None]
    return out, holes


def inpaint_holes(image: np.ndarray, holes: np.ndarray) -> np.ndarray:
    """Fill hole pixels by solving the Laplace equation per channel.

    Known pixels act as Dirichlet boundary values; with a zero guidance
    field the result is the harmonic interpolant, so filled values never
    leave the range spanned by the hole boundary. Raises when holes
    cover the whole frame.
    """
    holes = np.asarray(holes, dtype=bool)
    if not holes.any():
        return image.copy()
    if holes.all():
        raise HoleFillError("holes cover the entire frame; nothing to anchor fill")

    h, w = holes.shape
    idx = np.full((h, w), -1, dtype=np.int64)
    hy, hx = np.nonzero(holes)
    n = len(hy)
    idx[hy, hx] = np.arange(n)

    rows, cols, vals = [], [], []
    rhs = np.zeros((n, 3))
    diag = np.zeros(n)
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        ny = hy + dy
        nx = hx + dx
        in_frame = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        diag += in_frame
        ny_c = np.clip(ny, 0, h - 1)
        nx_c = np.clip(nx, 0, w - 1)
        nbr_hole = in_frame & holes[ny_c, nx_c]
        rows.append(np.flatnonzero(nbr_hole))
        cols.append(idx[ny_c[nbr_hole], nx_c[nbr_hole]])
        vals.append(np.full(nbr_hole.sum(), -1.0))
        nbr_known = in_frame & ~holes[ny_c, nx_c]
        rhs[nbr_known] += image[ny_c[nbr_known], nx_c[nbr_known]]

    if np.any(diag == 0):
        raise HoleFillError("hole pixel has no neighbors inside the frame")

    lap = csr_matrix(
        (
            np.concatenate([diag, np.concatenate(vals)]),
            (
                np.concatenate([np.arange(n), np.concatenate(rows)]),
                np.concatenate([np.arange(n), np.concatenate(cols)]),
            ),
        ),
        shape=(n, n),
    )
    try:
        solver = splu(lap.tocsc())
    except RuntimeError as exc:
        raise HoleFillError(f"hole system is singular: {exc}") from exc

    out = image.copy()
    for c in range(3):
        solution = solver.solve(rhs[:, c])
        residual = np.linalg.norm(lap @ solution - rhs[:, c])
        norm = max(np.linalg.norm(rhs[:, c]), 1e-30)
        if residual / norm > 1e-6:
            raise HoleFillError(
                f"hole fill did not converge (relative residual {residual / norm:.2e})"
            )
        out[hy, hx, c] = solution
    return out


def coverage_labels(layers: dict[str, WarpedLayer]) -> np.ndarray:
    """Label map selecting every covered sample at each pixel (the
    labeling-free fallback)."""
    cov = np.stack([layers[s].coverage for s in SLOT_ORDER], axis=2)
    bits = cov[..., 0] * 1 + cov[..., 1] * 2 + cov[..., 2] * 4
    lut = np.zeros(8, dtype=np.int64)
    for label, sel in enumerate(LABEL_TABLE):
        lut[sel[0] * 1 + sel[1] * 2 + sel[2] * 4] = label
    return lut[bits]


def label_histogram(labels: np.ndarray) -> np.ndarray:
    """Counts per label, length 8."""
    return np.bincount(labels.ravel(), minlength=N_LABELS)
