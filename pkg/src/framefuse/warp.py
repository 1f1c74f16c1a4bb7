"""Local content-preserving warps of superpixel units.

Every warp unit gets its own coarse quad mesh. Reliable pixels inside
the unit act as control points dragging the mesh toward their flow
targets while a per-triangle similarity term keeps the deformation
locally rigid. Warped units are rasterized by inverse mapping with
bilinear sampling, carrying validation weights along so overlapping
units resolve to the most trusted sample.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import RankDeficientWarpError, WarpError
from .images import bilinear_sample, luma_gradient
from .sequence import SLOT_REF_NEXT, SLOT_REF_PREV, SLOT_SOURCE
from .superpixel import SuperpixelMap

log = logging.getLogger(__name__)

DEFAULT_CELL = 16.0
DEFAULT_STRIDE = 2
DEFAULT_STRIDE_MIN = 50
DEFAULT_EDGE_THRESHOLD = 0.1
EDGE_ALPHA = 1.0
FLAT_ALPHA = 0.5


@dataclass(frozen=True)
class MeshGrid:
    """Axis-aligned quad lattice covering a region's bounding box.

    Vertices are stored row-major as (x, y) pairs; each cell is split
    into two triangles along its top-left to bottom-right diagonal.
    """

    origin: tuple[float, float]
    cell: float
    cells_x: int
    cells_y: int
    vertices: np.ndarray  # ((cells_y+1)*(cells_x+1), 2)
    triangles: np.ndarray  # (2*cells_x*cells_y, 3) vertex indices

    @property
    def lattice_shape(self) -> tuple[int, int]:
        """(vertices across, vertices down)."""
        return (self.cells_x + 1, self.cells_y + 1)

    def vertex_index(self, col: int, row: int) -> int:
        return row * (self.cells_x + 1) + col

    def cell_of(self, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cx = np.clip(
            np.floor((np.asarray(x) - self.origin[0]) / self.cell).astype(np.int64),
            0,
            self.cells_x - 1,
        )
        cy = np.clip(
            np.floor((np.asarray(y) - self.origin[1]) / self.cell).astype(np.int64),
            0,
            self.cells_y - 1,
        )
        return cx, cy


def build_mesh(bbox: tuple[int, int, int, int], cell: float = DEFAULT_CELL) -> MeshGrid:
    """Build the quad mesh for an inclusive (x0, y0, x1, y1) bounding box.

    The lattice extent is the box extent rounded up to whole cells, so
    the box is always covered with less than one cell of overhang.
    """
    x0, y0, x1, y1 = bbox
    if x1 < x0 or y1 < y0:
        raise WarpError(f"empty bounding box {bbox}")
    if cell <= 0:
        raise WarpError(f"cell size must be positive, got {cell}")
    width = x1 - x0 + 1
    height = y1 - y0 + 1
    cells_x = max(1, int(np.ceil(width / cell)))
    cells_y = max(1, int(np.ceil(height / cell)))

    xs = x0 + cell * np.arange(cells_x + 1)
    ys = y0 + cell * np.arange(cells_y + 1)
    gx, gy = np.meshgrid(xs, ys)
    vertices = np.stack([gx.ravel(), gy.ravel()], axis=1)

    tris = []
    stride = cells_x + 1
    for row in range(cells_y):
        for col in range(cells_x):
            tl = row * stride + col
            tr = tl + 1
            bl = tl + stride
            br = bl + 1
            tris.append((tl, tr, br))
            tris.append((tl, br, bl))
    return MeshGrid(
        origin=(float(x0), float(y0)),
        cell=float(cell),
        cells_x=cells_x,
        cells_y=cells_y,
        vertices=vertices,
        triangles=np.asarray(tris, dtype=np.int64),
    )


def inverse_bilinear(
    point: tuple[float, float], corners: np.ndarray
) -> np.ndarray:
    """Coefficients expressing `point` as a bilinear mix of cell corners.

    Corners are ordered (top-left, top-right, bottom-left, bottom-right)
    of an axis-aligned cell. The four returned coefficients are
    non-negative and sum to 1; a point outside the cell raises.
    """
    corners = np.asarray(corners, dtype=np.float64)
    x0, y0 = corners[0]
    x1, y1 = corners[3]
    w = x1 - x0
    h = y1 - y0
    if w <= 0 or h <= 0:
        raise WarpError("degenerate cell corners")
    fx = (point[0] - x0) / w
    fy = (point[1] - y0) / h
    eps = 1e-9
    if not (-eps <= fx <= 1 + eps and -eps <= fy <= 1 + eps):
        raise WarpError(f"point {point} outside cell")
    fx = min(max(fx, 0.0), 1.0)
    fy = min(max(fy, 0.0), 1.0)
    return np.array(
        [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy]
    )


def target_position(
    points: np.ndarray, slot: str, t: float, bundle
) -> np.ndarray:
    """Where integer pixel positions should land at the synthesis time.

    Reference frames move along their own flow toward the opposite
    reference, scaled by the time fraction; source pixels blend their
    flows toward both references.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    ix = pts[:, 0].astype(np.int64)
    iy = pts[:, 1].astype(np.int64)
    if slot == SLOT_REF_PREV:
        bundle.require("ref_prev_to_ref_next")
        out = pts + t * bundle.ref_prev_to_ref_next[iy, ix]
    elif slot == SLOT_REF_NEXT:
        bundle.require("ref_next_to_ref_prev")
        out = pts + (1.0 - t) * bundle.ref_next_to_ref_prev[iy, ix]
    elif slot == SLOT_SOURCE:
        bundle.require("src_to_ref_prev", "src_to_ref_next")
        out = (
            pts
            + (1.0 - t) * bundle.src_to_ref_prev[iy, ix]
            + t * bundle.src_to_ref_next[iy, ix]
        )
    else:
        raise WarpError(f"unknown frame slot {slot!r}")
    return out if np.asarray(points).ndim == 2 else out[0]


@dataclass
class WarpControls:
    """Control points pinning a unit's mesh to its flow targets."""

    points: np.ndarray  # (N, 2) input pixel positions
    targets: np.ndarray  # (N, 2) desired output positions
    alpha: np.ndarray  # (N,) structure emphasis, 1 at edges else 0.5
    weight: np.ndarray  # (N,) validation weights

    def __len__(self) -> int:
        return len(self.points)


def _triangle_coords(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Per-triangle (u, v) of vertex 1 in the local frame spanned by the
    edge vertex2->vertex3 and its 90 degree rotation."""
    v1 = vertices[triangles[:, 0]]
    v2 = vertices[triangles[:, 1]]
    v3 = vertices[triangles[:, 2]]
    d3 = v3 - v2
    d1 = v1 - v2
    # Rotation of d3 by -90 degrees: R(x, y) = (y, -x).
    denom = d3[:, 0] ** 2 + d3[:, 1] ** 2
    if np.any(denom < 1e-20):
        raise WarpError("degenerate mesh triangle")
    u = (d1[:, 0] * d3[:, 0] + d1[:, 1] * d3[:, 1]) / denom
    v = (d1[:, 0] * d3[:, 1] - d1[:, 1] * d3[:, 0]) / denom
    return np.stack([u, v], axis=1)


def warp_energy(mesh: MeshGrid, controls: WarpControls, vertices: np.ndarray) -> float:
    """Total warp energy of a candidate vertex layout.

    Direct evaluation of the data and similarity terms; the solver must
    never return a layout with higher energy than the input lattice.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    total = 0.0
    nx = mesh.cells_x + 1
    for i in range(len(controls)):
        px, py = controls.points[i]
        cx, cy = mesh.cell_of(px, py)
        cx, cy = int(cx), int(cy)
        tl = mesh.vertex_index(cx, cy)
        idx = [tl, tl + 1, tl + nx, tl + nx + 1]
        coeff = inverse_bilinear((px, py), mesh.vertices[idx])
        pred = coeff @ vertices[idx]
        err = pred - controls.targets[i]
        total += float(controls.alpha[i] * controls.weight[i] * (err @ err))
    uv = _triangle_coords(mesh.vertices, mesh.triangles)
    for tri, (u, v) in zip(mesh.triangles, uv):
        v1, v2, v3 = vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]
        d3 = v3 - v2
        pred = v2 + u * d3 + v * np.array([d3[1], -d3[0]])
        err = v1 - pred
        total += float(err @ err)
    return total


def solve_warp(
    mesh: MeshGrid,
    controls: WarpControls,
    region_label: str = "region",
    use_weights: bool = True,
) -> tuple[np.ndarray, float]:
    """Solve for warped mesh vertices.

    Minimizes the weighted data term (controls reaching their targets,
    each row scaled by sqrt(alpha * weight)) plus a per-triangle
    similarity term preserving local shape. Returns the warped vertices
    and the relative residual of the normal equations. A unit with no
    controls keeps its input lattice; a singular system raises.
    """
    nv = len(mesh.vertices)
    if len(controls) == 0:
        return mesh.vertices.copy(), 0.0

    nc = len(controls)
    ntri = len(mesh.triangles)
    rows = 2 * nc + 2 * ntri
    cols = 2 * nv  # x unknowns first, then y
    nx = mesh.cells_x + 1

    cxs, cys = mesh.cell_of(controls.points[:, 0], controls.points[:, 1])
    ox = mesh.origin[0] + cxs * mesh.cell
    oy = mesh.origin[1] + cys * mesh.cell
    fx = np.clip((controls.points[:, 0] - ox) / mesh.cell, 0.0, 1.0)
    fy = np.clip((controls.points[:, 1] - oy) / mesh.cell, 0.0, 1.0)
    coeff = np.stack(
        [(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1
    )
    tl = cys * nx + cxs
    corner = np.stack([tl, tl + 1, tl + nx, tl + nx + 1], axis=1)

    scale = controls.alpha * (controls.weight if use_weights else 1.0)
    root = np.sqrt(np.maximum(scale, 0.0))

    # Data rows: even rows pin x coordinates, odd rows pin y.
    rx = np.repeat(2 * np.arange(nc), 4)
    data_r = np.concatenate([rx, rx + 1])
    data_c = np.concatenate([corner.ravel(), nv + corner.ravel()])
    vals = (coeff * root[:, None]).ravel()
    data_v = np.concatenate([vals, vals])

    uv = _triangle_coords(mesh.vertices, mesh.triangles)
    u, v = uv[:, 0], uv[:, 1]
    i1 = mesh.triangles[:, 0]
    i2 = mesh.triangles[:, 1]
    i3 = mesh.triangles[:, 2]
    base = 2 * nc + 2 * np.arange(ntri)
    # x row: x1 + (u-1) x2 - u x3 + v y2 - v y3 = 0
    # y row: y1 + (u-1) y2 - u y3 - v x2 + v x3 = 0
    ones = np.ones(ntri)
    sim_r = np.concatenate([base] * 5 + [base + 1] * 5)
    sim_c = np.concatenate(
        [i1, i2, i3, nv + i2, nv + i3, nv + i1, nv + i2, nv + i3, i2, i3]
    )
    sim_v = np.concatenate(
        [ones, u - 1, -u, v, -v, ones, u - 1, -u, -v, v]
    )

    a = sparse.coo_matrix(
        (
            np.concatenate([data_v, sim_v]),
            (np.concatenate([data_r, sim_r]), np.concatenate([data_c, sim_c])),
        ),
        shape=(rows, cols),
    ).tocsr()
    b = np.zeros(rows)
    b[2 * np.arange(nc)] = root * controls.targets[:, 0]
    b[2 * np.arange(nc) + 1] = root * controls.targets[:, 1]

    normal = (a.T @ a).toarray()
    rhs = a.T @ b
    solution, _, rank, _ = np.linalg.lstsq(normal, rhs, rcond=None)
    if rank < cols:
        raise RankDeficientWarpError(region_label, rank, cols)
    residual = float(
        np.linalg.norm(normal @ solution - rhs) / max(np.linalg.norm(rhs), 1e-30)
    )
    warped = np.stack([solution[:nv], solution[nv:]], axis=1)
    return warped, residual


@dataclass
class WarpedLayer:
    """One frame re-rendered at the synthesis time.

    `weight` carries the validation weight of whichever sample won each
    pixel; `coverage` marks pixels any unit landed on.
    """

    color: np.ndarray
    weight: np.ndarray
    coverage: np.ndarray

    @classmethod
    def empty(cls, height: int, width: int) -> "WarpedLayer":
        return cls(
            color=np.zeros((height, width, 3)),
            weight=np.zeros((height, width)),
            coverage=np.zeros((height, width), dtype=bool),
        )


def rasterize(
    image: np.ndarray,
    weights: np.ndarray,
    mask: np.ndarray,
    mesh: MeshGrid,
    warped_vertices: np.ndarray,
    layer: WarpedLayer,
) -> int:
    """Render one warped unit into `layer` by inverse mapping.

    Every output pixel inside a warped triangle is traced back to its
    input-space pre-image; pixels whose pre-image falls on the unit mask
    are bilinearly sampled. Conflicting writes keep the sample with the
    higher carried weight. Degenerate and orientation-flipped triangles
    are skipped; their count is returned.
    """
    h, w = image.shape[:2]
    src = mesh.vertices
    dst = np.asarray(warped_vertices, dtype=np.float64)
    skipped = 0

    for tri in mesh.triangles:
        s = src[tri]
        d = dst[tri]
        e1 = d[1] - d[0]
        e2 = d[2] - d[0]
        det_out = e1[0] * e2[1] - e1[1] * e2[0]
        f1 = s[1] - s[0]
        f2 = s[2] - s[0]
        det_in = f1[0] * f2[1] - f1[1] * f2[0]
        if abs(det_out) < 1e-12 or det_out * det_in < 0:
            skipped += 1
            continue

        x0 = max(0, int(np.ceil(d[:, 0].min() - 1e-9)))
        x1 = min(w - 1, int(np.floor(d[:, 0].max() + 1e-9)))
        y0 = max(0, int(np.ceil(d[:, 1].min() - 1e-9)))
        y1 = min(h - 1, int(np.floor(d[:, 1].max() + 1e-9)))
        if x1 < x0 or y1 < y0:
            continue

        gy, gx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
        rx = gx - d[0, 0]
        ry = gy - d[0, 1]
        l1 = (rx * e2[1] - ry * e2[0]) / det_out
        l2 = (ry * e1[0] - rx * e1[1]) / det_out
        inside = (l1 >= -1e-9) & (l2 >= -1e-9) & (l1 + l2 <= 1 + 1e-9)
        if not inside.any():
            continue

        qx = s[0, 0] + l1 * f1[0] + l2 * f2[0]
        qy = s[0, 1] + l1 * f1[1] + l2 * f2[1]
        # Snap to the pixel grid so integer warps reproduce inputs exactly.
        qxr = np.rint(qx)
        qyr = np.rint(qy)
        qx = np.where(np.abs(qx - qxr) <= 1e-9, qxr, qx)
        qy = np.where(np.abs(qy - qyr) <= 1e-9, qyr, qy)

        nearest_x = np.clip(np.rint(qx).astype(np.int64), 0, w - 1)
        nearest_y = np.clip(np.rint(qy).astype(np.int64), 0, h - 1)
        valid = (
            inside
            & (qx >= 0) & (qx <= w - 1) & (qy >= 0) & (qy <= h - 1)
            & mask[nearest_y, nearest_x]
        )
        if not valid.any():
            continue

        vy, vx = np.nonzero(valid)
        sx = qx[vy, vx]
        sy = qy[vy, vx]
        color = bilinear_sample(image, sx, sy)
        wgt = bilinear_sample(weights, sx, sy)
        oy = gy[vy, vx]
        ox = gx[vy, vx]

        better = ~layer.coverage[oy, ox] | (wgt > layer.weight[oy, ox])
        oy, ox = oy[better], ox[better]
        layer.color[oy, ox] = color[better]
        layer.weight[oy, ox] = wgt[better]
        layer.coverage[oy, ox] = True
    return skipped


@dataclass
class WarpStats:
    """Counters surfaced in the synthesis report."""

    degenerate_triangles: int = 0
    dropped_units: int = 0
    units_warped: int = 0
    max_residual: float = 0.0
    per_slot_coverage: dict = field(default_factory=dict)


def collect_controls(
    unit_mask: np.ndarray,
    bbox: tuple[int, int, int, int],
    weights: np.ndarray,
    alpha_map: np.ndarray,
    slot: str,
    t: float,
    bundle,
    weight_threshold: float,
    stride: int = DEFAULT_STRIDE,
    stride_min: int = DEFAULT_STRIDE_MIN,
) -> WarpControls:
    """Gather reliable control pixels for one unit.

    Only pixels whose validation weight exceeds the threshold qualify.
    Units with plenty of candidates are subsampled on a stride grid to
    keep the solve small.
    """
    x0, y0, x1, y1 = bbox
    sub = unit_mask[y0 : y1 + 1, x0 : x1 + 1] & (
        weights[y0 : y1 + 1, x0 : x1 + 1] > weight_threshold
    )
    ys, xs = np.nonzero(sub)
    if len(ys) >= stride_min and stride > 1:
        keep = ((ys % stride) == 0) & ((xs % stride) == 0)
        if keep.sum() >= 2:
            ys, xs = ys[keep], xs[keep]
    ys = ys + y0
    xs = xs + x0
    points = np.stack([xs, ys], axis=1).astype(np.float64)
    targets = target_position(points, slot, t, bundle) if len(points) else points
    return WarpControls(
        points=points,
        targets=np.asarray(targets, dtype=np.float64).reshape(-1, 2),
        alpha=alpha_map[ys, xs],
        weight=weights[ys, xs],
    )


def warp_task(
    images: dict[str, np.ndarray],
    maps: dict[str, SuperpixelMap],
    weights: dict[str, np.ndarray],
    bundle,
    t: float,
    cell: float = DEFAULT_CELL,
    stride: int = DEFAULT_STRIDE,
    stride_min: int = DEFAULT_STRIDE_MIN,
    edge_threshold: float = DEFAULT_EDGE_THRESHOLD,
    weight_threshold: float = 0.96,
    weight_data_term: bool = True,
) -> tuple[dict[str, WarpedLayer], WarpStats]:
    """Warp all three task frames to the synthesis time.

    Source units are rendered from their full masks; reference units
    additionally drop pixels that failed validation, since unreliable
    reference content must not reach the blend. Units with fewer than
    two controls cannot be solved (the similarity term is invariant
    under global similarity transforms) and are dropped with a counter.
    """
    h, w = images[SLOT_SOURCE].shape[:2]
    layers = {slot: WarpedLayer.empty(h, w) for slot in images}
    stats = WarpStats()

    for slot, image in images.items():
        spmap = maps[slot]
        wmap = weights[slot]
        alpha_map = np.where(
            luma_gradient(image) > edge_threshold, EDGE_ALPHA, FLAT_ALPHA
        )
        labels = spmap.labels
        region_by_id = {r.id: r for r in spmap.regions}

        for unit in spmap.units():
            boxes = [region_by_id[m].bbox for m in unit.members]
            x0 = min(bx[0] for bx in boxes)
            y0 = min(bx[1] for bx in boxes)
            x1 = max(bx[2] for bx in boxes)
            y1 = max(bx[3] for bx in boxes)

            unit_mask = np.zeros((h, w), dtype=bool)
            crop = labels[y0 : y1 + 1, x0 : x1 + 1]
            unit_mask[y0 : y1 + 1, x0 : x1 + 1] = np.isin(crop, unit.members)

            controls = collect_controls(
                unit_mask,
                (x0, y0, x1, y1),
                wmap,
                alpha_map,
                slot,
                t,
                bundle,
                weight_threshold,
                stride,
                stride_min,
            )
            if len(controls) < 2:
                stats.dropped_units += 1
                continue

            mesh = build_mesh((x0, y0, x1, y1), cell)
            warped, residual = solve_warp(
                mesh,
                controls,
                region_label=f"{slot} unit {unit.id}",
                use_weights=weight_data_term,
            )
            stats.max_residual = max(stats.max_residual, residual)
            stats.units_warped += 1

            raster_mask = unit_mask
            if slot != SLOT_SOURCE:
                raster_mask = unit_mask & (wmap > weight_threshold)
            stats.degenerate_triangles += rasterize(
                image, wmap, raster_mask, mesh, warped, layers[slot]
            )

        stats.per_slot_coverage[slot] = float(layers[slot].coverage.mean())
    return layers, stats
