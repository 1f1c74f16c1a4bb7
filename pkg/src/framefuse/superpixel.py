"""Motion-aware superpixel segmentation and reliability-driven merging.

Frames are over-segmented into compact regions using k-means style local
clustering on color, flow magnitude, and position. Regions whose pixels
carry too few reliable flow weights are merged with nearby reliable
regions of similar motion so every warp unit has trustworthy guidance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage
from skimage.measure import label as connected_components

from .errors import NoGoodRegionsError, SegmentationError

log = logging.getLogger(__name__)

DEFAULT_GOOD_COUNT = 100
DEFAULT_WEIGHT_THRESHOLD = 0.96
DEFAULT_TARGET_AREA = 600.0
DEFAULT_COMPACTNESS = 10.0
DEFAULT_LAMBDA_FLOW = 0.5


@dataclass(frozen=True)
class Region:
    """Bookkeeping record for one superpixel.

    `members` lists the region ids this record controls as a warp unit:
    a singleton for an ordinary region, several ids for a merged group,
    and an empty tuple for a region absorbed into another unit.
    """

    id: int
    pixel_count: int
    mean_color: tuple[float, float, float]
    mean_flow: tuple[float, float]
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive
    neighbors: frozenset[int]
    good: bool = False
    members: tuple[int, ...] = ()


@dataclass
class SuperpixelMap:
    """Label raster plus per-region records; ids are 0..n-1 and contiguous."""

    labels: np.ndarray
    regions: list[Region]

    @property
    def count(self) -> int:
        return len(self.regions)

    def units(self) -> list[Region]:
        """Regions that act as standalone warp units."""
        return [r for r in self.regions if r.members]

    @classmethod
    def from_labels(
        cls,
        labels: np.ndarray,
        image: np.ndarray | None = None,
        flow: np.ndarray | None = None,
        weights: np.ndarray | None = None,
        weight_threshold: float = DEFAULT_WEIGHT_THRESHOLD,
    ) -> "SuperpixelMap":
        """Build records directly from a label raster (used by tests and
        debug tooling; ids must already be contiguous from 0)."""
        labels = np.asarray(labels, dtype=np.int32)
        n = int(labels.max()) + 1 if labels.size else 0
        if labels.size and int(labels.min()) < 0:
            raise SegmentationError("label raster has negative ids")
        regions = _build_regions(labels, n, image, flow, weights, weight_threshold)
        return cls(labels=labels, regions=regions)


def _region_adjacency(labels: np.ndarray, n: int) -> list[set[int]]:
    neighbors: list[set[int]] = [set() for _ in range(n)]
    horiz = labels[:, :-1] != labels[:, 1:]
    vert = labels[:-1, :] != labels[1:, :]
    pairs = np.concatenate(
        [
            np.stack([labels[:, :-1][horiz], labels[:, 1:][horiz]], axis=1),
            np.stack([labels[:-1, :][vert], labels[1:, :][vert]], axis=1),
        ]
    )
    for a, b in np.unique(pairs, axis=0):
        neighbors[a].add(int(b))
        neighbors[b].add(int(a))
    return neighbors


def _build_regions(
    labels: np.ndarray,
    n: int,
    image: np.ndarray | None,
    flow: np.ndarray | None,
    weights: np.ndarray | None,
    weight_threshold: float,
) -> list[Region]:
    counts = np.bincount(labels.ravel(), minlength=n)
    if np.any(counts == 0):
        raise SegmentationError("label raster has empty region ids")

    if image is not None:
        mean_color = np.stack(
            [
                np.bincount(labels.ravel(), weights=image[..., c].ravel(), minlength=n)
                for c in range(3)
            ],
            axis=1,
        ) / counts[:, None]
    else:
        mean_color = np.zeros((n, 3))

    mean_flow = _mean_region_flow(labels, n, flow, weights, weight_threshold)

    slices = ndimage.find_objects(labels + 1)
    neighbors = _region_adjacency(labels, n)
    regions = []
    for rid in range(n):
        sy, sx = slices[rid]
        regions.append(
            Region(
                id=rid,
                pixel_count=int(counts[rid]),
                mean_color=tuple(float(c) for c in mean_color[rid]),
                mean_flow=(float(mean_flow[rid, 0]), float(mean_flow[rid, 1])),
                bbox=(sx.start, sy.start, sx.stop - 1, sy.stop - 1),
                neighbors=frozenset(neighbors[rid]),
                members=(rid,),
            )
        )
    return regions


def _mean_region_flow(
    labels: np.ndarray,
    n: int,
    flow: np.ndarray | None,
    weights: np.ndarray | None,
    weight_threshold: float,
) -> np.ndarray:
    """Mean displacement per region over validated pixels, falling back to
    all pixels for regions with no validated ones."""
    if flow is None:
        return np.zeros((n, 2))
    flat = labels.ravel()
    out = np.zeros((n, 2))
    counts_all = np.bincount(flat, minlength=n).astype(np.float64)
    sums_all = np.stack(
        [np.bincount(flat, weights=flow[..., c].ravel(), minlength=n) for c in range(2)],
        axis=1,
    )
    if weights is not None:
        good = (weights > weight_threshold).ravel()
        counts_v = np.bincount(flat[good], minlength=n).astype(np.float64)
        sums_v = np.stack(
            [
                np.bincount(flat[good], weights=flow[..., c].ravel()[good], minlength=n)
                for c in range(2)
            ],
            axis=1,
        )
    else:
        counts_v = np.zeros(n)
        sums_v = np.zeros((n, 2))
    has_valid = counts_v > 0
    out[has_valid] = sums_v[has_valid] / counts_v[has_valid, None]
    rest = ~has_valid
    out[rest] = sums_all[rest] / counts_all[rest, None]
    return out


def _initial_labels(h: int, w: int, gy: int, gx: int) -> np.ndarray:
    iy = np.minimum((np.arange(h) * gy) // h, gy - 1)
    ix = np.minimum((np.arange(w) * gx) // w, gx - 1)
    return (iy[:, None] * gx + ix[None, :]).astype(np.int32)


def _enforce_connectivity(labels: np.ndarray) -> np.ndarray:
    """Keep each id's largest 4-connected component and absorb the other
    fragments into their largest adjacent region."""
    labels = labels.copy()
    for _ in range(16):
        comp = connected_components(labels, connectivity=1, background=-1)
        n_comp = comp.max()
        if n_comp == 0:
            return labels
        comp -= 1  # 0-based component ids
        comp_sizes = np.bincount(comp.ravel(), minlength=n_comp)
        comp_label = np.full(n_comp, -1, dtype=np.int64)
        comp_label[comp.ravel()] = labels.ravel()

        # Primary component per label = the largest one.
        order = np.lexsort((comp_sizes, comp_label))
        primary = np.zeros(n_comp, dtype=bool)
        ordered = order[np.argsort(comp_label[order], kind="stable")]
        lab_of = comp_label[ordered]
        is_last = np.r_[lab_of[1:] != lab_of[:-1], True]
        primary[ordered[is_last]] = True
        if primary.all():
            return labels

        region_sizes = np.bincount(labels.ravel(), minlength=labels.max() + 1)
        frag_ids = np.flatnonzero(~primary)
        # Larger fragments first keeps absorption deterministic and quick.
        frag_ids = frag_ids[np.argsort(-comp_sizes[frag_ids], kind="stable")]
        for fid in frag_ids:
            mask = comp == fid
            dil = ndimage.binary_dilation(
                mask, structure=np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool)
            )
            ring = dil & ~mask
            cand = np.unique(labels[ring])
            cand = cand[cand != comp_label[fid]]
            if cand.size == 0:
                continue  # surrounded by sibling fragments; next pass
            target = cand[np.argmax(region_sizes[cand])]
            labels[mask] = target
            region_sizes[target] += comp_sizes[fid]
            region_sizes[comp_label[fid]] -= comp_sizes[fid]
    raise SegmentationError("connectivity enforcement did not converge")


def _relabel_contiguous(labels: np.ndarray) -> np.ndarray:
    flat = labels.ravel()
    first = np.sort(np.unique(flat, return_index=True)[1])
    mapping = np.empty(flat.max() + 1, dtype=np.int32)
    mapping[flat[first]] = np.arange(len(first), dtype=np.int32)
    return mapping[labels]


def segment(
    image: np.ndarray,
    flow_magnitude: np.ndarray | None = None,
    k: int | None = None,
    compactness: float = DEFAULT_COMPACTNESS,
    lambda_flow: float = DEFAULT_LAMBDA_FLOW,
    iterations: int = 10,
    target_area: float = DEFAULT_TARGET_AREA,
    flow: np.ndarray | None = None,
    weights: np.ndarray | None = None,
    weight_threshold: float = DEFAULT_WEIGHT_THRESHOLD,
) -> SuperpixelMap:
    """Segment a frame into roughly `k` compact superpixels.

    Clustering features are the RGB channels plus an optional flow
    magnitude channel normalized by its 95th percentile and scaled by
    `lambda_flow`, so strong motion boundaries attract region borders
    even where color is flat. With `k` unset, the count targets a mean
    region area of `target_area` pixels. `flow` and `weights` only feed
    the per-region motion statistics used later by merging.
    """
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if k is None:
        k = max(1, int(round(h * w / target_area)))
    if k < 1:
        raise SegmentationError(f"region count must be positive, got {k}")

    feats = [image[..., c] for c in range(3)]
    if flow_magnitude is not None:
        mag = np.asarray(flow_magnitude, dtype=np.float64)
        scale = np.percentile(mag, 95)
        if scale > 1e-12:
            feats.append(lambda_flow * mag / scale)
        else:
            feats.append(np.zeros_like(mag))
    fmap = np.stack(feats, axis=-1)

    spacing = np.sqrt(h * w / k)
    gx = max(1, int(round(w / spacing)))
    gy = max(1, int(round(h / spacing)))
    seed_y = ((np.arange(gy) + 0.5) * h / gy)
    seed_x = ((np.arange(gx) + 0.5) * w / gx)
    centers_pos = np.stack(
        np.meshgrid(seed_y, seed_x, indexing="ij"), axis=-1
    ).reshape(-1, 2)
    n = len(centers_pos)
    centers_feat = fmap[
        np.clip(centers_pos[:, 0].astype(int), 0, h - 1),
        np.clip(centers_pos[:, 1].astype(int), 0, w - 1),
    ]

    labels = _initial_labels(h, w, gy, gx)
    m2 = (compactness / 100.0) ** 2 / spacing**2
    win = int(np.ceil(2 * spacing))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    for _ in range(max(1, iterations)):
        dist = np.full((h, w), np.inf)
        new_labels = labels.copy()
        for c in range(n):
            cy, cx = centers_pos[c]
            y0, y1 = max(0, int(cy) - win), min(h, int(cy) + win + 1)
            x0, x1 = max(0, int(cx) - win), min(w, int(cx) + win + 1)
            if y0 >= y1 or x0 >= x1:
                continue
            df = fmap[y0:y1, x0:x1] - centers_feat[c]
            d2 = (df * df).sum(axis=-1)
            d2 += m2 * (
                (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
            )
            closer = d2 < dist[y0:y1, x0:x1]
            dist[y0:y1, x0:x1][closer] = d2[closer]
            new_labels[y0:y1, x0:x1][closer] = c
        labels = new_labels

        flat = labels.ravel()
        cnt = np.bincount(flat, minlength=n).astype(np.float64)
        occupied = cnt > 0
        sy = np.bincount(flat, weights=yy.ravel(), minlength=n)
        sx = np.bincount(flat, weights=xx.ravel(), minlength=n)
        centers_pos[occupied, 0] = sy[occupied] / cnt[occupied]
        centers_pos[occupied, 1] = sx[occupied] / cnt[occupied]
        for f in range(fmap.shape[-1]):
            sf = np.bincount(flat, weights=fmap[..., f].ravel(), minlength=n)
            centers_feat[occupied, f] = sf[occupied] / cnt[occupied]

    labels = _relabel_contiguous(_enforce_connectivity(labels))
    regions = _build_regions(
        labels, int(labels.max()) + 1, image, flow, weights, weight_threshold
    )
    log.debug("segmented %dx%d frame into %d regions (k=%d)", w, h, len(regions), k)
    return SuperpixelMap(labels=labels, regions=regions)


def classify(
    spmap: SuperpixelMap,
    weights: np.ndarray,
    good_count: int = DEFAULT_GOOD_COUNT,
    weight_threshold: float = DEFAULT_WEIGHT_THRESHOLD,
) -> SuperpixelMap:
    """Flag regions holding more than `good_count` reliable pixels.

    A pixel counts as reliable when its flow validation weight exceeds
    `weight_threshold`.
    """
    if weights.shape != spmap.labels.shape:
        raise SegmentationError(
            f"weight map shape {weights.shape} does not match labels "
            f"{spmap.labels.shape}"
        )
    reliable = np.bincount(
        spmap.labels[weights > weight_threshold].ravel(), minlength=spmap.count
    )
    regions = [
        replace(r, good=bool(reliable[r.id] > good_count)) for r in spmap.regions
    ]
    return SuperpixelMap(labels=spmap.labels, regions=regions)


def merge_bad(
    spmap: SuperpixelMap,
    region_flows: np.ndarray | None = None,
    frame_label: str = "frame",
) -> SuperpixelMap:
    """Group unreliable regions with nearby reliable ones.

    Each unreliable region seeds a breadth-first expansion over the
    region adjacency graph: at every step the reliable neighbor with the
    most similar motion joins if one exists (which ends the group),
    otherwise the most motion-similar unreliable neighbor joins and the
    search continues. Reliable regions stay standalone units even when
    they anchor a group; absorbed unreliable regions stop being units.
    The label raster is never rewritten.
    """
    regions = spmap.regions
    n = len(regions)
    good = np.array([r.good for r in regions], dtype=bool)
    if region_flows is None:
        region_flows = np.array([r.mean_flow for r in regions], dtype=np.float64)
    else:
        region_flows = np.asarray(region_flows, dtype=np.float64)
        if region_flows.shape != (n, 2):
            raise SegmentationError(
                f"region flow table must be ({n}, 2), got {region_flows.shape}"
            )
    if not good.any():
        raise NoGoodRegionsError(frame_label)

    members: dict[int, tuple[int, ...]] = {
        r.id: ((r.id,) if r.good else ()) for r in regions
    }
    absorbed: set[int] = set()

    for seed in range(n):
        if good[seed] or seed in absorbed:
            continue
        group = [seed]
        in_group = {seed}
        seed_flow = region_flows[seed]
        while True:
            frontier = sorted(
                set().union(*(regions[r].neighbors for r in group)) - in_group
            )
            if not frontier:
                raise SegmentationError(
                    f"region {seed} in {frame_label} has no reachable neighbors"
                )
            good_nbrs = [r for r in frontier if good[r]]
            pool = good_nbrs if good_nbrs else frontier
            diffs = np.linalg.norm(region_flows[pool] - seed_flow, axis=1)
            pick = pool[int(np.argmin(diffs))]  # argmin ties break to lowest id
            group.append(pick)
            in_group.add(pick)
            if good[pick]:
                break
        members[seed] = tuple(group)
        absorbed.update(r for r in group if not good[r] and r != seed)

    out = []
    for r in regions:
        memb = members[r.id]
        out.append(replace(r, members=memb, good=r.good or bool(memb)))
    return SuperpixelMap(labels=spmap.labels, regions=out)
