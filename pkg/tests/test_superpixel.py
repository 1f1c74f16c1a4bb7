"""Segmentation invariants, region records, and bad-region merging."""

import numpy as np
import pytest
from skimage.measure import label as connected_components

from framefuse.errors import NoGoodRegionsError, SegmentationError
from framefuse.superpixel import SuperpixelMap, classify, merge_bad, segment


def _two_tone(h, w):
    img = np.full((h, w, 3), 0.25)
    img[:, w // 2 :] = 0.75
    rng = np.random.default_rng(11)
    return np.clip(img + rng.uniform(0, 0.02, img.shape), 0, 1)


def test_segment_labels_contiguous_and_connected():
    img = _two_tone(64, 64)
    spmap = segment(img, k=16)
    labels = spmap.labels
    n = spmap.count
    assert labels.min() == 0 and labels.max() == n - 1
    assert sorted(np.unique(labels)) == list(range(n))
    # Every region is one 4-connected component.
    for rid in range(n):
        comp = connected_components(labels == rid, connectivity=1)
        assert comp.max() == 1
    # Region count lands near the request.
    assert 8 <= n <= 32


def test_segment_region_records_consistent():
    img = _two_tone(48, 40)
    flow = np.zeros((48, 40, 2))
    flow[..., 0] = 2.0
    spmap = segment(img, k=9, flow=flow)
    total = 0
    for r in spmap.regions:
        ys, xs = np.nonzero(spmap.labels == r.id)
        total += len(ys)
        assert r.pixel_count == len(ys)
        assert r.bbox == (xs.min(), ys.min(), xs.max(), ys.max())
        expect = img[ys, xs].mean(axis=0)
        assert np.allclose(r.mean_color, expect, atol=1e-12)
        assert r.mean_flow == pytest.approx((2.0, 0.0), abs=1e-12)
        assert r.members == (r.id,)
        # Adjacency is symmetric.
        for nb in r.neighbors:
            assert r.id in spmap.regions[nb].neighbors
    assert total == 48 * 40


def test_segment_respects_strong_boundary():
    # The two-tone edge should coincide with region borders: no region
    # mixes a meaningful share of both sides.
    img = _two_tone(64, 64)
    spmap = segment(img, k=16)
    left = spmap.labels[:, : 64 // 2 - 1]
    right = spmap.labels[:, 64 // 2 + 1 :]
    assert not set(np.unique(left)) & set(np.unique(right))


def test_from_labels_rejects_gaps_and_negatives():
    bad = np.zeros((4, 4), dtype=np.int32)
    bad[0, 0] = 2  # id 1 never occurs
    with pytest.raises(SegmentationError):
        SuperpixelMap.from_labels(bad)
    neg = np.zeros((4, 4), dtype=np.int32)
    neg[0, 0] = -1
    with pytest.raises(SegmentationError):
        SuperpixelMap.from_labels(neg)


def _three_strip_map(flows, good_weights):
    """Labels 0/1/2 as vertical strips of 30x12 pixels each."""
    labels = np.zeros((30, 36), dtype=np.int32)
    labels[:, 12:24] = 1
    labels[:, 24:] = 2
    spmap = SuperpixelMap.from_labels(labels)
    weights = np.zeros((30, 36))
    for rid, w in enumerate(good_weights):
        weights[labels == rid] = w
    spmap = classify(spmap, weights, good_count=100)
    # Region flow table injected through merge_bad's explicit argument.
    return spmap, np.asarray(flows, dtype=np.float64)


def test_classify_thresholds_good_pixels():
    spmap, _ = _three_strip_map([(0, 0)] * 3, [1.0, 0.0, 1.0])
    assert [r.good for r in spmap.regions] == [True, False, True]
    # 360 pixels per strip beats the 100-pixel requirement only when
    # the weights clear the threshold.
    small = classify(spmap, np.ones((30, 36)), good_count=2000)
    assert [r.good for r in small.regions] == [False, False, False]


def test_classify_shape_mismatch():
    spmap, _ = _three_strip_map([(0, 0)] * 3, [1.0, 1.0, 1.0])
    with pytest.raises(SegmentationError):
        classify(spmap, np.ones((5, 5)))


def test_merge_bad_prefers_similar_motion():
    # Middle strip is unreliable; its motion matches region 2, so the
    # group is (1, 2) and region 0 is untouched.
    spmap, flows = _three_strip_map(
        [(0.0, 0.0), (3.0, 0.0), (3.2, 0.0)], [1.0, 0.0, 1.0]
    )
    merged = merge_bad(spmap, region_flows=flows)
    assert merged.regions[1].members == (1, 2)
    assert merged.regions[0].members == (0,)
    assert merged.regions[2].members == (2,)
    assert all(r.good for r in merged.regions)
    # Units: every region still warps (the good anchor stays standalone).
    assert sorted(u.id for u in merged.units()) == [0, 1, 2]


def test_merge_bad_chains_through_bad_neighbors():
    # Regions 0 and 1 are both unreliable; 0 must walk through 1 to
    # reach the reliable region 2. The intermediate is absorbed.
    spmap, flows = _three_strip_map(
        [(1.0, 0.0), (1.0, 0.0), (1.0, 0.0)], [0.0, 0.0, 1.0]
    )
    merged = merge_bad(spmap, region_flows=flows)
    assert merged.regions[0].members == (0, 1, 2)
    assert merged.regions[1].members == ()
    assert merged.regions[2].members == (2,)
    assert sorted(u.id for u in merged.units()) == [0, 2]


def test_merge_bad_requires_a_good_region():
    spmap, flows = _three_strip_map([(0, 0)] * 3, [0.0, 0.0, 0.0])
    with pytest.raises(NoGoodRegionsError):
        merge_bad(spmap, region_flows=flows)


def test_merge_bad_validates_flow_table():
    spmap, _ = _three_strip_map([(0, 0)] * 3, [1.0, 0.0, 1.0])
    with pytest.raises(SegmentationError):
        merge_bad(spmap, region_flows=np.zeros((2, 2)))


def test_mean_region_flow_uses_validated_pixels():
    labels = np.zeros((10, 10), dtype=np.int32)
    flow = np.full((10, 10, 2), 9.0)
    flow[:5] = (2.0, 1.0)
    weights = np.zeros((10, 10))
    weights[:5] = 1.0
    spmap = SuperpixelMap.from_labels(labels, flow=flow, weights=weights)
    assert spmap.regions[0].mean_flow == pytest.approx((2.0, 1.0), abs=1e-12)
    # Without any validated pixel the plain mean is the fallback.
    plain = SuperpixelMap.from_labels(labels, flow=flow, weights=np.zeros((10, 10)))
    assert plain.regions[0].mean_flow == pytest.approx((5.5, 5.0), abs=1e-12)
