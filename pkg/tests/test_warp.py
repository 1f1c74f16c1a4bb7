"""Mesh construction, the warp solve, and rasterization."""

import numpy as np
import pytest

from framefuse.errors import RankDeficientWarpError, WarpError
from framefuse.flow import FlowBundle
from framefuse.warp import (
    MeshGrid,
    WarpControls,
    WarpedLayer,
    build_mesh,
    inverse_bilinear,
    rasterize,
    solve_warp,
    target_position,
    warp_energy,
)


def _controls(points, targets, alpha=None, weight=None):
    points = np.asarray(points, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = len(points)
    return WarpControls(
        points=points,
        targets=targets,
        alpha=np.ones(n) if alpha is None else np.asarray(alpha, float),
        weight=np.ones(n) if weight is None else np.asarray(weight, float),
    )


def _random_controls(mesh, rng, n=40):
    x0, y0 = mesh.origin
    w = mesh.cells_x * mesh.cell
    h = mesh.cells_y * mesh.cell
    points = np.column_stack(
        [rng.uniform(x0, x0 + w, n), rng.uniform(y0, y0 + h, n)]
    )
    targets = points + rng.uniform(-2.5, 2.5, (n, 2))
    alpha = rng.choice([0.5, 1.0], n)
    weight = rng.uniform(0.5, 1.0, n)
    return _controls(points, targets, alpha, weight)


# ----------------------------------------------------------------------- mesh


def test_build_mesh_small_box_single_cell():
    mesh = build_mesh((0, 0, 9, 9), cell=16.0)
    assert mesh.lattice_shape == (2, 2)
    assert len(mesh.triangles) == 2
    assert np.allclose(mesh.vertices[0], (0.0, 0.0))
    assert np.allclose(mesh.vertices[-1], (16.0, 16.0))


def test_build_mesh_rounds_up_to_cells():
    mesh = build_mesh((0, 0, 39, 19), cell=16.0)
    assert mesh.lattice_shape == (4, 3)
    assert mesh.cells_x == 3 and mesh.cells_y == 2
    assert len(mesh.triangles) == 12
    # Less than one cell of overhang beyond the box.
    assert mesh.vertices[:, 0].max() - 39 < 16.0
    assert mesh.vertices[:, 1].max() - 19 < 16.0


def test_build_mesh_offset_origin():
    mesh = build_mesh((10, 20, 25, 27), cell=8.0)
    assert mesh.origin == (10.0, 20.0)
    assert mesh.lattice_shape == (3, 2)
    cx, cy = mesh.cell_of(np.array([17.0]), np.array([26.0]))
    assert (cx[0], cy[0]) == (0, 0)


def test_build_mesh_rejects_bad_input():
    with pytest.raises(WarpError):
        build_mesh((5, 5, 4, 9))
    with pytest.raises(WarpError):
        build_mesh((0, 0, 4, 4), cell=0.0)


def test_inverse_bilinear_corners_and_center():
    corners = np.array([[0.0, 0.0], [8.0, 0.0], [0.0, 8.0], [8.0, 8.0]])
    assert np.allclose(inverse_bilinear((0, 0), corners), [1, 0, 0, 0])
    assert np.allclose(inverse_bilinear((8, 8), corners), [0, 0, 0, 1])
    assert np.allclose(inverse_bilinear((4, 4), corners), [0.25] * 4)
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = rng.uniform(0, 8, 2)
        c = inverse_bilinear(tuple(p), corners)
        assert np.all(c >= 0) and c.sum() == pytest.approx(1.0, abs=1e-12)
        # The coefficients reproduce the point itself.
        assert np.allclose(c @ corners, p, atol=1e-12)


def test_inverse_bilinear_outside_cell():
    corners = np.array([[0.0, 0.0], [8.0, 0.0], [0.0, 8.0], [8.0, 8.0]])
    with pytest.raises(WarpError):
        inverse_bilinear((9.0, 4.0), corners)


# ----------------------------------------------------------- target positions


def _bundle_with(**fields):
    h, w = 12, 12
    full = {}
    for name, (u, v) in fields.items():
        f = np.empty((h, w, 2), dtype=np.float32)
        f[..., 0] = u
        f[..., 1] = v
        full[name] = f
    return FlowBundle(**full)


def test_target_position_reference_frames():
    bundle = _bundle_with(
        ref_prev_to_ref_next=(4.0, 0.0), ref_next_to_ref_prev=(-4.0, 0.0)
    )
    p = np.array([[5.0, 5.0]])
    # The earlier reference moves forward by t of its flow.
    assert np.allclose(
        target_position(p, "ref_prev", 0.25, bundle), [[6.0, 5.0]]
    )
    # The later reference moves backward by (1 - t) of its own flow.
    assert np.allclose(
        target_position(p, "ref_next", 0.25, bundle), [[2.0, 5.0]]
    )


def test_target_position_source_blends_both_flows():
    bundle = _bundle_with(
        src_to_ref_prev=(-2.0, 0.0), src_to_ref_next=(6.0, 2.0)
    )
    p = np.array([[4.0, 4.0]])
    out = target_position(p, "source", 0.5, bundle)
    assert np.allclose(out, [[4.0 - 1.0 + 3.0, 4.0 + 1.0]])


def test_target_position_single_point_shape():
    bundle = _bundle_with(ref_prev_to_ref_next=(2.0, 2.0))
    out = target_position((3.0, 3.0), "ref_prev", 0.5, bundle)
    assert out.shape == (2,)
    assert np.allclose(out, (4.0, 4.0))


def test_target_position_unknown_slot():
    bundle = _bundle_with(ref_prev_to_ref_next=(0.0, 0.0))
    with pytest.raises(WarpError):
        target_position(np.zeros((1, 2)), "bogus", 0.5, bundle)


# --------------------------------------------------------------------- solver


def test_solve_warp_no_controls_is_identity():
    mesh = build_mesh((0, 0, 31, 31), cell=16.0)
    warped, residual = solve_warp(mesh, _controls([], np.zeros((0, 2))))
    assert np.array_equal(warped, mesh.vertices)
    assert residual == 0.0


def test_solve_warp_pure_translation():
    mesh = build_mesh((0, 0, 47, 31), cell=16.0)
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.uniform(0, 47, 30), rng.uniform(0, 31, 30)])
    controls = _controls(pts, pts + (5.0, -3.0))
    warped, residual = solve_warp(mesh, controls)
    assert residual <= 1e-8
    assert np.allclose(warped, mesh.vertices + (5.0, -3.0), atol=1e-6)


def test_solve_warp_translation_equivariance():
    mesh = build_mesh((0, 0, 47, 47), cell=16.0)
    rng = np.random.default_rng(2)
    controls = _random_controls(mesh, rng)
    base, _ = solve_warp(mesh, controls)
    shifted = _controls(
        controls.points,
        controls.targets + (7.0, 11.0),
        controls.alpha,
        controls.weight,
    )
    moved, _ = solve_warp(mesh, shifted)
    assert np.max(np.abs(moved - (base + (7.0, 11.0)))) <= 1e-9


def test_solve_warp_residual_bound_random_instances():
    rng = np.random.default_rng(3)
    for seed in range(10):
        mesh = build_mesh((0, 0, 63, 39), cell=16.0)
        controls = _random_controls(mesh, np.random.default_rng(seed), n=60)
        warped, residual = solve_warp(mesh, controls)
        assert residual <= 1e-8
        # The solve never ends above the identity layout's energy.
        assert warp_energy(mesh, controls, warped) <= warp_energy(
            mesh, controls, mesh.vertices
        ) + 1e-9


def test_solve_warp_single_point_is_rank_deficient():
    # One control pins translation only; rotation and scale stay free,
    # so the normal equations are singular.
    mesh = build_mesh((0, 0, 15, 15), cell=16.0)
    controls = _controls([[4.0, 4.0], [4.0, 4.0]], [[6.0, 4.0], [6.0, 4.0]])
    with pytest.raises(RankDeficientWarpError):
        solve_warp(mesh, controls)


def test_solve_warp_ignores_weights_when_disabled():
    mesh = build_mesh((0, 0, 31, 31), cell=16.0)
    rng = np.random.default_rng(4)
    controls = _random_controls(mesh, rng, n=30)
    flat = _controls(controls.points, controls.targets, controls.alpha)
    weighted, _ = solve_warp(mesh, controls, use_weights=False)
    plain, _ = solve_warp(mesh, flat, use_weights=True)
    assert np.allclose(weighted, plain, atol=1e-9)


# ---------------------------------------------------------------- rasterizing


def _texture(h, w, seed=0):
    rng = np.random.default_rng(seed)
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.full((h, w, 3), 0.5)
    for _ in range(4):
        kx, ky = rng.uniform(-0.3, 0.3, 2)
        phase = rng.uniform(0, 2 * np.pi, 3)
        img += 0.1 * np.sin(2 * np.pi * (kx * gx + ky * gy)[..., None] + phase)
    return np.clip(img, 0, 1)


def test_rasterize_identity_reproduces_input():
    img = _texture(32, 32)
    weights = np.full((32, 32), 0.7)
    mask = np.ones((32, 32), dtype=bool)
    mesh = build_mesh((0, 0, 31, 31), cell=16.0)
    layer = WarpedLayer.empty(32, 32)
    skipped = rasterize(img, weights, mask, mesh, mesh.vertices, layer)
    assert skipped == 0
    assert layer.coverage.all()
    assert np.array_equal(layer.color, img)
    assert np.allclose(layer.weight, 0.7, atol=1e-12)


def test_rasterize_translation_moves_content():
    img = _texture(32, 32, seed=9)
    weights = np.ones((32, 32))
    mask = np.ones((32, 32), dtype=bool)
    mesh = build_mesh((0, 0, 31, 31), cell=16.0)
    layer = WarpedLayer.empty(32, 32)
    rasterize(img, weights, mask, mesh, mesh.vertices + (3.0, 0.0), layer)
    # Vacated columns receive nothing; the rest shifts right by 3.
    assert not layer.coverage[:, :3].any()
    assert layer.coverage[:, 3:].all()
    assert np.array_equal(layer.color[:, 3:], img[:, :-3])


def test_rasterize_respects_region_mask():
    img = _texture(24, 24)
    weights = np.ones((24, 24))
    mask = np.zeros((24, 24), dtype=bool)
    mask[:, :12] = True
    mesh = build_mesh((0, 0, 23, 23), cell=24.0)
    layer = WarpedLayer.empty(24, 24)
    rasterize(img, weights, mask, mesh, mesh.vertices, layer)
    assert layer.coverage[:, :12].all()
    assert not layer.coverage[:, 12:].any()


def test_rasterize_counts_degenerate_triangles():
    img = _texture(16, 16)
    weights = np.ones((16, 16))
    mask = np.ones((16, 16), dtype=bool)
    mesh = build_mesh((0, 0, 15, 15), cell=16.0)
    collapsed = mesh.vertices.copy()
    collapsed[:, 0] = 3.0  # all vertices on a vertical line
    layer = WarpedLayer.empty(16, 16)
    skipped = rasterize(img, weights, mask, mesh, collapsed, layer)
    assert skipped == len(mesh.triangles)
    assert not layer.coverage.any()


def test_rasterize_conflict_keeps_higher_weight():
    img_low = np.full((16, 16, 3), 0.2)
    img_high = np.full((16, 16, 3), 0.9)
    mask = np.ones((16, 16), dtype=bool)
    mesh = build_mesh((0, 0, 15, 15), cell=16.0)
    layer = WarpedLayer.empty(16, 16)
    rasterize(img_low, np.full((16, 16), 0.3), mask, mesh, mesh.vertices, layer)
    rasterize(img_high, np.full((16, 16), 0.8), mask, mesh, mesh.vertices, layer)
    assert np.allclose(layer.color, 0.9)
    # A weaker write afterwards changes nothing.
    rasterize(img_low, np.full((16, 16), 0.1), mask, mesh, mesh.vertices, layer)
    assert np.allclose(layer.color, 0.9)
    assert np.allclose(layer.weight, 0.8)
