import math

import numpy as np
import pytest

from src.app.errors import ConfigError, GridBoundsError, InvalidViewError, NoHypothesisError
from src.app.world import (
    ABSENT,
    OBJECT_PRESETS,
    SINGLE_CELL,
    CameraView,
    DistanceBand,
    GridWorld,
    ObjectPose,
    ObjectSpec,
    band_matrix,
    dist,
    distance_band,
    enumerate_poses,
    interior_centers,
    num_at_band,
    occupied_blocks,
    reduced_centers,
    view_footprint,
)

W8 = GridWorld(8, 8)
DOMINO = OBJECT_PRESETS["domino"]


def test_block_ids_are_row_major_and_one_based():
    w = GridWorld(3, 4)
    assert w.n_blocks == 12
    assert w.block_id(1, 1) == 1
    assert w.block_id(2, 1) == 5
    assert w.coords(12) == (3, 4)
    for b in w.blocks():
        assert w.block_id(*w.coords(b)) == b


def test_out_of_grid_ids_raise():
    with pytest.raises(GridBoundsError):
        W8.coords(65)
    with pytest.raises(GridBoundsError):
        W8.block_id(0, 3)


def test_world_needs_a_block():
    with pytest.raises(ConfigError):
        GridWorld(0, 3)


def test_zoom_two_interior_window_has_nine_blocks():
    center = W8.block_id(4, 4)
    fp = view_footprint(W8, CameraView(center, 2))
    expected = {W8.block_id(r, c) for r in (3, 4, 5) for c in (3, 4, 5)}
    assert fp == expected


def test_zoom_one_sees_only_its_center():
    for j in (1, 28, 64):
        assert view_footprint(W8, CameraView(j, 1)) == {j}


def test_corner_window_is_clipped():
    fp = view_footprint(W8, CameraView(1, 3))
    assert len(fp) == 9
    assert fp == {W8.block_id(r, c) for r in (1, 2, 3) for c in (1, 2, 3)}


def test_view_outside_grid_is_rejected():
    with pytest.raises(InvalidViewError):
        view_footprint(W8, CameraView(65, 1))


def test_listed_distances():
    w = GridWorld(6, 6)
    b = w.block_id(1, 1)
    assert dist(w, b, b) == 0
    assert dist(w, b, w.block_id(1, 2)) == 1
    assert dist(w, b, w.block_id(2, 2)) == pytest.approx(math.sqrt(2))
    assert dist(w, b, w.block_id(3, 1)) == 2
    assert dist(w, b, w.block_id(3, 3)) == pytest.approx(2 * math.sqrt(2))
    assert dist(w, b, w.block_id(4, 2)) == pytest.approx(math.sqrt(10))


def test_bands_at_the_listed_distances():
    w = GridWorld(6, 6)
    b = w.block_id(1, 1)
    assert distance_band(w, b, b) == DistanceBand.D0
    assert distance_band(w, b, w.block_id(1, 2)) == DistanceBand.D1
    assert distance_band(w, b, w.block_id(2, 2)) == DistanceBand.D1
    assert distance_band(w, b, w.block_id(3, 1)) == DistanceBand.D2
    assert distance_band(w, b, w.block_id(3, 3)) == DistanceBand.D3
    assert distance_band(w, b, w.block_id(4, 2)) == DistanceBand.D4
    assert distance_band(w, b, w.block_id(5, 1)) == DistanceBand.D5


def test_band_matrix_matches_pairwise_bands():
    w = GridWorld(5, 7)
    m = band_matrix(w)
    assert m.shape == (35, 35)
    for i in w.blocks():
        for j in w.blocks():
            assert m[i - 1, j - 1] == distance_band(w, i, j)
    assert not m.flags.writeable


def test_dist_is_a_metric_on_random_triples():
    rng = np.random.default_rng(3)
    for _ in range(500):
        i, j, k = (int(x) for x in rng.integers(1, 65, size=3))
        assert dist(W8, i, j) == dist(W8, j, i)
        assert (dist(W8, i, j) == 0) == (i == j)
        assert dist(W8, i, k) <= dist(W8, i, j) + dist(W8, j, k) + 1e-12


def test_checkerboard_reduction():
    centers = reduced_centers(W8, DOMINO)
    assert len(centers) == 32
    assert all(sum(W8.coords(c)) % 2 == 0 for c in centers)
    assert 1 in centers
    assert reduced_centers(W8, SINGLE_CELL) == tuple(range(1, 65))
    assert reduced_centers(GridWorld(1, 1), DOMINO) == (1,)


def test_interior_band_counts_on_the_reduced_lattice():
    centers = reduced_centers(W8, DOMINO)
    interior = interior_centers(W8, centers)
    assert interior
    bands = (DistanceBand.D1, DistanceBand.D2, DistanceBand.D3, DistanceBand.D4)
    for i in interior:
        assert tuple(num_at_band(W8, centers, i, d) for d in bands) == (4, 4, 4, 8)


def test_interior_band_counts_hold_on_larger_grids():
    for rows, cols in ((6, 6), (7, 9), (10, 8)):
        w = GridWorld(rows, cols)
        centers = reduced_centers(w, DOMINO)
        bands = (DistanceBand.D1, DistanceBand.D2, DistanceBand.D3, DistanceBand.D4)
        for i in interior_centers(w, centers):
            assert tuple(num_at_band(w, centers, i, d) for d in bands) == (4, 4, 4, 8)


def test_interior_distances_are_exactly_the_four_listed_values():
    centers = reduced_centers(W8, DOMINO)
    i = interior_centers(W8, centers)[0]
    near = {round(dist(W8, i, j) ** 2) for j in centers if j != i and dist(W8, i, j) <= math.sqrt(10) + 1e-9}
    assert near == {2, 4, 8, 10}


def test_corner_center_has_one_d1_neighbor():
    centers = reduced_centers(W8, DOMINO)
    assert num_at_band(W8, centers, 1, DistanceBand.D1) == 1


def test_max_zoom_footprints_cover_the_grid():
    for spec in (DOMINO, SINGLE_CELL):
        covered = set()
        for c in reduced_centers(W8, spec):
            covered |= view_footprint(W8, CameraView(c, 3))
        assert covered == set(W8.blocks())


def test_enumerate_poses_orders_and_counts():
    w = GridWorld(2, 2)
    poses = enumerate_poses(w, SINGLE_CELL, allow_absent=True)
    assert len(poses) == 5
    assert poses[-1] == ABSENT
    assert [p.anchor for p in poses[:-1]] == [1, 2, 3, 4]

    dominoes = enumerate_poses(w, DOMINO)
    assert len(dominoes) == 4
    assert dominoes == sorted(dominoes, key=lambda p: (p.anchor, p.orientation))
    for p in dominoes:
        assert len(occupied_blocks(w, DOMINO, p)) == 2


def test_enumerate_poses_is_stable():
    assert enumerate_poses(W8, DOMINO) == enumerate_poses(W8, DOMINO)


def test_no_placement_without_absence_raises():
    with pytest.raises(NoHypothesisError):
        enumerate_poses(GridWorld(1, 1), OBJECT_PRESETS["bar3"])
    assert enumerate_poses(GridWorld(1, 1), OBJECT_PRESETS["bar3"], allow_absent=True) == [ABSENT]


def test_occupied_blocks_of_a_vertical_domino():
    pose = ObjectPose.placed(W8.block_id(2, 3), 1)
    assert occupied_blocks(W8, DOMINO, pose) == {W8.block_id(2, 3), W8.block_id(3, 3)}
    assert occupied_blocks(W8, DOMINO, ABSENT) == frozenset()


def test_pose_leaving_the_grid_raises():
    with pytest.raises(GridBoundsError):
        occupied_blocks(W8, DOMINO, ObjectPose.placed(8, 0))


def test_object_spec_validation():
    with pytest.raises(ConfigError):
        ObjectSpec(orientations=(((0, 0), (0, 2)),), aspect_ratio=2.0)
    with pytest.raises(ConfigError):
        ObjectSpec(orientations=(((0, 0), (0, 1), (0, 2), (0, 3)),), aspect_ratio=4.0)
    with pytest.raises(ConfigError):
        ObjectSpec(orientations=(), aspect_ratio=1.0)
    ok = ObjectSpec(orientations=[[(0, 0), (1, 0), (1, 1)]], aspect_ratio=1.0, name="ell")
    assert ok.orientations == (((0, 0), (1, 0), (1, 1)),)


def test_presets_are_built_when_the_module_loads():
    assert set(OBJECT_PRESETS) == {"cell", "domino", "bar3"}
    assert SINGLE_CELL.orientations == (((0, 0),),)
    assert OBJECT_PRESETS["bar3"].orientations[1] == ((0, 0), (1, 0), (2, 0))
    assert DOMINO.aspect_ratio == 2.0
