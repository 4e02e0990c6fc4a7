import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import brute_distance_field
from onlinenav.maps import empty_room, random_obstacle_map
from onlinenav.world import (MapParseError, Point2, Pose, WorldMap, clearance, clearance_many,
                             is_navigable, load_map, raycast, raycast_many, wrap_angle)
from onlinenav.world import _raycast_vectorized


def grid_text(rows, cell=0.5, name="t"):
    return f"cell_size={cell}\nname={name}\n" + "\n".join(rows) + "\n"


class TestLoadMap:
    def test_all_free_3x3_keeps_one_free_cell(self):
        w = load_map(grid_text(["...", "...", "..."]))
        assert w.occupancy.shape == (3, 3)
        assert w.occupancy.sum() == 8
        assert w.distance_field[1, 1] > 0

    def test_single_obstacle_adjacency(self):
        w = load_map(grid_text([".....", ".....", "..#..", ".....", "....."], cell=0.3))
        assert w.distance_field[2, 2] == 0.0
        # the neighbour of the centre obstacle is one cell away from it (and from the border)
        assert w.distance_field[2, 1] == pytest.approx(0.3)

    def test_distance_field_matches_brute_force(self):
        w = random_obstacle_map(7, (20, 20), 0.15)
        assert np.abs(w.distance_field - brute_distance_field(w.occupancy, w.cell_size)).max() < 1e-6

    @pytest.mark.parametrize("text, line", [
        ("cell_size=x\nname=a\n...\n", 1),
        ("cellsize=1\nname=a\n...\n", 1),
        ("cell_size=1\nnam=a\n...\n", 2),
        ("cell_size=1\nname=a\n...\n..\n", 4),
        ("cell_size=1\nname=a\n...\n.x.\n", 4),
        ("cell_size=1\nname=a\n...\n...\n", 4),
        ("cell_size=1\nname=a\n.\t.\n", 3),
    ])
    def test_parse_errors_name_the_line(self, text, line):
        with pytest.raises(MapParseError) as exc:
            load_map(text)
        assert exc.value.line == line
        assert f"line {line}" in str(exc.value)

    def test_round_trip_text(self):
        w = random_obstacle_map(1, (12, 9))
        w2 = load_map(w.to_text())
        assert np.array_equal(w.occupancy, w2.occupancy)
        assert w2.scene_id == w.scene_id and w2.cell_size == w.cell_size

    def test_boundary_closed(self):
        w = WorldMap(np.zeros((6, 7), dtype=bool), 0.2)
        assert w.occupancy[0].all() and w.occupancy[-1].all()
        assert w.occupancy[:, 0].all() and w.occupancy[:, -1].all()


class TestClearance:
    def test_cell_center_is_exact(self):
        w = random_obstacle_map(2, (15, 15))
        for r, c in [(3, 4), (7, 7), (10, 2)]:
            p = w.cell_center(r, c)
            assert clearance(w, p) == w.distance_field[r, c]

    def test_midpoint_interpolates(self):
        occ = np.zeros((7, 9), dtype=bool)
        w = WorldMap(occ, 0.2)
        r, c = 2, 3
        a = w.distance_field[r, c]
        b = w.distance_field[r, c + 1]
        mid = Point2((c + 1.0) * 0.2, (r + 0.5) * 0.2)
        assert clearance(w, mid) == pytest.approx(0.5 * (a + b), abs=1e-12)

    def test_close_to_brute_force_point_distance(self):
        w = random_obstacle_map(3, (30, 30))
        rng = np.random.default_rng(0)
        rr, cc = np.nonzero(w.occupancy)
        centers = np.stack([(cc + 0.5), (rr + 0.5)], axis=1) * w.cell_size
        ex, ey = w.extent
        pts = rng.uniform([0, 0], [ex, ey], size=(50, 2))
        got = clearance_many(w, pts)
        truth = np.linalg.norm(pts[:, None] - centers[None], axis=-1).min(axis=1)
        assert np.all(np.abs(got - truth) <= 1.5 * w.cell_size)

    def test_out_of_bounds_is_zero(self):
        w = empty_room(4, 4)
        assert clearance(w, (-1.0, 2.0)) == 0.0
        assert not is_navigable(w, (10.0, 1.0), 0.0)

    @given(st.floats(0.3, 3.7), st.floats(0.3, 3.7), st.floats(0.3, 3.7), st.floats(0.3, 3.7))
    def test_lipschitz_up_to_discretization(self, x1, y1, x2, y2):
        w = random_obstacle_map(4, (20, 20))
        d = abs(clearance(w, (x1, y1)) - clearance(w, (x2, y2)))
        assert d <= math.hypot(x1 - x2, y1 - y2) + 2 * w.cell_size + 1e-12


class TestNavigable:
    def test_room_center(self, room):
        assert is_navigable(room, (5.0, 5.0), 0.25)

    def test_obstacle_cell(self):
        w = random_obstacle_map(5, (20, 20))
        r, c = map(int, np.argwhere(w.occupancy)[5])
        assert not is_navigable(w, w.cell_center(r, c), 0.0)

    def test_near_wall(self, room):
        # the wall cell centers sit at y = 0.1, so y = 0.3 is 0.2 m from them
        assert clearance(room, (5.0, 0.3)) == pytest.approx(0.2)
        assert not is_navigable(room, (5.0, 0.3), 0.25)

    @given(st.floats(0.0, 2.0), st.floats(0.0, 2.0))
    def test_monotone_in_radius(self, r1, r2):
        w = random_obstacle_map(6, (20, 20))
        p = (1.9, 2.1)
        lo, hi = sorted([r1, r2])
        if is_navigable(w, p, hi):
            assert is_navigable(w, p, lo)


class TestRaycast:
    def test_clamped_in_corridor(self):
        w = empty_room(12, 2)
        assert raycast(w, (1.0, 1.0), 0.0, 5.0) == 5.0

    def test_wall_two_meters_ahead(self):
        w = empty_room(6, 4)
        east = w.extent[0] - w.cell_size  # inner face of the boundary column
        origin = (east - 2.0, 2.0)
        d = raycast(w, origin, 0.0, 5.0)
        # 1 mm marching oracle
        ts = np.arange(0, 2.5, 0.001)
        xs = origin[0] + ts
        cols = np.minimum(np.floor(xs / w.cell_size).astype(int), w.width - 1)
        hit = ts[np.nonzero(w.occupancy[int(2.0 / w.cell_size), cols])[0][0]]
        assert abs(d - 2.0) <= w.cell_size / 2
        assert abs(d - hit) <= 0.001 + 1e-9

    def test_adjacent_to_wall(self, room):
        assert raycast(room, (5.0, 0.25), -math.pi / 2, 5.0) < room.cell_size

    @given(st.floats(-math.pi, math.pi), st.floats(0.1, 3.0), st.floats(0.1, 3.0))
    def test_monotone_in_max_range(self, angle, r1, r2):
        w = random_obstacle_map(8, (25, 25), 0.1)
        o = (2.5, 2.5)
        lo, hi = sorted([r1, r2])
        assert raycast(w, o, angle, hi) >= raycast(w, o, angle, lo)

    def test_kernel_matches_vectorized(self):
        w = random_obstacle_map(9, (30, 30), 0.1)
        angles = np.linspace(-math.pi, math.pi, 181)
        o = np.array([[3.1, 2.9]])
        a = raycast_many(w, o, angles, 5.0)
        b = _raycast_vectorized(w, o, angles, 5.0)
        assert np.abs(a - b).max() < 1e-9


def test_pose_heading_wrapped():
    assert Pose(0, 0, 3 * math.pi).heading == pytest.approx(math.pi)
    assert Pose(0, 0, -math.pi).heading == pytest.approx(math.pi)
    assert wrap_angle(math.pi) == pytest.approx(math.pi)


def test_point_must_be_finite():
    with pytest.raises(ValueError):
        Point2(float("nan"), 0.0)
