import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.sparse import csgraph, lil_matrix

from onlinenav.maps import empty_room, generate_maze, random_obstacle_map
from onlinenav.planner import (ExpertPlanner, PostProcessError, RawPath, SamplingError,
                               UnreachableError, count_keypoints, free_mask, grid_astar,
                               grid_path, line_search_clearance, polyline_length,
                               postprocess_path, relative_waypoints, resample, sample_episode,
                               segment_free, shortest_path, smoothing_spline_values,
                               waypoints_to_world)
from onlinenav.world import Point2, Pose, WorldMap, clearance_many


def dijkstra_oracle(free: np.ndarray, start, goal) -> float:
    """Plain Dijkstra over an explicitly built 8-connected graph (no corner cutting)."""
    h, w = free.shape
    g = lil_matrix((h * w, h * w))
    for r in range(h):
        for c in range(w):
            if not free[r, c]:
                continue
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if dr == dc == 0:
                        continue
                    nr, nc = r + dr, c + dc
                    if not (0 <= nr < h and 0 <= nc < w and free[nr, nc]):
                        continue
                    if dr and dc and not (free[r + dr, c] and free[r, c + dc]):
                        continue
                    g[r * w + c, nr * w + nc] = math.hypot(dr, dc)
    d = csgraph.dijkstra(g.tocsr(), indices=start[0] * w + start[1])
    return float(d[goal[0] * w + goal[1]])


def free_cells(free, rng, n):
    cells = np.argwhere(free)
    return [tuple(map(int, cells[i])) for i in rng.choice(len(cells), n, replace=False)]


class TestShortestPath:
    def test_empty_corridor_is_straight(self):
        w = empty_room(10, 3)
        p = shortest_path(w, Point2(1.0, 1.5), Point2(9.0, 1.5), 0.25)
        assert len(p.points) == 2
        assert abs(p.length - 8.0) <= math.sqrt(2) * w.cell_size

    def test_wall_with_gap(self):
        occ = np.zeros((30, 30), dtype=bool)
        occ[:, 15] = True
        occ[20:24, 15] = False
        w = WorldMap(occ, 0.2)
        p = shortest_path(w, Point2(1.0, 1.0), Point2(5.0, 1.0), 0.25)
        gap_y = (20 * 0.2, 24 * 0.2)
        # the polyline crosses x = 3.1 (column 15) inside the gap
        pts = p.points
        for a, b in zip(pts[:-1], pts[1:]):
            if (a[0] - 3.1) * (b[0] - 3.1) <= 0 and a[0] != b[0]:
                y = a[1] + (3.1 - a[0]) / (b[0] - a[0]) * (b[1] - a[1])
                assert gap_y[0] <= y <= gap_y[1]
        free = free_mask(w, 0.25)
        cells, cost = grid_path(w, (1.0, 1.0), (5.0, 1.0), 0.25)
        assert cost == pytest.approx(dijkstra_oracle(free, cells[0], cells[-1]), abs=1e-9)

    def test_enclosed_goal_unreachable(self):
        occ = np.zeros((30, 30), dtype=bool)
        occ[10:20, 10] = occ[10:20, 19] = True
        occ[10, 10:20] = occ[19, 10:20] = True
        w = WorldMap(occ, 0.2)
        with pytest.raises(UnreachableError) as exc:
            shortest_path(w, Point2(1.0, 1.0), Point2(3.0, 3.0), 0.25)
        assert exc.value.start == (1.0, 1.0) and exc.value.goal == (3.0, 3.0)

    def test_astar_matches_dijkstra_on_random_maps(self):
        rng = np.random.default_rng(0)
        for seed in range(5):
            free = free_mask(random_obstacle_map(seed, (30, 30), 0.2), 0.0)
            s, g = free_cells(free, rng, 2)
            try:
                _, cost = grid_astar(free, s, g)
            except UnreachableError:
                assert math.isinf(dijkstra_oracle(free, s, g))
                continue
            assert cost == pytest.approx(dijkstra_oracle(free, s, g), abs=1e-9)

    def test_path_points_navigable(self, maze):
        rng = np.random.default_rng(1)
        spec = sample_episode(maze, rng, 2)
        p = shortest_path(maze, spec.start, spec.goal, 0.25)
        assert clearance_many(maze, p.points).min() > 0.25
        for a, b in zip(p.points[:-1], p.points[1:]):
            assert segment_free(maze, a, b, 0.25)

    def test_expert_planner_agrees_with_shortest_path_length(self, maze):
        planner = ExpertPlanner(maze)
        rng = np.random.default_rng(2)
        for _ in range(5):
            spec = sample_episode(maze, rng, 1)
            a = shortest_path(maze, spec.start, spec.goal, 0.25).length
            b = planner.raw_path(spec.start, spec.goal, margin=0.0).length
            assert abs(a - b) <= 0.01 * a + 2 * maze.cell_size


class TestKeypoints:
    def test_straight(self):
        assert count_keypoints(np.array([[0, 0], [5, 0]])) == 0

    def test_right_angle(self):
        assert count_keypoints(np.array([[0, 0], [1, 0], [1, 1]])) == 1

    def test_zigzag(self):
        pts = [[0.0, 0.0]]
        heading = 0.0
        for i in range(7):
            heading += math.radians(45) * (1 if i % 2 == 0 else -1) if i else 0.0
            pts.append([pts[-1][0] + math.cos(heading), pts[-1][1] + math.sin(heading)])
        assert count_keypoints(np.array(pts), math.radians(15)) == 6


class TestPostProcess:
    def test_straight_path_stays_straight(self, room):
        raw = RawPath(np.array([[1.0, 5.0], [9.0, 5.0]]))
        out = postprocess_path(room, raw, 0.25, 0.1, 0.25)
        assert np.allclose(out.points[:, 1], 5.0, atol=1e-9)
        gaps = np.linalg.norm(np.diff(out.points, axis=0), axis=1)
        assert np.allclose(gaps, 0.25, atol=1e-6)

    def test_l_shaped_path(self, room):
        raw = RawPath(np.array([[1.0, 1.0], [8.0, 1.0], [8.0, 8.0]]))
        out = postprocess_path(room, raw, 0.25, 0.1, 0.25)
        assert clearance_many(room, out.points).min() > 0.25
        seg = np.diff(out.points, axis=0)
        turn = np.abs(np.angle(np.exp(1j * np.diff(np.arctan2(seg[:, 1], seg[:, 0])))))
        assert turn.max() <= math.pi / 2
        assert np.linalg.norm(out.points[-1] - [8.0, 8.0]) <= 0.25

    def test_line_search_never_lowers_clearance(self, random_map):
        for seed in range(10):
            w = random_map(seed, (40, 40), 0.1)
            rng = np.random.default_rng(seed)
            try:
                spec = sample_episode(w, rng, 0, max_tries=50)
                raw = shortest_path(w, spec.start, spec.goal, 0.25)
            except (SamplingError, UnreachableError):
                continue
            moved = line_search_clearance(w, raw.points, 0.1, 0.25)
            assert np.all(clearance_many(w, moved) >= clearance_many(w, raw.points) - 1e-12)
            assert np.linalg.norm(moved - raw.points, axis=1).max() <= 0.1 + 1e-9

    def test_projection_failure_names_station(self):
        w = WorldMap(np.zeros((4, 4), dtype=bool), 0.2)  # 2x2 free cells, clearance 0.2
        with pytest.raises(PostProcessError) as exc:
            postprocess_path(w, RawPath(np.array([[0.3, 0.3], [0.5, 0.5]])), 0.1, 0.0, 0.25)
        assert exc.value.station == 0

    def test_resample_spacing(self):
        st_, pts = resample(np.array([[0, 0], [1, 0], [1, 2]]), 0.3)
        gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        assert gaps.max() <= 0.3 + 1e-12
        assert np.allclose(pts[-1], [1, 2])

    def test_smoothing_spline_reproduces_lines(self):
        t = np.linspace(0, 5, 21)
        y = np.stack([2 * t + 1, -t], axis=1)
        assert np.allclose(smoothing_spline_values(t, y, 0.5), y, atol=1e-10)

    def test_smoothing_spline_against_scipy(self):
        from scipy.interpolate import make_smoothing_spline
        rng = np.random.default_rng(0)
        t = np.sort(rng.uniform(0, 4, 15))
        y = np.sin(t) + rng.normal(0, 0.1, 15)
        ours = smoothing_spline_values(t, y, 0.3)
        ref = make_smoothing_spline(t, y, lam=0.3)(t)
        assert np.allclose(ours, ref, atol=1e-8)


class TestRelativeWaypoints:
    path = np.array([[0.25 * i, 0.0] for i in range(10)])

    def test_identity_frame(self):
        wp = relative_waypoints(self.path, Pose(0, 0, 0), 4)
        assert np.allclose(wp, [[0.25, 0, 0], [0.5, 0, 0], [0.75, 0, 0], [1.0, 0, 0]])

    def test_rotated_frame(self):
        wp = relative_waypoints(self.path, Pose(0, 0, math.pi / 2), 4)
        assert np.allclose(wp[:, 0], 0.0, atol=1e-12)
        assert np.allclose(wp[:, 1], [-0.25, -0.5, -0.75, -1.0])
        assert wp[0, 2] == pytest.approx(-math.pi / 2)
        assert np.allclose(wp[1:, 2], 0.0)

    def test_padding(self):
        wp = relative_waypoints(self.path[:3], Pose(0.25, 0, 0), 4)
        assert np.allclose(wp[0], [0.25, 0, 0])
        assert np.allclose(wp[1:], [[0.25, 0, 0]] * 3)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi))
    def test_frame_round_trip(self, x, y, h):
        pose = Pose(x, y, h)
        pts = np.stack([x + 0.3 * np.arange(1, 8), y + 0.1 * np.arange(1, 8) ** 1.5], axis=1)
        pts = np.vstack([[x, y], pts])
        wp = relative_waypoints(pts, pose, 7)
        assert np.abs(waypoints_to_world(wp, pose) - pts[1:]).max() < 1e-6
        assert np.all(np.abs(wp[:, 2]) <= math.pi)

    def test_empty_path(self):
        with pytest.raises(Exception):
            relative_waypoints(np.zeros((0, 2)), Pose(0, 0), 3)


class TestSampleEpisode:
    def test_room_f0(self, room):
        spec = sample_episode(room, np.random.default_rng(0), 0)
        assert spec.keypoints >= 0 and spec.shortest_len >= 2.0

    def test_room_f5_fails(self, room):
        with pytest.raises(SamplingError) as exc:
            sample_episode(room, np.random.default_rng(0), 5, max_tries=30)
        assert exc.value.best_keypoints == 0

    def test_maze_f5_replans(self):
        w = generate_maze(11)
        spec = sample_episode(w, np.random.default_rng(0), 5, max_tries=1000)
        assert spec.keypoints >= 5
        replanned = shortest_path(w, spec.start, spec.goal, 0.25)
        assert count_keypoints(replanned) == spec.keypoints
        assert replanned.length == pytest.approx(spec.shortest_len)

    def test_deterministic(self, maze):
        a = sample_episode(maze, np.random.default_rng(5), 2)
        b = sample_episode(maze, np.random.default_rng(5), 2)
        assert repr(a) == repr(b)


def test_polyline_length():
    assert polyline_length(np.array([[0, 0], [3, 4], [3, 5]])) == pytest.approx(6.0)
