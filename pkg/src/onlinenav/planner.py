"""Privileged expert planner.

Shortest paths come from 8-connected A* on the radius-inflated grid followed by
greedy line-of-sight shortcutting. Paths are then post-processed (clearance line
search, uniform resampling, cubic smoothing spline, projection back to free
space) and cut into robot-frame waypoint trajectories.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import csgraph

from . import _kernels
from .world import (Point2, Pose, WorldMap, _padded_field, away_from_obstacle, clearance_many,
                    wrap_angle)

SQRT2 = math.sqrt(2.0)
KEYPOINT_ANGLE = math.radians(15.0)
_NEIGHBORS = ((-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
              (-1, -1, SQRT2), (-1, 1, SQRT2), (1, -1, SQRT2), (1, 1, SQRT2))


class PlanningError(RuntimeError):
    pass


class UnreachableError(PlanningError):
    def __init__(self, start, goal):
        super().__init__(f"no path from ({start[0]:.3f}, {start[1]:.3f}) "
                         f"to ({goal[0]:.3f}, {goal[1]:.3f})")
        self.start = tuple(start)
        self.goal = tuple(goal)


class PostProcessError(PlanningError):
    def __init__(self, station: int, point):
        super().__init__(f"station {station} at ({point[0]:.3f}, {point[1]:.3f}) "
                         "cannot be projected to free space")
        self.station = station


class SamplingError(PlanningError):
    def __init__(self, tries: int, best_keypoints: int):
        super().__init__(f"no episode accepted after {tries} tries "
                         f"(best keypoint count {best_keypoints})")
        self.best_keypoints = best_keypoints


@dataclass(frozen=True)
class RawPath:
    points: np.ndarray  # (n, 2) world frame, start first

    @property
    def length(self) -> float:
        return polyline_length(self.points)


@dataclass(frozen=True)
class ProcessedPath:
    points: np.ndarray
    spacing: float


@dataclass(frozen=True)
class EpisodeSpec:
    scene_id: str
    start: Pose
    goal: Point2
    shortest_len: float
    keypoints: int


def polyline_length(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def _xy(p) -> tuple[float, float]:
    if isinstance(p, (Point2, Pose)):
        return p.x, p.y
    return float(p[0]), float(p[1])


# ---------------------------------------------------------------- grid search

@lru_cache(maxsize=64)
def free_mask(world: WorldMap, radius: float) -> np.ndarray:
    mask = world.distance_field > radius
    mask.setflags(write=False)
    return mask


def octile(a: tuple[int, int], b: tuple[int, int]) -> float:
    dr = abs(a[0] - b[0])
    dc = abs(a[1] - b[1])
    return max(dr, dc) + (SQRT2 - 1.0) * min(dr, dc)


def grid_neighbors(free: np.ndarray, r: int, c: int):
    """8-connected moves; diagonals need both orthogonal neighbours free (no corner cutting)."""
    h, w = free.shape
    for dr, dc, cost in _NEIGHBORS:
        nr, nc = r + dr, c + dc
        if not (0 <= nr < h and 0 <= nc < w and free[nr, nc]):
            continue
        if dr and dc and not (free[r + dr, c] and free[r, c + dc]):
            continue
        yield nr, nc, cost


def grid_astar(free: np.ndarray, start: tuple[int, int],
               goal: tuple[int, int]) -> tuple[list[tuple[int, int]], float]:
    """A* with the octile heuristic over grid cells; returns (cells, cost in cell units)."""
    if not (free[start] and free[goal]):
        raise UnreachableError(start, goal)

    def h(cell):
        return octile(cell, goal)

    g = {start: 0.0}
    parent = {start: None}
    heap = [(h(start), h(start), 0, start)]
    counter = 1
    closed = set()
    while heap:
        _, _, _, cell = heapq.heappop(heap)
        if cell in closed:
            continue
        if cell == goal:
            break
        closed.add(cell)
        gc = g[cell]
        for nr, nc, cost in grid_neighbors(free, *cell):
            nxt = (nr, nc)
            if nxt in closed:
                continue
            ng = gc + cost
            if ng < g.get(nxt, math.inf):
                g[nxt] = ng
                parent[nxt] = cell
                hn = h(nxt)
                heapq.heappush(heap, (ng + hn, hn, counter, nxt))
                counter += 1
    else:
        raise UnreachableError(start, goal)
    cells = []
    cur = goal
    while cur is not None:
        cells.append(cur)
        cur = parent[cur]
    cells.reverse()
    return cells, g[goal]


@lru_cache(maxsize=64)
def _grid_graph(world: WorldMap, radius: float) -> sparse.csr_matrix:
    free = free_mask(world, radius)
    h, w = free.shape
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, vals = [], [], []
    for dr, dc, cost in _NEIGHBORS:
        r0, r1 = max(0, -dr), h - max(0, dr)
        c0, c1 = max(0, -dc), w - max(0, dc)
        a = free[r0:r1, c0:c1] & free[r0 + dr:r1 + dr, c0 + dc:c1 + dc]
        if dr and dc:
            a &= free[r0 + dr:r1 + dr, c0:c1] & free[r0:r1, c0 + dc:c1 + dc]
        src = idx[r0:r1, c0:c1][a]
        dst = idx[r0 + dr:r1 + dr, c0 + dc:c1 + dc][a]
        rows.append(src)
        cols.append(dst)
        vals.append(np.full(src.size, cost))
    return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(h * w, h * w))


def cost_to_go(world: WorldMap, goal_cell: tuple[int, int], radius: float) -> np.ndarray:
    """Exact grid distance (cell units) from every cell to ``goal_cell``; inf if unreachable."""
    graph = _grid_graph(world, radius)
    h, w = world.occupancy.shape
    dist = csgraph.dijkstra(graph, directed=False, indices=goal_cell[0] * w + goal_cell[1])
    return dist.reshape(h, w)


# ------------------------------------------------------------ shortest paths

def segment_free(world: WorldMap, a, b, radius: float, step: float | None = None) -> bool:
    step = world.cell_size * 0.25 if step is None else step
    return bool(_kernels.segment_clear(_padded_field(world), world.cell_size, float(a[0]),
                                       float(a[1]), float(b[0]), float(b[1]), radius, step))


def snap_to_grid(world: WorldMap, p, radius: float) -> tuple[int, int]:
    """Nearest free cell whose center is visible from ``p`` at ``radius``."""
    free = free_mask(world, radius)
    x, y = _xy(p)
    r0, c0 = world.cell_of(x, y)
    h, w = free.shape
    cands = []
    for dr in range(-2, 3):
        for dc in range(-2, 3):
            r, c = r0 + dr, c0 + dc
            if 0 <= r < h and 0 <= c < w and free[r, c]:
                cx, cy = (c + 0.5) * world.cell_size, (r + 0.5) * world.cell_size
                cands.append(((cx - x) ** 2 + (cy - y) ** 2, r, c))
    cands.sort()
    for _, r, c in cands:
        if segment_free(world, (x, y), ((c + 0.5) * world.cell_size, (r + 0.5) * world.cell_size),
                        radius):
            return r, c
    if cands:
        return cands[0][1], cands[0][2]
    rr, cc = np.nonzero(free)
    if rr.size == 0:
        raise UnreachableError((x, y), (x, y))
    k = int(np.argmin((cc + 0.5 - x / world.cell_size) ** 2 + (rr + 0.5 - y / world.cell_size) ** 2))
    return int(rr[k]), int(cc[k])


def shortcut(world: WorldMap, points: np.ndarray, radius: float,
             step: float | None = None) -> np.ndarray:
    """Greedy line-of-sight simplification: extend each segment until visibility breaks."""
    pts = np.ascontiguousarray(points, dtype=float)
    if len(pts) <= 2:
        return pts.copy()
    step = world.cell_size * 0.25 if step is None else step
    keep = _kernels.shortcut_indices(_padded_field(world), world.cell_size, pts, radius, step)
    return pts[keep]


def _dedupe(points: np.ndarray) -> np.ndarray:
    keep = [0]
    for k in range(1, len(points)):
        if np.linalg.norm(points[k] - points[keep[-1]]) > 1e-9:
            keep.append(k)
    if len(keep) == 1 and len(points) > 1:
        keep.append(len(points) - 1)
    return points[keep]


def grid_path(world: WorldMap, start, goal, radius: float) -> tuple[list[tuple[int, int]], float]:
    """Pre-shortcut A* cell path between the grid snaps of two world points."""
    free = free_mask(world, radius)
    s_cell = snap_to_grid(world, start, radius)
    g_cell = snap_to_grid(world, goal, radius)
    try:
        return grid_astar(free, s_cell, g_cell)
    except UnreachableError:
        raise UnreachableError(_xy(start), _xy(goal)) from None


def _drop_collinear(points: np.ndarray) -> np.ndarray:
    if len(points) <= 2:
        return points
    d = np.diff(points, axis=0)
    cross = d[:-1, 0] * d[1:, 1] - d[:-1, 1] * d[1:, 0]
    dot = (d[:-1] * d[1:]).sum(axis=1)
    keep = np.concatenate([[True], (np.abs(cross) > 1e-12) | (dot <= 0), [True]])
    return points[keep]


def _endpoints_ok(world: WorldMap, start, goal, radius: float):
    sx, sy = _xy(start)
    gx, gy = _xy(goal)
    if clearance_many(world, np.array([[sx, sy], [gx, gy]])).min() <= radius:
        raise UnreachableError((sx, sy), (gx, gy))
    return (sx, sy), (gx, gy)


def _cells_to_path(world: WorldMap, s, g, cells, radius: float,
                   max_length: float | None, margin: float = 0.0) -> RawPath:
    centers = (np.asarray(cells, dtype=float)[:, ::-1] + 0.5) * world.cell_size
    pts = _drop_collinear(_dedupe(np.vstack([s, centers, g])))
    if max_length is not None and polyline_length(pts) > max_length:
        pts = truncate_polyline(pts, max_length)
    return RawPath(_dedupe(shortcut(world, pts, radius + margin)))


def shortest_path(world: WorldMap, start, goal, radius: float,
                  max_length: float | None = None) -> RawPath:
    """Shortcut A* path; ``max_length`` cuts the grid path (arc length) before shortcutting."""
    s, g = _endpoints_ok(world, start, goal, radius)
    if segment_free(world, s, g, radius):
        return RawPath(_dedupe(np.array([s, g])))
    cells, _ = grid_path(world, s, g, radius)
    return _cells_to_path(world, s, g, cells, radius, max_length)


def count_keypoints(path, angle_threshold: float = KEYPOINT_ANGLE) -> int:
    pts = np.asarray(path.points if isinstance(path, (RawPath, ProcessedPath)) else path, dtype=float)
    if len(pts) < 3:
        return 0
    seg = np.diff(pts, axis=0)
    heading = np.arctan2(seg[:, 1], seg[:, 0])
    turn = np.abs(wrap_angle(np.diff(heading)))
    return int(np.count_nonzero(turn > angle_threshold))


# ------------------------------------------------------------ post-processing

def line_search_clearance(world: WorldMap, points: np.ndarray, search_dist: float,
                          radius: float, step: float = 0.01) -> np.ndarray:
    """Move interior vertices away from their nearest obstacle while clearance improves."""
    pts = np.array(points, dtype=float)
    if len(pts) <= 2 or search_dist <= 0:
        return pts
    inner = pts[1:-1]
    dirs = away_from_obstacle(world, inner)
    base = clearance_many(world, inner)
    offsets = np.arange(1, int(math.floor(search_dist / step + 1e-9)) + 1) * step
    cand = inner[:, None, :] + offsets[None, :, None] * dirs[:, None, :]
    c = clearance_many(world, cand.reshape(-1, 2)).reshape(len(inner), -1)
    c = np.where(c > radius, c, -np.inf)
    best = np.argmax(c, axis=1)
    best_c = c[np.arange(len(inner)), best]
    better = best_c > base
    inner[better] = cand[np.arange(len(inner)), best][better]
    pts[1:-1] = inner
    return pts


def resample(points: np.ndarray, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Evenly spaced arc-length stations, none further apart than ``spacing``.

    Returns (stations, points); both ends of the polyline are kept.
    """
    pts = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    n = max(1, math.ceil(total / spacing - 1e-9))
    stations = np.linspace(0.0, total, n + 1) if total > 1e-12 else np.array([0.0])
    xs = np.interp(stations, cum, pts[:, 0])
    ys = np.interp(stations, cum, pts[:, 1])
    return stations, np.stack([xs, ys], axis=1)


def smoothing_spline_values(t: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Values at the knots of the natural cubic smoothing spline (Reinsch).

    Minimizes sum (y_i - f(t_i))^2 + lam * integral f''^2; ``y`` may have several
    columns sharing the same knots.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(t)
    if n < 3 or lam <= 0:
        return y.copy()
    h = np.diff(t)
    m = n - 2
    inv = 1.0 / h
    # Q is n x m with columns j: Q[j, j] = 1/h_j, Q[j+1, j] = -1/h_j - 1/h_{j+1}, Q[j+2, j] = 1/h_{j+1}
    q0 = inv[:-1]
    q1 = -inv[:-1] - inv[1:]
    q2 = inv[1:]
    # R is tridiagonal m x m
    r_diag = (h[:-1] + h[1:]) / 3.0
    r_off = h[1:-1] / 6.0
    # A = R + lam * Q^T Q as symmetric pentadiagonal in upper banded form
    main = r_diag + lam * (q0 ** 2 + q1 ** 2 + q2 ** 2)
    off1 = r_off + lam * (q2[:-1] * q1[1:] + q1[:-1] * q0[1:])
    off2 = lam * (q2[:-2] * q0[2:])
    ab = np.zeros((3, m))
    ab[2] = main
    ab[1, 1:] = off1
    ab[0, 2:] = off2
    yy = y.reshape(n, -1)
    qty = q0[:, None] * yy[:-2] + q1[:, None] * yy[1:-1] + q2[:, None] * yy[2:]
    gamma = linalg.solveh_banded(ab, qty)
    qg = np.zeros_like(yy)
    qg[:-2] += q0[:, None] * gamma
    qg[1:-1] += q1[:, None] * gamma
    qg[2:] += q2[:, None] * gamma
    return (yy - lam * qg).reshape(y.shape)


def smooth(stations: np.ndarray, points: np.ndarray, lam: float) -> np.ndarray:
    """Natural cubic smoothing spline in x(s), y(s); endpoints are kept fixed."""
    if len(points) < 5 or lam <= 0:
        return points.copy()
    out = smoothing_spline_values(stations, points, lam)
    out[0] = points[0]
    out[-1] = points[-1]
    return out


_DIRS16 = np.stack([np.cos(np.arange(16) * np.pi / 8), np.sin(np.arange(16) * np.pi / 8)], axis=1)


def project_free(world: WorldMap, points: np.ndarray, radius: float,
                 step: float = 0.01) -> np.ndarray:
    pts = np.array(points, dtype=float)
    c = clearance_many(world, pts)
    for i in np.nonzero(c <= radius)[0]:
        for r in np.arange(1, int(round(2 * radius / step)) + 1) * step:
            cand = pts[i] + r * _DIRS16
            cc = clearance_many(world, cand)
            if (cc > radius).any():
                pts[i] = cand[int(np.argmax(np.where(cc > radius, cc, -np.inf)))]
                break
        else:
            raise PostProcessError(int(i), pts[i])
    return pts


def postprocess_path(world: WorldMap, path: RawPath, spacing: float = 0.25,
                     search_dist: float = 0.1, radius: float = 0.25,
                     smoothing: float = 0.05) -> ProcessedPath:
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if search_dist < 0:
        raise ValueError("search_dist must be non-negative")
    pts = line_search_clearance(world, path.points, search_dist, radius)
    stations, pts = resample(pts, spacing)
    pts = smooth(stations, pts, smoothing)
    pts = project_free(world, pts, radius)
    for _ in range(3):
        # projection can pull neighbours apart; refill wide gaps with projected midpoints
        gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        wide = np.nonzero(gaps > 1.2 * spacing)[0]
        if not len(wide):
            break
        mids = project_free(world, 0.5 * (pts[wide] + pts[wide + 1]), radius)
        pts = np.insert(pts, wide + 1, mids, axis=0)
    return ProcessedPath(pts, spacing)


# ------------------------------------------------------ robot-frame waypoints

def relative_waypoints(path, pose: Pose, K: int) -> np.ndarray:
    """(K, 3) waypoints (dx forward, dy left, dheading) from ``pose`` along ``path``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    pts = np.asarray(path.points if isinstance(path, ProcessedPath) else path, dtype=float)
    if len(pts) == 0:
        raise PlanningError("empty path")
    here = np.array([pose.x, pose.y])
    j = int(np.argmin(np.linalg.norm(pts - here, axis=1)))
    ahead = pts[j + 1:j + 1 + K]
    if len(ahead) == 0:
        ahead = pts[-1:]
    prev = np.vstack([pts[j:j + 1], ahead[:-1]])
    seg = ahead - prev
    tangent = np.arctan2(seg[:, 1], seg[:, 0])
    dw = wrap_angle(np.diff(np.concatenate([[pose.heading], tangent])))
    dw = np.atleast_1d(dw)
    n = len(ahead)
    out = np.zeros((K, 3))
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    d = ahead - here
    out[:n, 0] = c * d[:, 0] + s * d[:, 1]
    out[:n, 1] = -s * d[:, 0] + c * d[:, 1]
    out[:n, 2] = dw
    if n < K:
        out[n:, :2] = out[n - 1, :2]
    return out


def waypoints_to_world(waypoints: np.ndarray, pose: Pose) -> np.ndarray:
    """Inverse of the robot-frame rotation: (K, 2+) waypoints to (K, 2) world points."""
    w = np.asarray(waypoints, dtype=float)
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    x = pose.x + c * w[:, 0] - s * w[:, 1]
    y = pose.y + s * w[:, 0] + c * w[:, 1]
    return np.stack([x, y], axis=1)


# ----------------------------------------------------------- episode sampling

def sample_navigable(world: WorldMap, rng: np.random.Generator, radius: float,
                     max_tries: int = 10_000) -> Point2:
    wx, wy = world.extent
    for _ in range(max_tries):
        x, y = rng.uniform(0.0, wx), rng.uniform(0.0, wy)
        if clearance_many(world, np.array([[x, y]]))[0] > radius:
            return Point2(float(x), float(y))
    raise PlanningError("could not find a navigable point")


def sample_episode(world: WorldMap, rng: np.random.Generator, F: int = 0, radius: float = 0.25,
                   max_tries: int = 1000, min_separation: float = 2.0,
                   angle_threshold: float = KEYPOINT_ANGLE, max_keypoints: int | None = None,
                   planner: "ExpertPlanner | None" = None, margin: float = 0.1) -> EpisodeSpec:
    """Rejection-sample a start/goal pair whose raw path has at least ``F`` keypoints.

    Endpoints need ``margin`` of clearance beyond ``radius`` so that episodes do not
    begin pinned against a wall.
    """
    if F < 0 or max_tries < 1:
        raise ValueError("need F >= 0 and max_tries >= 1")
    best = -1
    for _ in range(max_tries):
        start = sample_navigable(world, rng, radius + margin)
        goal = sample_navigable(world, rng, radius + margin)
        heading = float(rng.uniform(-math.pi, math.pi))
        if math.hypot(goal.x - start.x, goal.y - start.y) < min_separation:
            continue
        try:
            raw = (planner.raw_path(start, goal, margin=0.0) if planner is not None
                   else shortest_path(world, start, goal, radius))
        except UnreachableError:
            continue
        kp = count_keypoints(raw, angle_threshold)
        best = max(best, kp)
        if kp >= F and (max_keypoints is None or kp <= max_keypoints):
            return EpisodeSpec(world.scene_id, Pose(start.x, start.y, heading), goal,
                               raw.length, kp)
    raise SamplingError(max_tries, best)


class ExpertPlanner:
    """Planner bound to one map with per-goal cost-to-go caching.

    Rollouts query the same goal every step, so one Dijkstra sweep from the goal
    makes each later query a walk down the field.
    """

    def __init__(self, world: WorldMap, radius: float = 0.25, spacing: float = 0.25,
                 search_dist: float = 0.1, K: int = 24, line_search: bool = True,
                 smoothing: float = 0.05, cache_size: int = 64, margin: float = 0.1):
        self.world = world
        self.radius = radius
        self.margin = margin
        self.spacing = spacing
        self.search_dist = search_dist if line_search else 0.0
        self.K = K
        self.smoothing = smoothing
        self.cache_size = cache_size
        self._fields: dict[tuple[int, int], np.ndarray] = {}

    def _field(self, goal) -> np.ndarray:
        cell = snap_to_grid(self.world, goal, self.radius)
        f = self._fields.get(cell)
        if f is None:
            if len(self._fields) >= self.cache_size:
                self._fields.pop(next(iter(self._fields)))
            f = cost_to_go(self.world, cell, self.radius)
            self._fields[cell] = f
        return f

    def raw_path(self, start, goal, max_length: float | None = None,
                 margin: float | None = None) -> RawPath:
        """Same contract as :func:`shortest_path`.

        The grid path descends the exact cost-to-go field, i.e. A* with a perfect
        heuristic, so its cost equals the A* / Dijkstra optimum. Shortcuts keep
        ``margin`` (default: the planner's) of extra clearance where they can.
        """
        margin = self.margin if margin is None else margin
        s, g = _endpoints_ok(self.world, start, goal, self.radius)
        if segment_free(self.world, s, g, self.radius + margin):
            return RawPath(_dedupe(np.array([s, g])))
        field = self._field(g)
        r, c = snap_to_grid(self.world, s, self.radius)
        if not np.isfinite(field[r, c]):
            # a passage can be clear for the disc yet too narrow for any cell center
            if margin > 0 and segment_free(self.world, s, g, self.radius):
                return RawPath(_dedupe(np.array([s, g])))
            raise UnreachableError(s, g)
        cells = _kernels.descend(field, free_mask(self.world, self.radius), r, c)
        return _cells_to_path(self.world, s, g, cells, self.radius, max_length, margin)

    def processed_path(self, start, goal, horizon: float | None = None) -> ProcessedPath:
        raw = self.raw_path(start, goal, None if horizon is None else horizon + 2.0)
        pts = raw.points
        if horizon is not None and raw.length > horizon:
            pts = truncate_polyline(pts, horizon)
        return postprocess_path(self.world, RawPath(pts), self.spacing, self.search_dist,
                                self.radius, self.smoothing)

    def trajectory(self, pose: Pose, goal) -> tuple[np.ndarray, ProcessedPath]:
        """Expert label (K, 3) from ``pose`` plus the processed path it was cut from."""
        horizon = (self.K + 8) * self.spacing
        path = self.processed_path(pose, goal, horizon)
        return relative_waypoints(path, pose, self.K), path


def truncate_polyline(points: np.ndarray, length: float) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    k = int(np.searchsorted(cum, length))
    if k >= len(pts):
        return pts
    t = (length - cum[k - 1]) / max(seg[k - 1], 1e-12)
    end = pts[k - 1] + t * (pts[k] - pts[k - 1])
    return np.vstack([pts[:k], end])
