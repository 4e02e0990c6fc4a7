"""Occupancy-grid worlds with a precomputed distance field.

Grid row ``r`` spans ``y in [r*cell, (r+1)*cell)`` and column ``c`` spans
``x in [c*cell, (c+1)*cell)``; the first grid line of a map file is row 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import _kernels


class MapParseError(ValueError):
    """Raised for malformed map files; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w <= -np.pi, w + 2.0 * np.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


@dataclass(frozen=True)
class Point2:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def position(self) -> Point2:
        return Point2(self.x, self.y)


@dataclass(frozen=True, eq=False)
class WorldMap:
    occupancy: np.ndarray
    cell_size: float
    scene_id: str = "scene"
    distance_field: np.ndarray = field(init=False, repr=False)
    nearest_obstacle: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        occ = np.array(self.occupancy, dtype=bool)
        occ[0, :] = occ[-1, :] = True
        occ[:, 0] = occ[:, -1] = True
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        dist, idx = compute_distance_field(occ, self.cell_size, return_indices=True)
        dist.setflags(write=False)
        idx.setflags(write=False)
        object.__setattr__(self, "distance_field", dist)
        object.__setattr__(self, "nearest_obstacle", idx)

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @property
    def extent(self) -> tuple[float, float]:
        return self.width * self.cell_size, self.height * self.cell_size

    def cell_center(self, row: int, col: int) -> Point2:
        return Point2((col + 0.5) * self.cell_size, (row + 0.5) * self.cell_size)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(y / self.cell_size)), int(math.floor(x / self.cell_size))

    def in_bounds(self, x: float, y: float) -> bool:
        w, h = self.extent
        return 0.0 <= x <= w and 0.0 <= y <= h

    def to_text(self) -> str:
        rows = ["".join("#" if v else "." for v in row) for row in self.occupancy]
        return f"cell_size={self.cell_size!r}\nname={self.scene_id}\n" + "\n".join(rows) + "\n"


def compute_distance_field(occupancy: np.ndarray, cell_size: float, return_indices: bool = False):
    """Euclidean distance (meters) from each cell center to the nearest obstacle center.

    With ``return_indices`` also returns the (2, h, w) row/col index of that obstacle.
    """
    if not occupancy.any():
        raise ValueError("distance field needs at least one obstacle cell")
    if return_indices:
        dist, idx = ndimage.distance_transform_edt(~occupancy, return_indices=True)
        return dist * cell_size, idx
    return ndimage.distance_transform_edt(~occupancy) * cell_size


def load_map(text: str) -> WorldMap:
    lines = text.splitlines()
    if "\t" in text:
        bad = next(i for i, ln in enumerate(lines, 1) if "\t" in ln)
        raise MapParseError(bad, "tab characters are not allowed")
    if len(lines) < 3:
        raise MapParseError(len(lines) + 1, "expected cell_size, name and at least one grid row")
    if not lines[0].startswith("cell_size="):
        raise MapParseError(1, "expected 'cell_size=<meters>'")
    try:
        cell_size = float(lines[0][len("cell_size="):])
    except ValueError:
        raise MapParseError(1, "cell_size is not a number") from None
    if not (cell_size > 0 and math.isfinite(cell_size)):
        raise MapParseError(1, "cell_size must be positive")
    if not lines[1].startswith("name="):
        raise MapParseError(2, "expected 'name=<scene id>'")
    name = lines[1][len("name="):].strip()
    if not name:
        raise MapParseError(2, "empty scene name")

    grid = lines[2:]
    while grid and not grid[-1].strip():
        grid.pop()
    if not grid:
        raise MapParseError(3, "no grid rows")
    width = len(grid[0])
    rows = []
    for i, row in enumerate(grid, start=3):
        if len(row) != width:
            raise MapParseError(i, f"ragged row: length {len(row)}, expected {width}")
        if set(row) - {"#", "."}:
            raise MapParseError(i, f"unexpected characters {sorted(set(row) - {'#', '.'})}")
        rows.append([ch == "#" for ch in row])
    occ = np.array(rows, dtype=bool)
    closed = occ.copy()
    closed[0, :] = closed[-1, :] = closed[:, 0] = closed[:, -1] = True
    if closed.all():
        raise MapParseError(len(lines), "map has no free cells")
    return WorldMap(occ, cell_size, name)


def read_map(path) -> WorldMap:
    with open(path, encoding="utf-8") as fh:
        return load_map(fh.read())


def _padded_field(world: WorldMap) -> np.ndarray:
    pad = world.__dict__.get("_padded")
    if pad is None:
        pad = np.pad(world.distance_field, 1, mode="edge")
        object.__setattr__(world, "_padded", pad)
    return pad


def clearance_many(world: WorldMap, xy: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of the distance field at (n, 2) points; 0 outside the map."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    cs = world.cell_size
    u = xy[:, 0] / cs - 0.5
    v = xy[:, 1] / cs - 0.5
    c0 = np.floor(u).astype(int)
    r0 = np.floor(v).astype(int)
    fu = u - c0
    fv = v - r0
    # snap float noise so queries at cell centers return the stored value exactly
    for f, i in ((fu, c0), (fv, r0)):
        near1 = f > 1.0 - 1e-9
        i[near1] += 1
        f[near1 | (f < 1e-9)] = 0.0
    h, w = world.occupancy.shape
    # padded field: index k in the padded array is cell k - 1, edges replicate
    d = _padded_field(world)
    c0 = np.clip(c0 + 1, 0, w)
    r0 = np.clip(r0 + 1, 0, h)
    val = ((1 - fu) * (1 - fv) * d[r0, c0] + fu * (1 - fv) * d[r0, c0 + 1]
           + (1 - fu) * fv * d[r0 + 1, c0] + fu * fv * d[r0 + 1, c0 + 1])
    wx, wy = world.extent
    inside = (xy[:, 0] >= 0) & (xy[:, 0] <= wx) & (xy[:, 1] >= 0) & (xy[:, 1] <= wy)
    return np.where(inside, np.maximum(val, 0.0), 0.0)


def clearance(world: WorldMap, p) -> float:
    x, y = (p.x, p.y) if isinstance(p, (Point2, Pose)) else p
    return float(clearance_many(world, np.array([[x, y]]))[0])


def is_navigable(world: WorldMap, p, radius: float) -> bool:
    if radius < 0:
        raise ValueError("radius must be non-negative")
    return clearance(world, p) > radius


def away_from_obstacle(world: WorldMap, xy: np.ndarray) -> np.ndarray:
    """Unit vectors pointing from the nearest obstacle cell center toward each point.

    Zero where undefined (point on an obstacle center).
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    h, w = world.occupancy.shape
    rows = np.clip(np.floor(xy[:, 1] / world.cell_size).astype(int), 0, h - 1)
    cols = np.clip(np.floor(xy[:, 0] / world.cell_size).astype(int), 0, w - 1)
    orow = world.nearest_obstacle[0, rows, cols]
    ocol = world.nearest_obstacle[1, rows, cols]
    centers = np.stack([(ocol + 0.5), (orow + 0.5)], axis=1) * world.cell_size
    d = xy - centers
    n = np.linalg.norm(d, axis=1, keepdims=True)
    return np.where(n > 1e-12, d / np.where(n > 1e-12, n, 1.0), 0.0)


def clearance_gradient(world: WorldMap, xy: np.ndarray, h: float | None = None) -> np.ndarray:
    """Central-difference gradient of clearance at (n, 2) points."""
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    h = world.cell_size * 0.25 if h is None else h
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    gx = clearance_many(world, xy + ex) - clearance_many(world, xy - ex)
    gy = clearance_many(world, xy + ey) - clearance_many(world, xy - ey)
    return np.stack([gx, gy], axis=1) / (2 * h)


def raycast_many(world: WorldMap, origins: np.ndarray, angles: np.ndarray,
                 max_range: float) -> np.ndarray:
    """Grid traversal (Amanatides-Woo); distance to the first obstacle cell boundary.

    Out-of-map cells count as obstacles; a ray starting inside an obstacle reads 0.
    """
    origins = np.asarray(origins, dtype=float).reshape(-1, 2)
    angles = np.asarray(angles, dtype=float).ravel()
    if origins.shape[0] == 1:
        return _kernels.raycast(world.occupancy, world.cell_size, origins[0, 0], origins[0, 1],
                                angles, float(max_range))
    return _raycast_vectorized(world, origins, angles, max_range)


def _raycast_vectorized(world: WorldMap, origins: np.ndarray, angles: np.ndarray,
                        max_range: float) -> np.ndarray:
    n = angles.size
    if origins.shape[0] == 1 and n > 1:
        origins = np.repeat(origins, n, axis=0)
    cs = world.cell_size
    occ = world.occupancy
    h, w = occ.shape
    dx = np.cos(angles)
    dy = np.sin(angles)
    # exact zeros keep the traversal axis-aligned
    dx = np.where(np.abs(dx) < 1e-12, 0.0, dx)
    dy = np.where(np.abs(dy) < 1e-12, 0.0, dy)
    gx = origins[:, 0] / cs
    gy = origins[:, 1] / cs
    ix = np.floor(gx).astype(int)
    iy = np.floor(gy).astype(int)
    step_x = np.where(dx > 0, 1, -1)
    step_y = np.where(dy > 0, 1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_dx = np.where(dx != 0, cs / np.abs(dx), np.inf)
        t_dy = np.where(dy != 0, cs / np.abs(dy), np.inf)
        next_x = np.where(dx > 0, (ix + 1 - gx), (gx - ix)) * cs
        next_y = np.where(dy > 0, (iy + 1 - gy), (gy - iy)) * cs
        t_mx = np.where(dx != 0, next_x / np.abs(dx), np.inf)
        t_my = np.where(dy != 0, next_y / np.abs(dy), np.inf)

    def blocked(cx, cy):
        out = (cx < 0) | (cx >= w) | (cy < 0) | (cy >= h)
        return out | occ[np.clip(cy, 0, h - 1), np.clip(cx, 0, w - 1)]

    result = np.full(n, float(max_range))
    active = ~blocked(ix, iy)
    result[~active] = 0.0
    while active.any():
        go_x = t_mx < t_my
        t = np.where(go_x, t_mx, t_my)
        past = active & (t >= max_range)
        active &= ~past
        ix = np.where(active & go_x, ix + step_x, ix)
        iy = np.where(active & ~go_x, iy + step_y, iy)
        t_mx = np.where(active & go_x, t_mx + t_dx, t_mx)
        t_my = np.where(active & ~go_x, t_my + t_dy, t_my)
        hit = active & blocked(ix, iy)
        result[hit] = t[hit]
        active &= ~hit
    return result


def raycast(world: WorldMap, origin, angle: float, max_range: float) -> float:
    x, y = (origin.x, origin.y) if isinstance(origin, (Point2, Pose)) else origin
    return float(raycast_many(world, np.array([[x, y]]), np.array([angle]), max_range)[0])
