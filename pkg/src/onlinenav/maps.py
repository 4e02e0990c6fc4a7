"""Procedural maze-like scenes: a grid of rooms joined by doors, with box clutter."""

from __future__ import annotations

import os

import numpy as np
from scipy import ndimage

from .world import WorldMap, read_map


def _connected(free: np.ndarray) -> bool:
    labels, n = ndimage.label(free)
    return n == 1


def generate_maze(seed: int, rooms: tuple[int, int] = (3, 3), room_cells: int = 20,
                  cell_size: float = 0.2, wall: int = 2, door_cells: tuple[int, int] = (6, 9),
                  extra_doors: int = 2, boxes_per_room: tuple[int, int] = (1, 3),
                  box_cells: tuple[int, int] = (2, 5), radius: float = 0.25,
                  scene_id: str | None = None) -> WorldMap:
    """Build a room maze; the navigable space (at ``radius``) is always one component."""
    rng = np.random.default_rng(seed)
    nr, nc = rooms
    h = nr * room_cells + wall
    w = nc * room_cells + wall
    occ = np.zeros((h, w), dtype=bool)
    for i in range(nr + 1):
        occ[i * room_cells:i * room_cells + wall, :] = True
    for j in range(nc + 1):
        occ[:, j * room_cells:j * room_cells + wall] = True

    # random spanning tree over rooms (randomized DFS), then a few loop-closing doors
    edges = []
    seen = {(0, 0)}
    stack = [(0, 0)]
    while stack:
        r, c = stack[-1]
        nbrs = [(r + dr, c + dc) for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1))
                if 0 <= r + dr < nr and 0 <= c + dc < nc and (r + dr, c + dc) not in seen]
        if not nbrs:
            stack.pop()
            continue
        nxt = nbrs[rng.integers(len(nbrs))]
        edges.append(((r, c), nxt))
        seen.add(nxt)
        stack.append(nxt)
    all_edges = [((r, c), (r + dr, c + dc)) for r in range(nr) for c in range(nc)
                 for dr, dc in ((1, 0), (0, 1)) if r + dr < nr and c + dc < nc]
    tree = {frozenset(e) for e in edges}
    spare = [e for e in all_edges if frozenset(e) not in tree]
    for k in rng.permutation(len(spare))[:extra_doors]:
        edges.append(spare[k])

    inner = room_cells - wall
    for (r0, c0), (r1, c1) in edges:
        width = int(rng.integers(door_cells[0], door_cells[1] + 1))
        offset = int(rng.integers(0, inner - width + 1))
        if r0 != r1:
            row = max(r0, r1) * room_cells
            col = c0 * room_cells + wall + offset
            occ[row:row + wall, col:col + width] = False
        else:
            col = max(c0, c1) * room_cells
            row = r0 * room_cells + wall + offset
            occ[row:row + width, col:col + wall] = False

    def free_at_radius(grid):
        return ndimage.distance_transform_edt(~grid) * cell_size > radius

    for r in range(nr):
        for c in range(nc):
            n_boxes = int(rng.integers(boxes_per_room[0], boxes_per_room[1] + 1))
            for _ in range(n_boxes):
                bh, bw = rng.integers(box_cells[0], box_cells[1] + 1, size=2)
                top = r * room_cells + wall + int(rng.integers(2, max(3, inner - bh - 1)))
                left = c * room_cells + wall + int(rng.integers(2, max(3, inner - bw - 1)))
                trial = occ.copy()
                trial[top:top + bh, left:left + bw] = True
                if _connected(free_at_radius(trial)):
                    occ = trial

    return WorldMap(occ, cell_size, scene_id or f"maze-{seed}")


def empty_room(width_m: float, height_m: float, cell_size: float = 0.2,
               scene_id: str = "empty") -> WorldMap:
    h = int(round(height_m / cell_size))
    w = int(round(width_m / cell_size))
    return WorldMap(np.zeros((h, w), dtype=bool), cell_size, scene_id)


def random_obstacle_map(seed: int, shape: tuple[int, int] = (50, 50), density: float = 0.2,
                        cell_size: float = 0.2, scene_id: str | None = None) -> WorldMap:
    rng = np.random.default_rng(seed)
    occ = rng.random(shape) < density
    return WorldMap(occ, cell_size, scene_id or f"random-{seed}")


def load_scene(ref: str, base_dir: str | None = None) -> WorldMap:
    """``maze:<seed>`` builds a generated maze; anything else is a map file path."""
    if ref.startswith("maze:"):
        return generate_maze(int(ref.split(":", 1)[1]))
    path = ref if base_dir is None or os.path.isabs(ref) else os.path.join(base_dir, ref)
    try:
        return read_map(path)
    except FileNotFoundError:
        raise FileNotFoundError(f"scene file not found: {path}") from None


def scene_id_of(ref: str, base_dir: str | None = None) -> str:
    """Scene id a reference resolves to, without building mazes."""
    if ref.startswith("maze:"):
        return f"maze-{int(ref.split(':', 1)[1])}"
    path = ref if base_dir is None or os.path.isabs(ref) else os.path.join(base_dir, ref)
    if os.path.exists(path):
        return load_scene(ref, base_dir).scene_id
    return ref
