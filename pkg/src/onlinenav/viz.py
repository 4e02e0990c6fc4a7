"""Static SVG rendering of maps, planned paths, executed trajectories and sample fans."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .io import atomic_write_text
from .planner import ExpertPlanner, PlanningError, waypoints_to_world
from .world import Point2, Pose, WorldMap, clearance_many

PX_PER_M = 20.0


class VizError(ValueError):
    pass


@dataclass(frozen=True)
class VizSpec:
    map: WorldMap
    transcript: list[dict] | None = None
    path: list[list[float]] | None = None  # explicit expert path (world xy)
    heatmap: bool = False
    expert_path: bool = True
    executed_path: bool = True
    fans: bool = True
    radius: float = 0.25


def ramp(t: float) -> str:
    """Cool-to-warm color for t in [0, 1] (blue low, red high)."""
    t = min(max(float(t), 0.0), 1.0)
    stops = [(0.0, (49, 54, 149)), (0.5, (230, 230, 160)), (1.0, (165, 0, 38))]
    for (t0, c0), (t1, c1) in zip(stops, stops[1:]):
        if t <= t1:
            u = (t - t0) / (t1 - t0)
            r, g, b = (round(a + u * (b_ - a)) for a, b_ in zip(c0, c1))
            return f"#{r:02x}{g:02x}{b:02x}"
    return "#a50026"


def _fmt(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


class _Canvas:
    def __init__(self, world: WorldMap):
        self.world = world
        w, h = world.extent
        self.h_m = h
        self.w_px = w * PX_PER_M
        self.h_px = h * PX_PER_M
        self.items: list[str] = []

    def xy(self, x: float, y: float) -> str:
        return f"{_fmt(x * PX_PER_M)},{_fmt((self.h_m - y) * PX_PER_M)}"

    def polyline(self, pts, color: str, width: float, ident: str | None = None,
                 opacity: float = 1.0, dash: str | None = None) -> None:
        attrs = [f'points="{" ".join(self.xy(x, y) for x, y in pts)}"', 'fill="none"',
                 f'stroke="{color}"', f'stroke-width="{_fmt(width)}"']
        if ident:
            attrs.insert(0, f'id="{ident}"')
        if opacity < 1:
            attrs.append(f'stroke-opacity="{_fmt(opacity)}"')
        if dash:
            attrs.append(f'stroke-dasharray="{dash}"')
        self.items.append(f"<polyline {' '.join(attrs)}/>")

    def rect_cells(self, r: int, c0: int, c1: int, fill: str, opacity: float = 1.0) -> None:
        cs = self.world.cell_size * PX_PER_M
        top = r * cs  # row 0 is the top of the image
        op = f' fill-opacity="{_fmt(opacity)}"' if opacity < 1 else ""
        self.items.append(f'<rect x="{_fmt(c0 * cs)}" y="{_fmt(top)}" width="{_fmt((c1 - c0) * cs)}" '
                          f'height="{_fmt(cs)}" fill="{fill}"{op}/>')

    def circle(self, x: float, y: float, r_m: float, fill: str, ident: str | None = None) -> None:
        i = f'id="{ident}" ' if ident else ""
        cx, cy = self.xy(x, y).split(",")
        self.items.append(f'<circle {i}cx="{cx}" cy="{cy}" r="{_fmt(r_m * PX_PER_M)}" '
                          f'fill="{fill}"/>')

    def text(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(self.w_px)}" '
                f'height="{_fmt(self.h_px)}" viewBox="0 0 {_fmt(self.w_px)} {_fmt(self.h_px)}">')
        return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *self.items,
                          "</svg>"]) + "\n"


def _row_major_top(world: WorldMap) -> np.ndarray:
    """Occupancy with row 0 at the top of the image (largest y)."""
    return world.occupancy[::-1]


def _draw_map(cv: _Canvas, world: WorldMap, heatmap: bool) -> None:
    h, w = world.occupancy.shape
    if heatmap:
        rows, cols = np.mgrid[0:h, 0:w]
        xy = np.stack([(cols.ravel() + 0.5) * world.cell_size,
                       (rows.ravel() + 0.5) * world.cell_size], axis=1)
        d = clearance_many(world, xy).reshape(h, w)[::-1]
        top = max(float(d.max()), 1e-9)
        for r in range(h):
            for c in range(w):
                cv.rect_cells(r, c, c + 1, ramp(d[r, c] / top), 0.35)
    occ = _row_major_top(world)
    for r in range(h):
        c = 0
        while c < w:
            if occ[r, c]:
                e = c
                while e < w and occ[r, e]:
                    e += 1
                cv.rect_cells(r, c, e, "#333333")
                c = e
            else:
                c += 1


def _episodes(transcript: list[dict]) -> list[dict]:
    eps: list[dict] = []
    for rec in transcript:
        kind = rec.get("type")
        if kind == "episode":
            eps.append({"head": rec, "decisions": [], "poses": [rec["start"][:2]]})
        elif not eps:
            raise VizError("transcript record before any episode header")
        elif kind == "decision":
            eps[-1]["decisions"].append(rec)
        elif kind == "step":
            eps[-1]["poses"].append(rec["pose"][:2])
    return eps


def expert_path_points(world: WorldMap, start, goal, radius: float = 0.25) -> np.ndarray:
    planner = ExpertPlanner(world, radius=radius)
    return planner.processed_path(Point2(*start[:2]), Point2(*goal)).points


def render(spec: VizSpec) -> str:
    world = spec.map
    cv = _Canvas(world)
    _draw_map(cv, world, spec.heatmap)
    if spec.path is not None and spec.expert_path:
        cv.polyline(spec.path, "#1b9e77", 2.0, "expert-path-0")
    for n, ep in enumerate(_episodes(spec.transcript or [])):
        head = ep["head"]
        if head["scene_id"] != world.scene_id:
            raise VizError(f"transcript scene {head['scene_id']!r} does not match map "
                           f"{world.scene_id!r}")
        if spec.fans:
            for dec in ep["decisions"]:
                if "samples" not in dec:
                    continue
                pose = Pose(*dec["pose"])
                scores = np.asarray(dec["scores"], dtype=float)
                lo, hi = float(scores.min()), float(scores.max())
                order = np.argsort(scores, kind="stable")  # warm drawn last, on top
                for k in order:
                    t = 0.5 if hi - lo < 1e-12 else (scores[k] - lo) / (hi - lo)
                    pts = waypoints_to_world(np.asarray(dec["samples"][k]), pose)
                    cv.polyline(np.vstack([[pose.x, pose.y], pts]), ramp(t), 0.8, opacity=0.6)
        if spec.expert_path and spec.path is None:
            try:
                pts = expert_path_points(world, head["start"], head["goal"], spec.radius)
                cv.polyline(pts, "#1b9e77", 2.0, f"expert-path-{n}", dash="6,3")
            except PlanningError:
                pass
        if spec.executed_path:
            cv.polyline(ep["poses"], "#7570b3", 1.6, f"executed-path-{n}")
        cv.circle(*head["start"][:2], 0.2, "#1f78b4", f"start-{n}")
        cv.circle(*head["goal"], 0.2, "#e31a1c", f"goal-{n}")
    return cv.text()


def render_viz(spec: VizSpec, out_path) -> None:
    atomic_write_text(out_path, render(spec))


def read_polylines(svg: str) -> dict[str, np.ndarray]:
    """World coordinates of every identified polyline in an SVG produced here."""
    import re
    h_px = float(re.search(r'height="([\d.]+)"', svg).group(1))
    out = {}
    for ident, pts in re.findall(r'<polyline id="([^"]+)" points="([^"]*)"', svg):
        arr = np.array([[float(v) for v in p.split(",")] for p in pts.split()])
        if arr.size:
            arr = np.stack([arr[:, 0] / PX_PER_M, (h_px - arr[:, 1]) / PX_PER_M], axis=1)
        out[ident] = arr
    return out
