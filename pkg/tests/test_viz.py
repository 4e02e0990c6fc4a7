import numpy as np
import pytest

from helpers import tiny_config
from onlinenav.bench import ExpertActor, evaluate, generate_benchmark
from onlinenav.maps import generate_maze
from onlinenav.viz import VizError, VizSpec, ramp, read_polylines, render, render_viz

TRACKING_TOL = 0.3  # metres


def point_to_polyline(p, line):
    a, b = line[:-1], line[1:]
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.maximum((ab ** 2).sum(1), 1e-12), 0, 1)
    return float(np.min(np.linalg.norm(a + t[:, None] * ab - p, axis=1)))


@pytest.fixture(scope="module")
def expert_run():
    world = generate_maze(40)
    cfg = tiny_config()
    bench = generate_benchmark([world], 2, (1, 2), seed=3, cfg=cfg)
    rep = evaluate(ExpertActor(), bench, {world.scene_id: world}, cfg, record=True)
    assert rep.mSR == 100.0
    transcript = [r for i in sorted(rep.transcripts) for r in rep.transcripts[i]]
    return world, transcript


def test_empty_transcript_is_map_only(maze):
    svg = render(VizSpec(maze, []))
    assert svg.startswith("<svg") and "<rect" in svg
    assert read_polylines(svg) == {} and "<circle" not in svg


def test_expert_and_executed_paths_coincide(expert_run):
    world, transcript = expert_run
    lines = read_polylines(render(VizSpec(world, transcript)))
    for n in range(2):
        expert, executed = lines[f"expert-path-{n}"], lines[f"executed-path-{n}"]
        worst = max(point_to_polyline(p, expert) for p in executed)
        assert worst < TRACKING_TOL


def test_deterministic_bytes(tmp_path, expert_run):
    world, transcript = expert_run
    spec = VizSpec(world, transcript, heatmap=True)
    render_viz(spec, tmp_path / "a.svg")
    render_viz(spec, tmp_path / "b.svg")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_layer_toggles(expert_run):
    world, transcript = expert_run
    svg = render(VizSpec(world, transcript, expert_path=False, executed_path=False))
    assert read_polylines(svg) == {}
    assert 'fill-opacity' not in svg
    assert 'fill-opacity' in render(VizSpec(world, [], heatmap=True))


def test_scene_mismatch(expert_run, maze):
    _, transcript = expert_run
    with pytest.raises(VizError):
        render(VizSpec(maze, transcript))


def test_coordinates_round_trip(maze):
    path = [[1.0, 1.5], [3.25, 2.0], [4.0, 6.5]]
    got = read_polylines(render(VizSpec(maze, None, path)))["expert-path-0"]
    assert np.allclose(got, path, atol=1e-3)


def test_fans_colored_by_score(maze):
    head = {"type": "episode", "scene_id": maze.scene_id, "start": [1.0, 1.0, 0.0],
            "goal": [2.0, 1.0]}
    samples = [[[0.5 * (k + 1), 0.2 * s, 0.0] for k in range(3)] for s in range(3)]
    dec = {"type": "decision", "pose": [1.0, 1.0, 0.0], "samples": samples,
           "scores": [-5.0, 0.0, 2.0]}
    svg = render(VizSpec(maze, [head, dec], expert_path=False))
    fan = [line for line in svg.splitlines() if 'stroke-opacity="0.6"' in line]
    assert len(fan) == 3
    # ascending score order: the warmest is drawn last
    assert ramp(0.0) in fan[0] and ramp(1.0) in fan[-1]


def test_ramp_ends():
    assert ramp(0.0) == "#313695" and ramp(1.0) == "#a50026" and ramp(-3) == ramp(0)
