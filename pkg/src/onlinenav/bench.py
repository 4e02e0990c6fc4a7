"""Fixed start/goal suites, SR/SPL evaluation and method comparison tables."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .config import Config
from .maps import load_scene, scene_id_of
from .io import atomic_write_text, dumps_jsonl, read_jsonl
from .planner import EpisodeSpec, ExpertPlanner, PlanningError, SamplingError, sample_episode
from .policy import DiffusionNavPolicy, rank_and_select
from .sim import NavEnv, Source, Status
from .trainer import check_sensor, make_planner
from .world import Point2, Pose, WorldMap

log = logging.getLogger(__name__)

BENCHMARK_VERSION = "onlinenav-bench-1"


class BenchmarkError(ValueError):
    pass


@dataclass(frozen=True)
class Benchmark:
    episodes: tuple[EpisodeSpec, ...]
    seed: int
    version: str = BENCHMARK_VERSION

    @property
    def scene_ids(self) -> list[str]:
        return sorted({e.scene_id for e in self.episodes})

    def __len__(self) -> int:
        return len(self.episodes)


@dataclass(frozen=True)
class EpisodeResult:
    index: int
    scene_id: str
    success: bool
    actual_len: float
    shortest_len: float
    failure_kind: str | None
    steps: int
    decisions: int

    def __post_init__(self):
        if self.success and self.failure_kind is not None:
            raise ValueError("a successful episode has no failure kind")


@dataclass
class SuiteReport:
    name: str
    version: str
    scenes: dict[str, dict] = field(default_factory=dict)  # scene -> {"SR", "SPL", "n"}
    mSR: float = 0.0
    mSPL: float = 0.0
    results: list[EpisodeResult] = field(default_factory=list)
    transcripts: dict[int, list[dict]] = field(default_factory=dict)  # only when recording


def spl_term(success: bool, shortest: float, actual: float) -> float:
    if shortest <= 0 or actual < 0:
        raise ValueError("need shortest > 0 and actual >= 0")
    return shortest / max(shortest, actual) if success else 0.0


# ---------------------------------------------------------------- generation

def bucket_counts(n: int, lo: int, hi: int) -> dict[int, int]:
    """Equal split over keypoint buckets lo..hi; the remainder goes to the hardest."""
    buckets = list(range(lo, hi + 1))
    base, rem = divmod(n, len(buckets))
    counts = {b: base for b in buckets}
    for b in buckets[len(buckets) - rem:]:
        counts[b] += 1
    return counts


def generate_benchmark(worlds: list[WorldMap], n_per_scene: int, F_range: tuple[int, int],
                       seed: int, cfg: Config = Config(), max_tries: int = 2000) -> Benchmark:
    if n_per_scene < 1:
        raise ValueError("n_per_scene must be >= 1")
    lo, hi = F_range
    if lo < 0 or hi < lo:
        raise ValueError("F_range must satisfy 0 <= lo <= hi")
    episodes = []
    for si, world in enumerate(worlds):
        planner = make_planner(cfg, world)
        rng = np.random.default_rng([seed, si])
        counts = bucket_counts(n_per_scene, lo, hi)
        pending = sorted(counts.items(), reverse=True)  # hardest first
        dead: set[int] = set()
        while pending:
            f, quota = pending.pop(0)
            got = 0
            for _ in range(quota):
                try:
                    spec = sample_episode(world, rng, f, cfg.planner.radius, max_tries=max_tries,
                                          planner=planner, max_keypoints=f)
                except SamplingError:
                    break
                episodes.append(spec)
                got += 1
            if got < quota:
                dead.add(f)
                alive = [b for b in range(lo, hi + 1) if b not in dead]
                if not alive:
                    raise BenchmarkError(f"{world.scene_id}: no keypoint bucket is satisfiable")
                nearest = min(alive, key=lambda b: (abs(b - f), -b))
                log.warning("%s: bucket F=%d short by %d; moving quota to F=%d",
                            world.scene_id, f, quota - got, nearest)
                rest = dict(pending)
                rest[nearest] = rest.get(nearest, 0) + quota - got
                pending = sorted(rest.items(), reverse=True)
    return Benchmark(tuple(episodes), seed)


def benchmark_records(bench: Benchmark) -> list[dict]:
    rows = [{"type": "header", "version": bench.version, "seed": bench.seed,
             "episodes": len(bench)}]
    for e in bench.episodes:
        rows.append({"type": "episode", "scene_id": e.scene_id,
                     "start": [e.start.x, e.start.y, e.start.heading], "goal": [e.goal.x, e.goal.y],
                     "shortest_len": e.shortest_len, "keypoints": e.keypoints})
    return rows


def write_benchmark(path, bench: Benchmark) -> None:
    atomic_write_text(path, dumps_jsonl(benchmark_records(bench)))


def read_benchmark(path) -> Benchmark:
    rows = read_jsonl(path)
    if not rows or rows[0].get("type") != "header":
        raise BenchmarkError(f"{path}: missing benchmark header")
    if rows[0].get("version") != BENCHMARK_VERSION:
        raise BenchmarkError(f"{path}: unsupported benchmark version {rows[0].get('version')!r}")
    eps = []
    for r in rows[1:]:
        eps.append(EpisodeSpec(r["scene_id"], Pose(*r["start"]), Point2(*r["goal"]),
                               r["shortest_len"], r["keypoints"]))
    if len(eps) != rows[0]["episodes"]:
        raise BenchmarkError(f"{path}: header announces {rows[0]['episodes']} episodes, "
                             f"found {len(eps)}")
    return Benchmark(tuple(eps), rows[0]["seed"], rows[0]["version"])


# ---------------------------------------------------------------- actors

class ExpertActor:
    """The privileged planner driving the robot directly."""

    name = "expert"

    def act(self, envs: list[NavEnv], rngs) -> list[np.ndarray]:
        return [env.expert()[0] for env in envs]


class RandomActor:
    """Gaussian-noise waypoints: the floor any learned policy should beat."""

    name = "random"

    def __init__(self, K: int = 24, scale: float = 2.0):
        self.K = K
        self.scale = scale

    def act(self, envs, rngs) -> list[np.ndarray]:
        return [g.normal(0.0, self.scale, size=(self.K, 3)) for g in rngs]


class PolicyActor:
    """Sample, rank by the critic, execute the best (the deployed pipeline)."""

    name = "policy"

    def __init__(self, policy: DiffusionNavPolicy, keep_samples: bool = False):
        self.policy = policy
        self.params = policy.snapshot()
        self.keep_samples = keep_samples  # expose all samples and critic scores via extras
        self.extras: list[dict] | None = None

    def act(self, envs, rngs) -> list[np.ndarray]:
        net = self.policy.net_
        obs = np.stack([env.current_obs.features() for env in envs])
        cond, cond0 = net.encode(self.params, obs)
        samples = net.sample(self.params, cond, net.cfg.n_samples, list(rngs))
        scores = net.critic_values(self.params, cond0, samples)
        if self.keep_samples:
            self.extras = [{"samples": samples[i].tolist(), "scores": scores[i].tolist()}
                           for i in range(len(envs))]
        return [samples[i, rank_and_select(scores[i])] for i in range(len(envs))]


# ---------------------------------------------------------------- evaluation

def evaluate(actor, bench: Benchmark, worlds: dict[str, WorldMap], cfg: Config = Config(),
             seed: int = 0, batch: int = 25, training_scenes=(), name: str | None = None,
             record: bool = False) -> SuiteReport:
    """Run every benchmark episode; episodes advance in lockstep batches.

    Each episode owns a random stream seeded from (seed, episode index), so the
    report does not depend on ``batch``.
    """
    check_sensor(cfg)
    leaked = set(bench.scene_ids) & {scene_id_of(s) for s in training_scenes}
    if leaked:
        raise BenchmarkError(f"benchmark scenes overlap the training scenes: {sorted(leaked)}")
    for sid in bench.scene_ids:
        if sid not in worlds:
            raise BenchmarkError(f"scene not available: {sid}")
    planners: dict[str, ExpertPlanner] = {sid: make_planner(cfg, worlds[sid])
                                          for sid in bench.scene_ids}
    sensor = replace(cfg.sensor, noise_sigma=0.0, mount_offset=0.0)
    queue = list(range(len(bench)))
    active: list[tuple[int, NavEnv, np.random.Generator]] = []
    results: dict[int, EpisodeResult] = {}
    transcripts: dict[int, list] = {}

    def start(i: int):
        spec = bench.episodes[i]
        env = NavEnv(worlds[spec.scene_id], planners[spec.scene_id],
                     np.random.default_rng([seed, i, 1]), cfg.sim, sensor, randomize=False,
                     record=record)
        env.reset(spec)
        active.append((i, env, np.random.default_rng([seed, i])))

    def finish(i: int, env: NavEnv, kind: Status | None = None):
        st = env.status
        status = kind or st.status
        ok = status is Status.SUCCESS
        results[i] = EpisodeResult(i, env.spec.scene_id, ok, st.path_len, env.spec.shortest_len,
                                   None if ok else status.value, st.steps, st.decisions)
        if record:
            transcripts[i] = env.transcript

    while queue or active:
        while queue and len(active) < batch:
            start(queue.pop(0))
        try:
            actions = actor.act([e for _, e, _ in active], [g for _, _, g in active])
        except PlanningError:
            # only the expert actor plans; retry one by one to isolate the failure
            actions = []
            for i, env, g in active:
                try:
                    actions.append(actor.act([env], [g])[0])
                except PlanningError:
                    actions.append(None)
        extras = getattr(actor, "extras", None) if record else None
        still = []
        for j, ((i, env, g), act) in enumerate(zip(active, actions)):
            if act is None:
                finish(i, env, Status.STALLED)
                continue
            src = Source.EXPERT if isinstance(actor, ExpertActor) else Source.POLICY
            status = env.execute(act, src, extras[j] if extras else None)
            if status.done:
                finish(i, env)
            else:
                still.append((i, env, g))
        active = still
    report = summarize([results[i] for i in range(len(bench))], bench,
                       name or getattr(actor, "name", "policy"))
    report.transcripts = transcripts
    return report


def summarize(results: list[EpisodeResult], bench: Benchmark, name: str) -> SuiteReport:
    rep = SuiteReport(name, bench.version, results=list(results))
    for sid in bench.scene_ids:
        rs = [r for r in results if r.scene_id == sid]
        sr = 100.0 * float(np.mean([r.success for r in rs]))
        spl = 100.0 * float(np.mean([spl_term(r.success, r.shortest_len, r.actual_len)
                                     for r in rs]))
        rep.scenes[sid] = {"SR": sr, "SPL": spl, "n": len(rs)}
    rep.mSR = float(np.mean([v["SR"] for v in rep.scenes.values()]))
    rep.mSPL = float(np.mean([v["SPL"] for v in rep.scenes.values()]))
    return rep


def report_records(rep: SuiteReport) -> list[dict]:
    rows = [{"type": "report", "name": rep.name, "version": rep.version}]
    for sid, v in rep.scenes.items():
        rows.append({"type": "scene", "scene_id": sid, **v})
    rows.append({"type": "aggregate", "mSR": rep.mSR, "mSPL": rep.mSPL})
    for r in rep.results:
        rows.append({"type": "episode", "index": r.index, "scene_id": r.scene_id,
                     "success": r.success, "actual_len": r.actual_len,
                     "shortest_len": r.shortest_len, "failure_kind": r.failure_kind,
                     "steps": r.steps, "decisions": r.decisions})
    return rows


def write_report(path, rep: SuiteReport) -> None:
    atomic_write_text(path, dumps_jsonl(report_records(rep)))


def read_report(path) -> SuiteReport:
    rows = read_jsonl(path)
    head = rows[0]
    rep = SuiteReport(head["name"], head["version"])
    for r in rows[1:]:
        if r["type"] == "scene":
            rep.scenes[r["scene_id"]] = {"SR": r["SR"], "SPL": r["SPL"], "n": r["n"]}
        elif r["type"] == "aggregate":
            rep.mSR, rep.mSPL = r["mSR"], r["mSPL"]
        elif r["type"] == "episode":
            rep.results.append(EpisodeResult(r["index"], r["scene_id"], r["success"],
                                             r["actual_len"], r["shortest_len"],
                                             r["failure_kind"], r["steps"], r["decisions"]))
    return rep


def compare(reports: dict[str, SuiteReport]) -> dict:
    """Per-scene and aggregate SR/SPL table with deltas against the first method.

    Returns {"columns", "rows", "best", "text"}; ``best`` maps column -> method.
    """
    if not reports:
        raise ValueError("nothing to compare")
    names = list(reports)
    versions = {r.version for r in reports.values()}
    if len(versions) != 1:
        raise BenchmarkError(f"reports come from different benchmark versions: {sorted(versions)}")
    scenes = list(reports[names[0]].scenes)
    for n in names[1:]:
        if list(reports[n].scenes) != scenes:
            raise BenchmarkError(f"report {n!r} covers different scenes")
    columns = [f"{s}:{m}" for s in scenes for m in ("SR", "SPL")] + ["mSR", "mSPL"]

    def value(rep: SuiteReport, col: str) -> float:
        if col == "mSR":
            return rep.mSR
        if col == "mSPL":
            return rep.mSPL
        s, m = col.rsplit(":", 1)
        return rep.scenes[s][m]

    rows = {n: [value(reports[n], c) for c in columns] for n in names}
    ref = rows[names[0]]
    deltas = {n: [v - r for v, r in zip(rows[n], ref)] for n in names}
    best = {c: names[int(np.argmax([rows[n][j] for n in names]))] for j, c in enumerate(columns)}
    width = max(8, *(len(c) for c in columns))
    lines = ["method".ljust(12) + "".join(c.rjust(width + 2) for c in columns)]
    for n in names:
        cells = []
        for j, c in enumerate(columns):
            mark = "*" if best[c] == n else " "
            d = "" if n == names[0] else f"({deltas[n][j]:+.1f})"
            cells.append(f"{rows[n][j]:.1f}{mark}{d}".rjust(width + 2))
        lines.append(n.ljust(12) + "".join(cells))
    return {"columns": columns, "rows": rows, "deltas": deltas, "best": best,
            "text": "\n".join(lines)}


def load_worlds(refs, base_dir: str | None = None) -> dict[str, WorldMap]:
    out = {}
    for ref in refs:
        w = load_scene(ref, base_dir)
        out[w.scene_id] = w
    return out


def expert_ceiling_ok(rep: SuiteReport) -> bool:
    return math.isclose(rep.mSR, 100.0) and all(v["SR"] == 100.0 for v in rep.scenes.values())
