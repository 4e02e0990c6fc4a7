"""``onlinenav`` command line: train, eval, plan, bench-gen, collect-offline, viz.

Exit codes: 0 success, 2 usage error, 3 data/file error, 4 runtime failure.
Failures print a single ``error[<code>] <Kind>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from dataclasses import replace

from threadpoolctl import threadpool_limits

from . import bench as bench_mod
from .config import Config, ConfigFileError, config_to_text, parse_config, read_config
from .io import atomic_write_text, dumps_jsonl, read_jsonl
from .maps import load_scene
from .planner import PlanningError
from .policy import CheckpointError, DiffusionNavPolicy, TrainingError
from .sim import write_transcript
from .trainer import collect_offline, make_planner, train
from .viz import VizError, VizSpec, render_viz
from .world import MapParseError, Point2, Pose

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

DATA_ERRORS = (FileNotFoundError, IsADirectoryError, PermissionError, ConfigFileError,
               MapParseError, bench_mod.BenchmarkError, CheckpointError, VizError,
               json.JSONDecodeError, KeyError)
RUNTIME_ERRORS = (PlanningError, TrainingError, ArithmeticError, RuntimeError)


class UsageError(Exception):
    pass


def _floats(text: str, n: tuple[int, ...]) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None
    if len(vals) not in n:
        raise UsageError(f"expected {' or '.join(map(str, n))} numbers, got {text!r}")
    return vals


def _require_file(path: str | None, what: str) -> str:
    if path is None:
        raise UsageError(f"--{what} is required")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def load_cfg(args) -> Config:
    if args.config:
        cfg = read_config(_require_file(args.config, "config"), paper_scale=args.paper_scale)
    else:
        cfg = parse_config("", paper_scale=args.paper_scale)
    if args.seed is not None:
        cfg = replace(cfg, trainer=replace(cfg.trainer, seed=args.seed))
    return cfg


def resolve_scene(scene_id: str, search: list[str]):
    """Map a benchmark scene id back to a world: generated mazes or ``<id>.map`` files."""
    m = re.fullmatch(r"maze-(\d+)", scene_id)
    if m:
        return load_scene(f"maze:{m.group(1)}")
    for d in search:
        for name in (scene_id, scene_id + ".map", scene_id + ".txt"):
            p = os.path.join(d, name)
            if os.path.isfile(p):
                w = load_scene(p)
                if w.scene_id == scene_id:
                    return w
    raise FileNotFoundError(f"scene file not found for scene_id {scene_id}")


# ---------------------------------------------------------------- commands

def cmd_train(args) -> int:
    cfg = load_cfg(args)
    out = args.out or "runs/train"
    if not args.resume and os.path.exists(os.path.join(out, "metrics.jsonl")):
        raise UsageError(f"{out} already holds a run; pass --resume to continue it")
    os.makedirs(out, exist_ok=True)
    atomic_write_text(os.path.join(out, "config.txt"), config_to_text(cfg))
    tr = train(cfg, out, resume=args.resume, stop_after=args.stop_after)
    print(json.dumps({"out": out, "iteration": tr.iteration,
                      "last": tr.metrics[-1] if tr.metrics else None}))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_cfg(args)
    bpath = _require_file(args.benchmark, "benchmark")
    if args.actor == "policy":
        _require_file(args.checkpoint, "checkpoint")
    bench = bench_mod.read_benchmark(bpath)
    search = [os.path.dirname(os.path.abspath(bpath))] + (args.maps or [])
    worlds = {sid: resolve_scene(sid, search) for sid in bench.scene_ids}
    if args.actor == "policy":
        policy = DiffusionNavPolicy.load(args.checkpoint)
        actor = bench_mod.PolicyActor(policy, keep_samples=args.transcript is not None)
    elif args.actor == "expert":
        actor = bench_mod.ExpertActor()
    else:
        actor = bench_mod.RandomActor(cfg.policy.K, cfg.policy.traj_scale)
    rep = bench_mod.evaluate(actor, bench, worlds, cfg, seed=cfg.trainer.seed,
                             training_scenes=cfg.trainer.scenes, name=args.name or args.actor,
                             record=args.transcript is not None)
    out = args.out or "report.jsonl"
    bench_mod.write_report(out, rep)
    if args.transcript:
        recs = [r for i in sorted(rep.transcripts) for r in rep.transcripts[i]]
        write_transcript(args.transcript, recs)
    print(json.dumps({"report": out, "mSR": rep.mSR, "mSPL": rep.mSPL}))
    return EXIT_OK


def cmd_plan(args) -> int:
    cfg = load_cfg(args)
    if args.map is None or args.start is None or args.goal is None:
        raise UsageError("plan needs --map, --start and --goal")
    world = load_scene(args.map)
    start = _floats(args.start, (2, 3))
    goal = _floats(args.goal, (2,))
    planner = make_planner(cfg, world)
    raw = planner.raw_path(Point2(*start[:2]), Point2(*goal))
    proc = planner.processed_path(Point2(*start[:2]), Point2(*goal))
    rec = {"scene_id": world.scene_id, "start": start, "goal": goal,
           "raw": raw.points.tolist(), "raw_length": raw.length,
           "processed": proc.points.tolist()}
    if len(start) == 3:
        traj, _ = planner.trajectory(Pose(*start), Point2(*goal))
        rec["waypoints"] = traj.tolist()
    atomic_write_text(args.out or "path.json", json.dumps(rec, sort_keys=True) + "\n")
    print(json.dumps({"path": args.out or "path.json", "raw_length": raw.length}))
    return EXIT_OK


def cmd_bench_gen(args) -> int:
    cfg = load_cfg(args)
    if not args.scenes:
        raise UsageError("bench-gen needs --scenes")
    worlds = [load_scene(s) for s in args.scenes]
    b = bench_mod.generate_benchmark(worlds, args.n_per_scene, (args.f_min, args.f_max),
                                     args.seed if args.seed is not None else 0, cfg)
    out = args.out or "benchmark.jsonl"
    bench_mod.write_benchmark(out, b)
    print(json.dumps({"benchmark": out, "episodes": len(b)}))
    return EXIT_OK


def cmd_collect_offline(args) -> int:
    cfg = load_cfg(args)
    n = args.n_tuples or cfg.trainer.iterations * cfg.trainer.E * cfg.trainer.T
    buf = collect_offline(cfg, n)
    rows = [{"obs": t.obs.tolist(), "goal": t.goal.tolist(), "expert": t.expert.tolist(),
             "safety": t.safety_target} for t in buf.tuples]
    out = args.out or "offline.jsonl"
    atomic_write_text(out, dumps_jsonl(rows))
    print(json.dumps({"dataset": out, "tuples": len(rows), "skipped": buf.skipped}))
    return EXIT_OK


def cmd_viz(args) -> int:
    if args.map is None:
        raise UsageError("viz needs --map")
    world = load_scene(args.map)
    transcript = read_jsonl(_require_file(args.transcript, "transcript")) if args.transcript \
        else None
    path = None
    if args.path:
        with open(_require_file(args.path, "path"), encoding="utf-8") as fh:
            rec = json.load(fh)
        if rec.get("scene_id", world.scene_id) != world.scene_id:
            raise VizError(f"path scene {rec['scene_id']!r} does not match map "
                           f"{world.scene_id!r}")
        path = rec["processed"]
    spec = VizSpec(world, transcript, path, heatmap=args.heatmap,
                   expert_path=not args.no_expert, executed_path=not args.no_executed,
                   fans=not args.no_fans)
    out = args.out or "viz.svg"
    render_viz(spec, out)
    print(json.dumps({"image": out}))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "plan": cmd_plan, "bench-gen": cmd_bench_gen,
            "collect-offline": cmd_collect_offline, "viz": cmd_viz}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--paper-scale", action="store_true")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="threads for numeric kernels")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="onlinenav", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    t = sub.add_parser("train", parents=[common])
    t.add_argument("--resume", action="store_true")
    t.add_argument("--stop-after", type=int, help="stop after this many iterations")
    e = sub.add_parser("eval", parents=[common])
    e.add_argument("--checkpoint")
    e.add_argument("--benchmark")
    e.add_argument("--actor", choices=["policy", "expert", "random"], default="policy")
    e.add_argument("--maps", action="append", help="directory holding scene map files")
    e.add_argument("--transcript", help="also write per-step transcripts here")
    e.add_argument("--name")
    pl = sub.add_parser("plan", parents=[common])
    pl.add_argument("--map")
    pl.add_argument("--start", help="x,y[,heading]")
    pl.add_argument("--goal", help="x,y")
    b = sub.add_parser("bench-gen", parents=[common])
    b.add_argument("--scenes", nargs="+")
    b.add_argument("--n-per-scene", type=int, default=25)
    b.add_argument("--f-min", type=int, default=0)
    b.add_argument("--f-max", type=int, default=4)
    c = sub.add_parser("collect-offline", parents=[common])
    c.add_argument("--n-tuples", type=int)
    v = sub.add_parser("viz", parents=[common])
    v.add_argument("--map")
    v.add_argument("--transcript")
    v.add_argument("--path")
    v.add_argument("--heatmap", action="store_true")
    v.add_argument("--no-expert", action="store_true")
    v.add_argument("--no-executed", action="store_true")
    v.add_argument("--no-fans", action="store_true")
    return p


def _fail(code: int, exc: BaseException) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error[{code}] {type(exc).__name__}: {msg}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(args.workers):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except DATA_ERRORS as exc:
        return _fail(EXIT_DATA, exc)
    except ValueError as exc:
        return _fail(EXIT_DATA, exc)
    except RUNTIME_ERRORS as exc:
        return _fail(EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())
