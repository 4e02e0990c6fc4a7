"""Desk-scale comparison runs: online training, offline behavior cloning and ablations,
all scored on one held-out maze suite."""

from __future__ import annotations

import logging
import os
from dataclasses import replace

from .bench import (Benchmark, PolicyActor, SuiteReport, evaluate, generate_benchmark,
                    read_benchmark, read_report, write_benchmark, write_report)
from .config import Config
from .maps import load_scene
from .policy import DiffusionNavPolicy
from .trainer import OnlineTrainer, collect_offline, train, train_offline

log = logging.getLogger(__name__)

HELD_OUT = tuple(f"maze:{s}" for s in range(1000, 1004))


def held_out_benchmark(path: str | None = None, n_per_scene: int = 25,
                       F_range: tuple[int, int] = (0, 4), seed: int = 0,
                       cfg: Config = Config()) -> tuple[Benchmark, dict]:
    worlds = [load_scene(ref) for ref in HELD_OUT]
    if path is not None and os.path.exists(path):
        bench = read_benchmark(path)
    else:
        bench = generate_benchmark(worlds, n_per_scene, F_range, seed, cfg)
        if path is not None:
            write_benchmark(path, bench)
    return bench, {w.scene_id: w for w in worlds}


def run_online(cfg: Config, out_dir: str) -> str:
    """Train (resuming if a partial run exists) and return the final checkpoint path."""
    final = os.path.join(out_dir, "final.ckpt")
    if not os.path.exists(final):
        train(cfg, out_dir, resume=True)
    return final


def run_offline(cfg: Config, out_dir: str) -> str:
    """Behavior cloning on as many expert tuples as the online run consumes, for the
    same number of gradient updates."""
    final = os.path.join(out_dir, "final.ckpt")
    if os.path.exists(final):
        return final
    tc = cfg.trainer
    n_tuples = tc.iterations * tc.E * tc.T
    tr = OnlineTrainer(cfg)
    buf = collect_offline(cfg, n_tuples, trainer=tr)
    log.info("collected %d expert tuples (%d skipped)", len(buf), buf.skipped)
    online_updates = tc.iterations * tc.epochs * -(-tc.E * tc.T // tc.batch_size)
    per_epoch = -(-len(buf) // tc.batch_size)
    epochs = max(1, round(online_updates / per_epoch))
    train_offline(cfg, buf, trainer=tr, epochs=epochs)
    os.makedirs(out_dir, exist_ok=True)
    tr.policy.save(final, extra={"offline": {"tuples": len(buf), "epochs": epochs,
                                             "metrics": tr.metrics}})
    return final


def score(checkpoint: str, bench: Benchmark, worlds: dict, cfg: Config, name: str,
          report_path: str | None = None) -> SuiteReport:
    if report_path is not None and os.path.exists(report_path):
        return read_report(report_path)
    policy = DiffusionNavPolicy.load(checkpoint)
    rep = evaluate(PolicyActor(policy), bench, worlds, cfg, name=name,
                   training_scenes=cfg.trainer.scenes)
    if report_path is not None:
        write_report(report_path, rep)
    return rep


def variants(cfg: Config) -> dict[str, Config]:
    """The four training configurations compared on the held-out suite."""
    return {
        "online": cfg,
        "rho1": replace(cfg, trainer=replace(cfg.trainer, rho=1.0)),
        "no_line_search": replace(cfg, planner=replace(cfg.planner, line_search=False)),
        "offline": cfg,
    }
