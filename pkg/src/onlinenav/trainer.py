"""Online imitation loop: rollout stages with expert mixing, update stages on fresh data.

Also provides the offline behavior-cloning baseline, which trains on expert-only
rollouts collected up front.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .io import atomic_write_text, dumps_jsonl
from .maps import load_scene
from .planner import ExpertPlanner, PlanningError
from .policy import DiffusionNavPolicy, rank_and_select
from .sim import DataTuple, NavEnv, Source, Status, env_batch_step, safety_score
from .world import WorldMap

log = logging.getLogger(__name__)


@dataclass
class RolloutBuffer:
    tuples: list[DataTuple] = field(default_factory=list)
    iteration_id: int = 0
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.tuples)


@dataclass
class RolloutStats:
    decisions: int = 0
    expert_decisions: int = 0
    episodes: int = 0
    successes: int = 0
    safety_sum: float = 0.0

    @property
    def success_rate(self) -> float | None:
        return self.successes / self.episodes if self.episodes else None

    @property
    def expert_fraction(self) -> float:
        return self.expert_decisions / self.decisions if self.decisions else 0.0


def make_estimator(cfg: Config) -> DiffusionNavPolicy:
    p, t = cfg.policy, cfg.trainer
    return DiffusionNavPolicy(
        K=p.K, n_rays=p.n_rays, max_range=p.max_range, goal_clamp=p.goal_clamp,
        encoder_hidden=p.encoder_hidden, feature_dim=p.feature_dim,
        denoiser_hidden=p.denoiser_hidden, time_dim=p.time_dim, critic_embed=p.critic_embed,
        critic_hidden=p.critic_hidden, n_diffusion_steps=p.N, beta_start=p.beta_start,
        beta_end=p.beta_end, traj_scale=p.traj_scale, n_samples=p.n_samples,
        recompute_features=p.recompute_features, prediction=p.prediction, lr=t.lr,
        batch_size=t.batch_size, epochs=t.epochs, critic_weight=t.lam, random_state=t.seed)


def make_planner(cfg: Config, world: WorldMap) -> ExpertPlanner:
    pc = cfg.planner
    return ExpertPlanner(world, radius=pc.radius, spacing=pc.spacing, search_dist=pc.search_dist,
                         K=cfg.policy.K, line_search=pc.line_search, smoothing=pc.smoothing,
                         margin=pc.margin)


def check_sensor(cfg: Config) -> None:
    if cfg.sensor.n_rays != cfg.policy.n_rays:
        raise ValueError("sensor n_rays and policy n_rays differ")


class OnlineTrainer:
    """Holds the environments, the policy and the mixing stream across iterations."""

    def __init__(self, cfg: Config, worlds: list[WorldMap] | None = None):
        check_sensor(cfg)
        self.cfg = cfg
        tc = cfg.trainer
        self.worlds = worlds if worlds is not None else [load_scene(s) for s in tc.scenes]
        self.planners = {w.scene_id: make_planner(cfg, w) for w in self.worlds}
        self.envs = [
            NavEnv(w, self.planners[w.scene_id], np.random.default_rng([tc.seed, 100 + i]),
                   cfg.sim, cfg.sensor, F=tc.F, randomize=tc.randomize,
                   max_keypoints=None if tc.max_keypoints < 0 else tc.max_keypoints)
            for i, w in enumerate(self.worlds[j % len(self.worlds)] for j in range(tc.E))]
        self.policy = make_estimator(cfg).initialize()
        self.rng = np.random.default_rng([tc.seed, 2])
        self.iteration = 0
        self.metrics: list[dict] = []
        for env in self.envs:
            env.reset()

    # ------------------------------------------------------------ stages
    def rollout_stage(self, rho: float | None = None, steps: int | None = None) -> RolloutBuffer:
        cfg = self.cfg
        rho = cfg.trainer.rho if rho is None else rho
        steps = cfg.trainer.T if steps is None else steps
        params = self.policy.snapshot()  # frozen for the whole stage
        net = self.policy.net_
        buf = RolloutBuffer(iteration_id=self.iteration)
        stats = RolloutStats()
        for _ in range(steps):
            obs = np.stack([env.current_obs.features() for env in self.envs])
            cond, cond0 = net.encode(params, obs)
            sources = [Source.POLICY if self.rng.random() < rho else Source.EXPERT
                       for _ in self.envs]
            actions: list[np.ndarray | None] = [None] * len(self.envs)
            pol = [i for i, s in enumerate(sources) if s is Source.POLICY]
            if pol:
                samples = net.sample(params, cond[pol], cfg.policy.n_samples, self.rng)
                scores = net.critic_values(params, cond0[pol], samples)
                for j, i in enumerate(pol):
                    actions[i] = samples[j, rank_and_select(scores[j])]
            live, labels = [], []
            for i, env in enumerate(self.envs):
                try:
                    traj, pts = env.expert()
                except PlanningError as exc:
                    log.warning("env %d: expert failed at %s (%s); tuple skipped, episode reset",
                                i, env.state.pose, exc)
                    buf.skipped += 1
                    stats.episodes += 1
                    env.reset()
                    continue
                v = safety_score(env.world, pts, cfg.trainer.safety)
                labels.append(DataTuple(obs[i], env.current_obs.goal_vec.copy(), traj, v,
                                        cond[i].astype(float), env.state.pose, sources[i]))
                stats.safety_sum += v
                if actions[i] is None:
                    actions[i] = traj
                live.append(i)
            trans = env_batch_step([self.envs[i] for i in live], [actions[i] for i in live],
                                   [sources[i] for i in live], labels)
            for tr in trans:
                stats.decisions += 1
                stats.expert_decisions += tr.source is Source.EXPERT
                if tr.reset:
                    stats.episodes += 1
                    stats.successes += tr.status.status is Status.SUCCESS
            buf.tuples.extend(labels)
        self.last_stats = stats
        return buf

    def refresh_features(self, buf: RolloutBuffer, chunk: int = 4096) -> None:
        """Re-encode stored observations with the current weights."""
        params = self.policy.snapshot()
        obs = np.stack([t.obs for t in buf.tuples])
        for s in range(0, len(obs), chunk):
            cond, _ = self.policy.net_.encode(params, obs[s:s + chunk])
            for t, c in zip(buf.tuples[s:s + chunk], cond):
                t.cached_features = c.astype(float)

    def update_stage(self, buf: RolloutBuffer) -> dict:
        if not len(buf):
            raise ValueError("empty rollout buffer")
        self.policy.partial_fit(buf.tuples)
        reps = self.policy.last_reports_
        if not reps:
            return {"actor_loss": None, "critic_loss": None}
        return {"actor_loss": float(np.mean([r.actor_loss for r in reps])),
                "critic_loss": float(np.mean([r.critic_loss for r in reps]))}

    def iterate(self) -> dict:
        """One rollout stage followed by one update stage on exactly that data."""
        tc = self.cfg.trainer
        buf = self.rollout_stage()
        expected = tc.E * tc.T - buf.skipped
        if len(buf) != expected or buf.iteration_id != self.iteration:
            raise AssertionError(f"stale or incomplete buffer: {len(buf)} tuples from "
                                 f"iteration {buf.iteration_id}, expected {expected} from "
                                 f"{self.iteration}")
        losses = self.update_stage(buf)
        st = self.last_stats
        row = {"iteration": self.iteration, **losses,
               "rollout_success": st.success_rate, "expert_fraction": st.expert_fraction,
               "mean_safety": st.safety_sum / max(len(buf), 1), "tuples": len(buf),
               "skipped": buf.skipped, "buffer_iteration": buf.iteration_id,
               "episodes": st.episodes}
        self.metrics.append(row)
        self.iteration += 1
        return row

    # ------------------------------------------------------------ persistence
    def state_extra(self) -> dict:
        return {"trainer": {"iteration": self.iteration, "rng": self.rng.bit_generator.state,
                            "envs": [e.state_dict() for e in self.envs],
                            "metrics": self.metrics}}

    def save(self, path) -> None:
        self.policy.save(path, extra=self.state_extra())

    @classmethod
    def resume(cls, cfg: Config, path, worlds: list[WorldMap] | None = None) -> "OnlineTrainer":
        tr = cls(cfg, worlds)
        tr.policy = DiffusionNavPolicy.load(path)
        st = tr.policy.checkpoint_extra_["trainer"]
        tr.iteration = st["iteration"]
        tr.rng.bit_generator.state = st["rng"]
        for env, d in zip(tr.envs, st["envs"]):
            env.load_state_dict(d)
        tr.metrics = st["metrics"]
        return tr


def write_metrics(path, rows: list[dict]) -> None:
    atomic_write_text(path, dumps_jsonl(rows))


def train(cfg: Config, out_dir, resume: bool = False, stop_after: int | None = None,
          worlds: list[WorldMap] | None = None) -> OnlineTrainer:
    """Run (or continue) the online loop, writing metrics and checkpoints into ``out_dir``.

    Files: ``metrics.jsonl`` (deterministic given the seed), ``timing.jsonl``
    (wall clock), ``checkpoint-XXXX.ckpt`` every ``checkpoint_every`` iterations
    and ``final.ckpt``. ``stop_after`` ends early (simulating an interruption).
    """
    os.makedirs(out_dir, exist_ok=True)
    tc = cfg.trainer
    latest = os.path.join(out_dir, "latest.ckpt")
    if resume and os.path.exists(latest):
        trainer = OnlineTrainer.resume(cfg, latest, worlds)
    else:
        trainer = OnlineTrainer(cfg, worlds)
    timing_path = os.path.join(out_dir, "timing.jsonl")
    timing = []
    if resume and os.path.exists(timing_path):
        with open(timing_path, encoding="utf-8") as fh:
            timing = [json.loads(l) for l in fh if l.strip()][:trainer.iteration]
    done = 0
    while trainer.iteration < tc.iterations:
        if stop_after is not None and done >= stop_after:
            break
        t0 = time.perf_counter()
        row = trainer.iterate()
        timing.append({"iteration": row["iteration"], "seconds": time.perf_counter() - t0})
        done += 1
        log.info("iteration %d: %s", row["iteration"], row)
        write_metrics(os.path.join(out_dir, "metrics.jsonl"), trainer.metrics)
        write_metrics(timing_path, timing)
        if trainer.iteration % tc.checkpoint_every == 0:
            trainer.save(os.path.join(out_dir, f"checkpoint-{trainer.iteration:04d}.ckpt"))
        trainer.save(latest)
    if trainer.iteration >= tc.iterations:
        trainer.save(os.path.join(out_dir, "final.ckpt"))
    return trainer


# ---------------------------------------------------------------- offline baseline

def collect_offline(cfg: Config, n_tuples: int, worlds: list[WorldMap] | None = None,
                    trainer: OnlineTrainer | None = None) -> RolloutBuffer:
    """Expert-only rollouts (no policy execution) until ``n_tuples`` tuples exist."""
    if n_tuples < 1:
        raise ValueError("n_tuples must be >= 1")
    tr = trainer or OnlineTrainer(cfg, worlds)
    out = RolloutBuffer(iteration_id=0)
    E = len(tr.envs)
    while len(out) < n_tuples:
        steps = math.ceil((n_tuples - len(out)) / E)
        buf = tr.rollout_stage(rho=0.0, steps=steps)
        out.tuples.extend(buf.tuples)
        out.skipped += buf.skipped
    out.tuples = out.tuples[:n_tuples]
    return out


def train_offline(cfg: Config, buffer: RolloutBuffer, trainer: OnlineTrainer | None = None,
                  epochs: int | None = None) -> OnlineTrainer:
    """Behavior cloning on a fixed expert dataset.

    Cached features are refreshed once per epoch, matching the once-per-iteration
    staleness of the online loop.
    """
    tr = trainer or OnlineTrainer(cfg)
    epochs = cfg.trainer.epochs if epochs is None else epochs
    tr.policy.set_params(epochs=1)
    for ep in range(epochs):
        tr.refresh_features(buffer)
        tr.policy.partial_fit(buffer.tuples)
        reps = tr.policy.last_reports_
        row = {"epoch": ep, "actor_loss": float(np.mean([r.actor_loss for r in reps])),
               "critic_loss": float(np.mean([r.critic_loss for r in reps]))}
        tr.metrics.append(row)
        log.info("offline epoch %d: %s", ep, row)
    return tr
