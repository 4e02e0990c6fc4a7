"""Differential-drive simulation: depth-ray sensing, pure-pursuit tracking,
unicycle stepping, episode bookkeeping and the safety score used as critic label."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .io import atomic_write_text, dumps_jsonl, read_jsonl
from .planner import (EpisodeSpec, ExpertPlanner, PlanningError, sample_episode,
                      segment_free, waypoints_to_world)
from .world import Point2, Pose, WorldMap, clearance_many, raycast_many, wrap_angle


class Status(str, enum.Enum):
    RUNNING = "Running"
    SUCCESS = "Success"
    COLLISION = "Collision"
    STALLED = "Stalled"
    TIMEOUT = "Timeout"


class Source(str, enum.Enum):
    POLICY = "Policy"
    EXPERT = "Expert"


@dataclass(frozen=True)
class SensorConfig:
    n_rays: int = 64
    fov: float = math.radians(120.0)
    max_range: float = 5.0
    goal_clamp: float = 10.0
    mount_offset: float = 0.0
    noise_sigma: float = 0.0


@dataclass(frozen=True)
class SimConfig:
    radius: float = 0.25
    dt: float = 0.1
    substeps: int = 5
    v_max: float = 1.0
    w_max: float = 2.0
    lookahead: float = 0.5
    speed_gain: float = 0.5  # v = v_max / (1 + speed_gain * |curvature|)
    turn_in_place: float = math.radians(45.0)  # bearing beyond which the agent only rotates
    success_radius: float = 1.0
    stall_window: int = 50
    stall_distance: float = 0.05
    max_decisions: int = 600
    mount_offset_range: tuple[float, float] = (0.0, 0.3)
    noise_sigma_range: tuple[float, float] = (0.0, 0.02)


@dataclass(frozen=True)
class SafetyConfig:
    d_safe: float = 0.5
    alpha: float = 0.1

    def __post_init__(self):
        if not self.d_safe > 0:
            raise ValueError("d_safe must be positive")


@dataclass(frozen=True)
class Observation:
    depth_rays: np.ndarray
    goal_vec: np.ndarray  # (distance clamped, bearing)
    mount_offset: float = 0.0
    noise_sigma: float = 0.0

    def features(self) -> np.ndarray:
        """Flat policy input: rays followed by (goal distance, goal bearing)."""
        return np.concatenate([self.depth_rays, self.goal_vec])


@dataclass(frozen=True)
class AgentState:
    pose: Pose
    v: float = 0.0
    w: float = 0.0


@dataclass
class EpisodeStatus:
    status: Status = Status.RUNNING
    steps: int = 0
    decisions: int = 0
    path_len: float = 0.0

    @property
    def done(self) -> bool:
        return self.status is not Status.RUNNING


@dataclass
class DataTuple:
    obs: np.ndarray  # Observation.features()
    goal: np.ndarray  # robot-frame goal vector
    expert: np.ndarray  # (K, 3)
    safety_target: float
    cached_features: np.ndarray | None = None
    pose: Pose | None = None
    source: Source = Source.EXPERT


# ------------------------------------------------------------------ sensing

def observe(world: WorldMap, state: AgentState, goal: Point2, cfg: SensorConfig,
            rng: np.random.Generator | None = None) -> Observation:
    p = state.pose
    ox = p.x + cfg.mount_offset * math.cos(p.heading)
    oy = p.y + cfg.mount_offset * math.sin(p.heading)
    if cfg.n_rays == 1:
        rel = np.zeros(1)
    else:
        rel = np.linspace(-cfg.fov / 2, cfg.fov / 2, cfg.n_rays)
    rays = raycast_many(world, np.array([[ox, oy]]), p.heading + rel, cfg.max_range)
    if cfg.noise_sigma > 0 and rng is not None:
        rays = rays + rng.normal(0.0, cfg.noise_sigma, size=rays.shape)
    rays = np.clip(rays, 0.0, cfg.max_range)
    gx, gy = goal.x - p.x, goal.y - p.y
    dist = min(math.hypot(gx, gy), cfg.goal_clamp)
    bearing = wrap_angle(math.atan2(gy, gx) - p.heading)
    return Observation(rays, np.array([dist, bearing]), cfg.mount_offset, cfg.noise_sigma)


# ------------------------------------------------------------------ control

def track(state: AgentState, traj: np.ndarray, cfg: SimConfig = SimConfig(),
          anchor: Pose | None = None, world: WorldMap | None = None) -> tuple[float, float]:
    """Pure-pursuit command toward a waypoint trajectory.

    ``traj`` holds robot-frame waypoints relative to ``anchor`` (default: the
    current pose), or world-frame points when ``anchor`` is the string "world".

    Given a ``world``, the lookahead point is pulled back along the trajectory
    until the straight chord to it is collision-free, and a forward command
    that would be blocked becomes a turn in place.
    """
    traj = np.asarray(traj, dtype=float)
    if traj.size == 0:
        return 0.0, 0.0
    pose = state.pose
    if isinstance(anchor, str):
        pts = traj[:, :2]
    else:
        pts = waypoints_to_world(traj, anchor or pose)
    here = np.array([pose.x, pose.y])
    dist = np.linalg.norm(pts - here, axis=1)
    if dist.max() < 1e-6:
        return 0.0, 0.0
    j0 = int(np.argmin(dist))
    # arc length along the trajectory, measured from the nearest waypoint
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts[j0:], axis=0), axis=1))])
    arc += dist[j0]
    beyond = np.nonzero(arc >= cfg.lookahead)[0]
    jt = j0 + int(beyond[0]) if beyond.size else len(pts) - 1
    if world is not None:
        while jt > j0 + 1 and not segment_free(world, here, pts[jt], cfg.radius):
            jt -= 1
    target = pts[jt]
    d = target - here
    L = float(np.hypot(*d))
    if L < 1e-3:
        return 0.0, 0.0
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    x_l = c * d[0] + s * d[1]
    y_l = -s * d[0] + c * d[1]
    bearing = math.atan2(y_l, x_l)
    if abs(bearing) > cfg.turn_in_place:
        return 0.0, math.copysign(cfg.w_max, bearing)
    kappa = 2.0 * y_l / (L * L)
    v = cfg.v_max / (1.0 + cfg.speed_gain * abs(kappa))
    w = kappa * v
    if abs(w) > cfg.w_max:
        w = math.copysign(cfg.w_max, w)
        v = cfg.w_max / abs(kappa)
    v = min(v, cfg.v_max)
    if world is not None:
        ahead = here + v * cfg.dt * np.array([c, s])
        if clearance_many(world, ahead[None])[0] <= cfg.radius:
            return 0.0, math.copysign(cfg.w_max, bearing) if bearing != 0 else cfg.w_max
    return v, w


def step(world: WorldMap, state: AgentState, cmd: tuple[float, float], dt: float,
         radius: float, cfg: SimConfig = SimConfig()) -> tuple[AgentState, Status]:
    """One unicycle tick; blocked motion keeps the position and reports a collision."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = float(np.clip(cmd[0], -cfg.v_max, cfg.v_max))
    w = float(np.clip(cmd[1], -cfg.w_max, cfg.w_max))
    p = state.pose
    nx = p.x + v * math.cos(p.heading) * dt
    ny = p.y + v * math.sin(p.heading) * dt
    heading = p.heading + w * dt
    if clearance_many(world, np.array([[nx, ny]]))[0] > radius:
        return AgentState(Pose(nx, ny, heading), v, w), Status.RUNNING
    return AgentState(Pose(p.x, p.y, heading), 0.0, w), Status.COLLISION


# ------------------------------------------------------------------ scoring

def safety_score(world: WorldMap, waypoints_world: np.ndarray, cfg: SafetyConfig = SafetyConfig()) -> float:
    """Critic target: minus the count of points closer than d_safe, plus
    alpha times the summed clearance increments along the waypoints."""
    d = clearance_many(world, np.asarray(waypoints_world, dtype=float))
    return safety_score_from_clearances(d, cfg)


def safety_score_from_clearances(d: np.ndarray, cfg: SafetyConfig = SafetyConfig()) -> float:
    d = np.asarray(d, dtype=float)
    return float(-np.count_nonzero(d < cfg.d_safe) + cfg.alpha * np.sum(d[1:] - d[:-1]))


def mix_action(policy_traj, expert_traj, rho: float,
               rng: np.random.Generator) -> tuple[np.ndarray, Source]:
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    if rng.random() < rho:
        return policy_traj, Source.POLICY
    return expert_traj, Source.EXPERT


# ------------------------------------------------------------------ environment

class NavEnv:
    """One agent in one world, auto-sampling episodes from its own random stream."""

    def __init__(self, world: WorldMap, planner: ExpertPlanner, rng: np.random.Generator,
                 sim: SimConfig = SimConfig(), sensor: SensorConfig = SensorConfig(),
                 F: int = 0, randomize: bool = True, record: bool = False,
                 max_keypoints: int | None = None):
        self.world = world
        self.planner = planner
        self.rng = rng
        self.sim = sim
        self.base_sensor = sensor
        self.sensor = sensor
        self.F = F
        self.max_keypoints = max_keypoints
        self.randomize = randomize
        self.record = record
        self.transcript: list[dict] = []
        self.spec: EpisodeSpec | None = None
        self.current_obs: Observation | None = None
        self.state: AgentState | None = None
        self.status = EpisodeStatus()
        self._trail: deque = deque(maxlen=sim.stall_window + 1)
        self._last_collision = -10 ** 9

    # episode lifecycle
    def reset(self, spec: EpisodeSpec | None = None) -> None:
        if spec is None:
            spec = sample_episode(self.world, self.rng, self.F, self.sim.radius,
                                  max_tries=2000, planner=self.planner,
                                  max_keypoints=self.max_keypoints)
        self.spec = spec
        self.state = AgentState(spec.start)
        self.status = EpisodeStatus()
        self._trail.clear()
        self._trail.append((spec.start.x, spec.start.y))
        self._last_collision = -10 ** 9
        if self.randomize:
            lo, hi = self.sim.mount_offset_range
            slo, shi = self.sim.noise_sigma_range
            self.sensor = replace(self.base_sensor, mount_offset=float(self.rng.uniform(lo, hi)),
                                  noise_sigma=float(self.rng.uniform(slo, shi)))
        else:
            self.sensor = self.base_sensor
        if self.record:
            self.transcript.append({"type": "episode", "scene_id": spec.scene_id,
                                    "start": [spec.start.x, spec.start.y, spec.start.heading],
                                    "goal": [spec.goal.x, spec.goal.y],
                                    "shortest_len": spec.shortest_len})
        self.current_obs = self.observe()

    @property
    def goal(self) -> Point2:
        return self.spec.goal

    def observe(self) -> Observation:
        return observe(self.world, self.state, self.goal, self.sensor, self.rng)

    def expert(self) -> tuple[np.ndarray, np.ndarray]:
        """Expert label (K, 3) and the (K+1, 2) world points it starts from (pose first)."""
        traj, _ = self.planner.trajectory(self.state.pose, self.goal)
        pts = waypoints_to_world(traj, self.state.pose)
        return traj, np.vstack([[self.state.pose.x, self.state.pose.y], pts])

    def execute(self, traj: np.ndarray, source: Source = Source.POLICY,
                extra: dict | None = None) -> EpisodeStatus:
        """Track ``traj`` (relative to the current pose) for ``substeps`` ticks."""
        sim = self.sim
        anchor = self.state.pose
        world_pts = waypoints_to_world(np.asarray(traj, dtype=float), anchor)
        if self.record:
            rec = {"type": "decision", "decision": self.status.decisions,
                   "pose": [anchor.x, anchor.y, anchor.heading], "source": source.value,
                   "executed": world_pts.tolist()}
            if extra:
                rec.update(extra)
            self.transcript.append(rec)
        self.status.decisions += 1
        for _ in range(sim.substeps):
            cmd = track(self.state, world_pts, sim, anchor="world", world=self.world)
            prev = self.state.pose
            self.state, event = step(self.world, self.state, cmd, sim.dt, sim.radius, sim)
            self.status.steps += 1
            moved = math.hypot(self.state.pose.x - prev.x, self.state.pose.y - prev.y)
            self.status.path_len += moved
            if event is Status.COLLISION:
                self._last_collision = self.status.steps
            self._trail.append((self.state.pose.x, self.state.pose.y))
            status = self._check()
            if self.record:
                p = self.state.pose
                self.transcript.append({"type": "step", "step": self.status.steps,
                                        "pose": [p.x, p.y, p.heading], "cmd": [cmd[0], cmd[1]],
                                        "event": event.value, "status": status.value,
                                        "source": source.value})
            if status is not Status.RUNNING:
                self.status.status = status
                return self.status
        if self.status.decisions >= sim.max_decisions:
            self.status.status = Status.TIMEOUT
        else:
            self.current_obs = self.observe()
        return self.status

    def state_dict(self) -> dict:
        """JSON-serializable snapshot of the episode in progress and the random stream."""
        sp, st = self.spec, self.state
        return {
            "spec": None if sp is None else {
                "scene_id": sp.scene_id, "start": [sp.start.x, sp.start.y, sp.start.heading],
                "goal": [sp.goal.x, sp.goal.y], "shortest_len": sp.shortest_len,
                "keypoints": sp.keypoints},
            "state": None if st is None else [st.pose.x, st.pose.y, st.pose.heading, st.v, st.w],
            "status": [self.status.status.value, self.status.steps, self.status.decisions,
                       self.status.path_len],
            "trail": [list(p) for p in self._trail],
            "last_collision": self._last_collision,
            "sensor": [self.sensor.mount_offset, self.sensor.noise_sigma],
            "rng": self.rng.bit_generator.state,
            "obs": None if self.current_obs is None else
            [self.current_obs.depth_rays.tolist(), self.current_obs.goal_vec.tolist()],
        }

    def load_state_dict(self, d: dict) -> None:
        if d["spec"] is not None:
            s = d["spec"]
            self.spec = EpisodeSpec(s["scene_id"], Pose(*s["start"]), Point2(*s["goal"]),
                                    s["shortest_len"], s["keypoints"])
        if d["state"] is not None:
            x, y, h, v, w = d["state"]
            self.state = AgentState(Pose(x, y, h), v, w)
        name, steps, decisions, path_len = d["status"]
        self.status = EpisodeStatus(Status(name), steps, decisions, path_len)
        self._trail.clear()
        self._trail.extend(tuple(p) for p in d["trail"])
        self._last_collision = d["last_collision"]
        self.sensor = replace(self.base_sensor, mount_offset=d["sensor"][0],
                              noise_sigma=d["sensor"][1])
        self.rng.bit_generator.state = d["rng"]
        self.current_obs = None
        if d.get("obs") is not None:
            self.current_obs = Observation(np.array(d["obs"][0]), np.array(d["obs"][1]),
                                           self.sensor.mount_offset, self.sensor.noise_sigma)

    def _check(self) -> Status:
        sim = self.sim
        p = self.state.pose
        if math.hypot(p.x - self.goal.x, p.y - self.goal.y) < sim.success_radius:
            return Status.SUCCESS
        if len(self._trail) == self._trail.maxlen:
            ox, oy = self._trail[0]
            if math.hypot(p.x - ox, p.y - oy) <= sim.stall_distance:
                recent = self.status.steps - self._last_collision <= sim.stall_window
                return Status.COLLISION if recent else Status.STALLED
        return Status.RUNNING


def write_transcript(path, records: list[dict]) -> None:
    atomic_write_text(path, dumps_jsonl(records))


def read_transcript(path) -> list[dict]:
    return read_jsonl(path)


@dataclass
class Transition:
    obs: Observation
    status: EpisodeStatus
    tuple: DataTuple | None = None
    source: Source = Source.POLICY
    reset: bool = False


def env_batch_step(envs: list[NavEnv], actions: list[np.ndarray], sources=None,
                   labels: list | None = None) -> list[Transition]:
    """Advance every environment by one policy decision; finished episodes auto-reset.

    ``labels`` optionally carries a precomputed DataTuple per env (recorded before
    the move); the returned observation is the post-step (or post-reset) one.
    """
    if len(actions) != len(envs):
        raise ValueError("one action per environment is required")
    out = []
    for i, (env, act) in enumerate(zip(envs, actions)):
        src = sources[i] if sources is not None else Source.POLICY
        status = env.execute(act, src)
        snapshot = EpisodeStatus(status.status, status.steps, status.decisions, status.path_len)
        reset = False
        if status.done:
            env.reset()
            reset = True
        out.append(Transition(env.current_obs, snapshot,
                              labels[i] if labels is not None else None, src, reset))
    return out
