"""Conditional diffusion policy over waypoint trajectories, with a safety critic.

Observation encoder -> condition; denoiser eps(a_k, k, condition) -> noise
estimate; critic V(goal-free condition, trajectory) -> scalar safety score.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .diffusion import DiffusionSchedule, ddpm_noise, reverse_step, timestep_embedding
from .nn import MLP, Params, global_norm

GOAL_DIM = 3  # clamped distance / goal_clamp, cos(bearing), sin(bearing)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    K: int = 24
    n_rays: int = 64
    max_range: float = 5.0
    goal_clamp: float = 10.0
    encoder_hidden: tuple[int, ...] = (128, 128)
    feature_dim: int = 128
    denoiser_hidden: tuple[int, ...] = (256, 256, 256)
    time_dim: int = 32
    critic_embed: int = 64
    critic_hidden: tuple[int, ...] = (128,)
    N: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02
    traj_scale: float = 2.0
    n_samples: int = 16
    recompute_features: bool = False
    prediction: str = "sample"  # what the denoiser head outputs: "epsilon" or "sample" (clean a_0)

    def __post_init__(self):
        if self.prediction not in ("epsilon", "sample"):
            raise ConfigError("prediction must be 'epsilon' or 'sample'")
        for name in ("K", "n_rays", "feature_dim", "time_dim", "critic_embed", "N", "n_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("encoder_hidden", "denoiser_hidden", "critic_hidden"):
            object.__setattr__(self, name, tuple(int(h) for h in getattr(self, name)))
        if self.traj_scale <= 0 or self.max_range <= 0 or self.goal_clamp <= 0:
            raise ConfigError("scales must be positive")

    @property
    def obs_dim(self) -> int:
        """Length of ``Observation.features()``: rays, goal distance, goal bearing."""
        return self.n_rays + 2

    @property
    def cond_dim(self) -> int:
        return self.feature_dim + GOAL_DIM

    @property
    def act_dim(self) -> int:
        return 3 * self.K

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


@dataclass
class LossReport:
    actor_loss: float
    critic_loss: float
    total: float
    grad_norm: float
    error: str | None = None


def total_loss(actor: float, critic: float, lam: float) -> float:
    if lam < 0:
        raise ValueError("critic weight must be non-negative")
    return actor + lam * critic


@dataclass
class Batch:
    """Training arrays for one gradient step.

    ``features`` are cached full conditions (used by the actor unless features
    are recomputed); ``obs`` are raw observation feature rows.
    """

    obs: np.ndarray  # (B, obs_dim)
    expert: np.ndarray  # (B, K, 3)
    safety: np.ndarray  # (B,)
    features: np.ndarray | None = None  # (B, cond_dim)
    steps: np.ndarray | None = field(default=None)  # (B,) diffusion steps
    noise: np.ndarray | None = field(default=None)  # (B, 3K)

    def __len__(self) -> int:
        return len(self.obs)


class DiffusionPolicyNet:
    """Stateless network definition; parameters are passed in explicitly."""

    def __init__(self, cfg: PolicyConfig = PolicyConfig()):
        self.cfg = cfg
        self.sched = DiffusionSchedule(cfg.N, cfg.beta_start, cfg.beta_end)
        self.encoder = MLP("enc", (cfg.n_rays + GOAL_DIM, *cfg.encoder_hidden, cfg.feature_dim))
        self.denoiser = MLP("den", (cfg.act_dim + cfg.time_dim + cfg.cond_dim,
                                    *cfg.denoiser_hidden, cfg.act_dim))
        self.embed = MLP("emb", (cfg.act_dim, cfg.critic_embed), out_act=True)
        self.critic = MLP("crit", (cfg.feature_dim + cfg.critic_embed, *cfg.critic_hidden, 1))
        self._temb = timestep_embedding(np.arange(1, cfg.N + 1), cfg.time_dim)

    @property
    def modules(self) -> tuple[MLP, ...]:
        return self.encoder, self.denoiser, self.embed, self.critic

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for m in self.modules:
            out.update(m.shapes())
        return out

    def init_params(self, rng: np.random.Generator) -> Params:
        params: Params = {}
        for m in self.modules:
            m.init(rng, params)
        return params

    # ----------------------------------------------------------- inputs
    def inputs(self, obs: np.ndarray) -> np.ndarray:
        """Observation features -> normalized network input (rays, goal block)."""
        obs = np.asarray(obs, dtype=float)
        if obs.ndim == 1:
            obs = obs[None]
        if obs.ndim != 2 or obs.shape[1] != self.cfg.obs_dim:
            raise ConfigError(f"expected observation rows of length {self.cfg.obs_dim}, "
                              f"got shape {obs.shape}")
        n = self.cfg.n_rays
        rays = obs[:, :n] / self.cfg.max_range
        dist = np.minimum(obs[:, n], self.cfg.goal_clamp) / self.cfg.goal_clamp
        bearing = obs[:, n + 1]
        return np.column_stack([rays, dist, np.cos(bearing), np.sin(bearing)])

    def without_goal(self, x: np.ndarray) -> np.ndarray:
        out = np.array(x, dtype=float)
        out[:, self.cfg.n_rays:] = 0.0
        return out

    def encode(self, params: Params, obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(full condition, goal-free condition) for raw observation rows."""
        x = self.inputs(obs)
        x = x.astype(params["enc.W0"].dtype, copy=False)
        h, _ = self.encoder.forward(params, x)
        h0, _ = self.encoder.forward(params, self.without_goal(x).astype(x.dtype))
        return np.concatenate([h, x[:, self.cfg.n_rays:]], axis=1), h0

    def _eps_coeffs(self, steps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """eps_hat = c_in * a_k + c_out * head; identity for epsilon prediction."""
        if self.cfg.prediction == "epsilon":
            return np.zeros(len(steps)), np.ones(len(steps))
        ab = self.sched.alpha_bars[np.asarray(steps) - 1]
        root = np.sqrt(1.0 - ab)
        return 1.0 / root, -np.sqrt(ab) / root

    # ----------------------------------------------------------- losses
    def draw_noise(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        steps = rng.integers(1, self.cfg.N + 1, size=n)
        noise = rng.standard_normal((n, self.cfg.act_dim))
        return steps, noise

    def actor_loss(self, params: Params, batch: Batch, rng: np.random.Generator | None = None,
                   recompute: bool | None = None) -> tuple[float, Params]:
        """Denoising MSE and its gradients."""
        cfg = self.cfg
        recompute = cfg.recompute_features if recompute is None else recompute
        B = len(batch)
        steps, noise = batch.steps, batch.noise
        if steps is None or noise is None:
            if rng is None:
                raise ValueError("need either fixed (steps, noise) or a random stream")
            steps, noise = self.draw_noise(B, rng)
        grads: Params = {}
        if recompute or batch.features is None:
            x = self.inputs(batch.obs)
            h, enc_cache = self.encoder.forward(params, x)
            cond = np.concatenate([h, x[:, cfg.n_rays:]], axis=1)
        else:
            cond = np.asarray(batch.features, dtype=float)
            enc_cache = None
        a0 = np.asarray(batch.expert, dtype=float).reshape(B, -1) / cfg.traj_scale
        ak = ddpm_noise(a0, steps, noise, self.sched)
        inp = np.concatenate([ak, self._temb[steps - 1], cond], axis=1)
        out, cache = self.denoiser.forward(params, inp)
        c_in, c_out = self._eps_coeffs(steps)
        diff = c_in[:, None] * ak + c_out[:, None] * out - noise
        loss = float(np.mean(diff * diff))
        d_inp = self.denoiser.backward(params, cache, 2.0 * diff * c_out[:, None] / diff.size, grads)
        if enc_cache is not None:
            dh = d_inp[:, cfg.act_dim + cfg.time_dim:cfg.act_dim + cfg.time_dim + cfg.feature_dim]
            self.encoder.backward(params, enc_cache, dh, grads)
        return loss, grads

    def critic_loss(self, params: Params, batch: Batch) -> tuple[float, Params]:
        """MSE between the critic's score of the expert trajectory and its safety target."""
        cfg = self.cfg
        B = len(batch)
        grads: Params = {}
        x0 = self.without_goal(self.inputs(batch.obs))
        h, enc_cache = self.encoder.forward(params, x0)
        traj = np.asarray(batch.expert, dtype=float).reshape(B, -1) / cfg.traj_scale
        e, emb_cache = self.embed.forward(params, traj)
        v, head_cache = self.critic.forward(params, np.concatenate([h, e], axis=1))
        diff = v[:, 0] - np.asarray(batch.safety, dtype=float)
        loss = float(np.mean(diff * diff))
        dz = self.critic.backward(params, head_cache, (2.0 * diff / B)[:, None], grads)
        self.embed.backward(params, emb_cache, dz[:, cfg.feature_dim:], grads)
        self.encoder.backward(params, enc_cache, dz[:, :cfg.feature_dim], grads)
        return loss, grads

    def loss_and_grads(self, params: Params, batch: Batch, lam: float,
                       rng: np.random.Generator | None = None) -> tuple[LossReport, Params]:
        actor, ga = self.actor_loss(params, batch, rng)
        critic, gc = self.critic_loss(params, batch)
        grads = {}
        for name in params:
            g = np.zeros_like(params[name])
            if name in ga:
                g = g + ga[name]
            if name in gc and lam != 0.0:
                g = g + lam * gc[name]
            grads[name] = g
        report = LossReport(actor, critic, total_loss(actor, critic, lam), global_norm(grads))
        return report, grads

    # ----------------------------------------------------------- inference
    def sample(self, params: Params, cond: np.ndarray, n: int, rng) -> np.ndarray:
        """Ancestral sampling; (M, cond_dim) conditions -> (M, n, K, 3) trajectories.

        ``rng`` is one generator, or a list with one generator per condition row so
        that each row's samples do not depend on what else is in the batch.
        """
        if n < 1:
            raise ValueError("n must be >= 1")
        cfg = self.cfg
        den = self.denoiser
        W0 = den.W(params, 0)
        dtype = W0.dtype
        A, T = cfg.act_dim, cfg.time_dim
        cond = np.asarray(cond, dtype=dtype).reshape(-1, cfg.cond_dim)
        M = len(cond)
        # the condition and step embedding enter the first layer additively: precompute them
        base = np.repeat(cond @ W0[A + T:] + den.b(params, 0), n, axis=0)
        temb = (self._temb @ W0[A:A + T].astype(float)).astype(dtype)
        Wx = W0[:A]
        if isinstance(rng, np.random.Generator):
            def draw():
                return rng.standard_normal((M * n, A), dtype=dtype)
        else:
            if len(rng) != M:
                raise ValueError("need one random stream per condition row")

            def draw():
                return np.concatenate([g.standard_normal((n, A), dtype=dtype) for g in rng])
        x = draw()
        for k in range(cfg.N, 0, -1):
            z = x @ Wx + base + temb[k - 1]
            head, _ = den.forward(params, x, first=z)
            c_in, c_out = self._eps_coeffs(np.array([k]))
            eps_hat = head if self.cfg.prediction == "epsilon" else \
                (c_in[0] * x + c_out[0] * head).astype(dtype, copy=False)
            noise = draw() if k > 1 else None
            x = reverse_step(x, eps_hat, k, self.sched, noise).astype(dtype, copy=False)
        return (x.astype(float) * cfg.traj_scale).reshape(M, n, cfg.K, 3)

    def critic_values(self, params: Params, cond_goalless: np.ndarray,
                      trajs: np.ndarray) -> np.ndarray:
        """Scores for (M, n, K, 3) trajectories under (M, feature_dim) goal-free conditions."""
        cfg = self.cfg
        trajs = np.asarray(trajs)
        M, n = trajs.shape[:2]
        dtype = params["crit.W0"].dtype
        h = np.repeat(np.asarray(cond_goalless, dtype=dtype).reshape(M, -1), n, axis=0)
        e, _ = self.embed.forward(params, (trajs.reshape(M * n, -1) / cfg.traj_scale).astype(dtype))
        v, _ = self.critic.forward(params, np.concatenate([h, e], axis=1))
        return v[:, 0].astype(float).reshape(M, n)

    def critic_value(self, params: Params, obs: np.ndarray, traj: np.ndarray) -> np.ndarray:
        """Score trajectories (B, K, 3) for observation rows (B, obs_dim)."""
        _, h0 = self.encode(params, obs)
        return self.critic_values(params, h0, np.asarray(traj)[:, None])[:, 0]


def rank_and_select(scores: np.ndarray) -> int:
    """Index of the best-scored trajectory; ties go to the lowest index."""
    scores = np.asarray(scores, dtype=float).ravel()
    if scores.size == 0:
        raise ValueError("nothing to rank")
    return int(np.argmax(scores))


def cast_params(params: Params, dtype=np.float32) -> Params:
    return {k: np.asarray(v, dtype=dtype) for k, v in params.items()}
