"""Estimator-style wrapper: fit on expert-labelled tuples, predict trajectories."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .checkpoint import load_policy, save_policy
from .model import Batch, DiffusionPolicyNet, LossReport, PolicyConfig, cast_params, rank_and_select
from .optim import Adam


class TrainingError(RuntimeError):
    def __init__(self, message: str, batch_indices: np.ndarray):
        super().__init__(f"{message}; offending batch indices: {batch_indices.tolist()}")
        self.batch_indices = batch_indices


def tuples_to_batch(tuples) -> Batch:
    """Stack DataTuple-like records (obs, expert, safety_target, cached_features)."""
    if isinstance(tuples, Batch):
        return tuples
    tuples = list(tuples)
    if not tuples:
        raise ValueError("empty training set")
    feats = [t.cached_features for t in tuples]
    return Batch(obs=np.stack([np.asarray(t.obs, dtype=float) for t in tuples]),
                 expert=np.stack([np.asarray(t.expert, dtype=float) for t in tuples]),
                 safety=np.array([float(t.safety_target) for t in tuples]),
                 features=None if any(f is None for f in feats)
                 else np.stack([np.asarray(f, dtype=float) for f in feats]))


def _take(batch: Batch, idx: np.ndarray) -> Batch:
    return Batch(batch.obs[idx], batch.expert[idx], batch.safety[idx],
                 None if batch.features is None else batch.features[idx])


class DiffusionNavPolicy(BaseEstimator):
    """Point-goal diffusion navigation policy with critic-ranked sampling.

    ``fit`` restarts from fresh weights; ``partial_fit`` continues training, which
    is how the online loop uses it (one call per update stage).
    """

    def __init__(self, K: int = 24, n_rays: int = 64, max_range: float = 5.0,
                 goal_clamp: float = 10.0, encoder_hidden=(128, 128), feature_dim: int = 128,
                 denoiser_hidden=(256, 256, 256), time_dim: int = 32, critic_embed: int = 64,
                 critic_hidden=(128,), n_diffusion_steps: int = 50, beta_start: float = 1e-4,
                 beta_end: float = 0.02, traj_scale: float = 2.0, n_samples: int = 16,
                 recompute_features: bool = False, prediction: str = "sample",
                 lr: float = 1e-4, clip: float = 1.0, batch_size: int = 256, epochs: int = 5,
                 critic_weight: float = 1.0, random_state: int = 0):
        self.K = K
        self.n_rays = n_rays
        self.max_range = max_range
        self.goal_clamp = goal_clamp
        self.encoder_hidden = encoder_hidden
        self.feature_dim = feature_dim
        self.denoiser_hidden = denoiser_hidden
        self.time_dim = time_dim
        self.critic_embed = critic_embed
        self.critic_hidden = critic_hidden
        self.n_diffusion_steps = n_diffusion_steps
        self.beta_start = beta_start
        self.beta_end = beta_end
        self.traj_scale = traj_scale
        self.n_samples = n_samples
        self.recompute_features = recompute_features
        self.prediction = prediction
        self.lr = lr
        self.clip = clip
        self.batch_size = batch_size
        self.epochs = epochs
        self.critic_weight = critic_weight
        self.random_state = random_state

    # ------------------------------------------------------------ setup
    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(K=self.K, n_rays=self.n_rays, max_range=self.max_range,
                            goal_clamp=self.goal_clamp, encoder_hidden=tuple(self.encoder_hidden),
                            feature_dim=self.feature_dim,
                            denoiser_hidden=tuple(self.denoiser_hidden),
                            time_dim=self.time_dim, critic_embed=self.critic_embed,
                            critic_hidden=tuple(self.critic_hidden), N=self.n_diffusion_steps,
                            beta_start=self.beta_start, beta_end=self.beta_end,
                            traj_scale=self.traj_scale, n_samples=self.n_samples,
                            recompute_features=self.recompute_features,
                            prediction=self.prediction)

    def initialize(self) -> "DiffusionNavPolicy":
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.critic_weight < 0:
            raise ValueError("critic_weight must be non-negative")
        self.net_ = DiffusionPolicyNet(self.policy_config())
        init_rng = np.random.default_rng([self.random_state, 0])
        self.params_ = self.net_.init_params(init_rng)
        self.optimizer_ = Adam(self.lr, clip=self.clip)
        self.rng_ = np.random.default_rng([self.random_state, 1])
        self.step_ = 0
        self.history_: list[LossReport] = []
        self._snapshot = None
        return self

    # ------------------------------------------------------------ training
    def fit(self, X, y=None) -> "DiffusionNavPolicy":
        self.initialize()
        return self.partial_fit(X)

    def partial_fit(self, X, y=None) -> "DiffusionNavPolicy":
        """Run ``epochs`` shuffled passes over X (DataTuples or a Batch)."""
        if not hasattr(self, "params_"):
            self.initialize()
        data = tuples_to_batch(X)
        if data.obs.shape[1] != self.net_.cfg.obs_dim:
            raise ValueError(f"observation rows must have length {self.net_.cfg.obs_dim}")
        n = len(data)
        reports = []
        for _ in range(self.epochs):
            order = self.rng_.permutation(n)
            for s in range(0, n, self.batch_size):
                idx = order[s:s + self.batch_size]
                rep, grads = self.net_.loss_and_grads(self.params_, _take(data, idx),
                                                      self.critic_weight, self.rng_)
                if not np.isfinite(rep.total):
                    raise TrainingError("non-finite loss", idx)
                self.params_, info = self.optimizer_.step(self.params_, grads)
                rep.error = info["error"]
                self.step_ += 1
                reports.append(rep)
        self.history_.extend(reports)
        self.last_reports_ = reports
        self._snapshot = None
        return self

    # ------------------------------------------------------------ inference
    def snapshot(self):
        """Float32 copy of the current weights, frozen for a rollout stage."""
        check_is_fitted(self, "params_")
        if self._snapshot is None:
            self._snapshot = cast_params(self.params_, np.float32)
        return self._snapshot

    def _obs(self, obs) -> np.ndarray:
        obs = check_array(np.atleast_2d(np.asarray(obs, dtype=float)), dtype=float)
        if obs.shape[1] != self.net_.cfg.obs_dim:
            raise ValueError(f"observation rows must have length {self.net_.cfg.obs_dim}")
        return obs

    def encode(self, obs, params=None):
        check_is_fitted(self, "params_")
        return self.net_.encode(self.snapshot() if params is None else params, self._obs(obs))

    def sample(self, obs, n: int | None = None, rng: np.random.Generator | None = None,
               params=None) -> np.ndarray:
        """(B, n, K, 3) trajectory samples."""
        p = self.snapshot() if params is None else params
        cond, _ = self.encode(obs, p)
        return self.net_.sample(p, cond, n or self.n_samples, rng or self.rng_)

    def act(self, obs, rng: np.random.Generator | None = None, params=None):
        """Sample, score with the critic and keep the best per row.

        Returns (selected (B, K, 3), samples (B, n, K, 3), scores (B, n), cond (B, C)).
        """
        p = self.snapshot() if params is None else params
        cond, cond0 = self.encode(obs, p)
        samples = self.net_.sample(p, cond, self.n_samples, rng or self.rng_)
        scores = self.net_.critic_values(p, cond0, samples)
        best = np.array([rank_and_select(s) for s in scores])
        return samples[np.arange(len(samples)), best], samples, scores, cond

    def predict(self, obs) -> np.ndarray:
        return self.act(obs)[0]

    # ------------------------------------------------------------ persistence
    def save(self, path, extra: dict | None = None) -> None:
        check_is_fitted(self, "params_")
        ex = {"estimator": {k: (list(v) if isinstance(v, tuple) else v)
                            for k, v in self.get_params().items()},
              "rng": self.rng_.bit_generator.state}
        ex.update(extra or {})
        save_policy(path, self.net_.cfg, self.params_, self.step_, self.optimizer_, ex)

    @classmethod
    def load(cls, path) -> "DiffusionNavPolicy":
        ck = load_policy(path)
        kw = dict(ck["extra"].get("estimator", {}))
        for k in ("encoder_hidden", "denoiser_hidden", "critic_hidden"):
            if k in kw:
                kw[k] = tuple(kw[k])
        est = cls(**kw) if kw else cls(**_kwargs_from_config(ck["cfg"]))
        est.initialize()
        est.params_ = {k: np.asarray(v, dtype=float) for k, v in ck["params"].items()}
        if ck["adam"] is not None:
            est.optimizer_.load_state_dict(ck["adam"])
        if "rng" in ck["extra"]:
            est.rng_.bit_generator.state = ck["extra"]["rng"]
        est.step_ = int(ck["step"])
        est.checkpoint_extra_ = ck["extra"]
        return est


def _kwargs_from_config(cfg: PolicyConfig) -> dict:
    return dict(K=cfg.K, n_rays=cfg.n_rays, max_range=cfg.max_range, goal_clamp=cfg.goal_clamp,
                encoder_hidden=cfg.encoder_hidden, feature_dim=cfg.feature_dim,
                denoiser_hidden=cfg.denoiser_hidden, time_dim=cfg.time_dim,
                critic_embed=cfg.critic_embed, critic_hidden=cfg.critic_hidden,
                n_diffusion_steps=cfg.N, beta_start=cfg.beta_start, beta_end=cfg.beta_end,
                traj_scale=cfg.traj_scale, n_samples=cfg.n_samples,
                recompute_features=cfg.recompute_features, prediction=cfg.prediction)
