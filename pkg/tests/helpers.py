"""Oracles shared by the unit tests and the acceptance suite."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from onlinenav.config import Config, TrainConfig
from onlinenav.policy import (Batch, DiffusionNavPolicy, DiffusionPolicyNet, DiffusionSchedule,
                              PolicyConfig, ddpm_noise, n_params)
from onlinenav.sim import DataTuple, SensorConfig

SMALL_NET = PolicyConfig(K=3, n_rays=6, encoder_hidden=(8,), feature_dim=6,
                         denoiser_hidden=(16, 12), time_dim=4, critic_embed=6,
                         critic_hidden=(8,), N=10, recompute_features=True)


def random_batch(cfg: PolicyConfig, rng: np.random.Generator, B: int = 3) -> Batch:
    obs = np.column_stack([rng.uniform(0, cfg.max_range, (B, cfg.n_rays)),
                           rng.uniform(0, 8, B), rng.uniform(-3, 3, B)])
    return Batch(obs, rng.normal(size=(B, cfg.K, 3)), rng.normal(size=B) * 3,
                 steps=rng.integers(1, cfg.N + 1, B), noise=rng.normal(size=(B, cfg.act_dim)))


def gradient_check(seed: int, cfg: PolicyConfig = SMALL_NET, h: float = 1e-5) -> dict[str, float]:
    """Worst relative error between analytic and central-difference gradients.

    Entries where both sides are below 1e-6 in magnitude must instead agree to
    1e-9 absolute (relative error is meaningless there).
    """
    net = DiffusionPolicyNet(cfg)
    rng = np.random.default_rng(seed)
    params = net.init_params(rng)
    assert n_params(params) <= 2000
    batch = random_batch(cfg, rng)
    out = {}
    for name, fn in (("actor", lambda q: net.actor_loss(q, batch)),
                     ("critic", lambda q: net.critic_loss(q, batch))):
        _, grads = fn(params)
        worst = 0.0
        for key, val in params.items():
            g = grads.get(key, np.zeros_like(val))
            for idx in np.ndindex(val.shape):
                q = dict(params)
                arr = val.copy()
                q[key] = arr
                arr[idx] = val[idx] + h
                lp = fn(q)[0]
                arr[idx] = val[idx] - h
                lm = fn(q)[0]
                fd = (lp - lm) / (2 * h)
                mag = max(abs(fd), abs(g[idx]))
                if mag > 1e-6:
                    worst = max(worst, abs(fd - g[idx]) / mag)
                elif abs(fd - g[idx]) > 1e-9:
                    worst = np.inf
        out[name] = worst
    return out


def noising_variance(k: int, n: int = 10_000, N: int = 50, seed: int = 0) -> tuple[float, float]:
    """(empirical variance, standard error) of a_k for a_0 = 0 over n draws of one coordinate."""
    sched = DiffusionSchedule(N)
    rng = np.random.default_rng([seed, k])
    x = ddpm_noise(np.zeros(n), np.full(n, k), rng.standard_normal(n), sched)
    var = float(np.var(x, ddof=1))
    target = 1.0 - sched.alpha_bar(k)
    return var, target * np.sqrt(2.0 / (n - 1))


def overfit_single_tuple(updates: int = 2000, batch: int = 128, lr: float = 1e-3):
    """Fit one expert trajectory repeatedly. Returns (final actor loss, mean waypoint error)."""
    rng = np.random.default_rng(1)
    obs = np.concatenate([rng.uniform(0, 5, 64), [4.0, 0.3]])
    t = np.linspace(0.25, 6.0, 24)
    expert = np.stack([t, 0.1 * t ** 1.5, np.full(24, 0.02)], axis=1)
    tup = DataTuple(obs, None, expert, -2.0)
    est = DiffusionNavPolicy(lr=lr, batch_size=batch, epochs=updates, recompute_features=True)
    est.fit([tup] * batch)
    loss = float(np.mean([r.actor_loss for r in est.history_[-50:]]))
    samples = est.sample(obs[None], n=16, rng=np.random.default_rng(5))[0]
    err = float(np.linalg.norm(samples[..., :2] - expert[:, :2], axis=-1).mean())
    return loss, err


def tiny_config(**trainer):
    """A seconds-scale training configuration on two generated mazes."""
    base = dict(T=6, E=4, epochs=1, batch_size=8, iterations=3, scenes=("maze:0", "maze:1"),
                checkpoint_every=2)
    base.update(trainer)
    pol = PolicyConfig(K=6, n_rays=16, encoder_hidden=(16,), feature_dim=8,
                       denoiser_hidden=(32,), time_dim=4, critic_embed=8, critic_hidden=(8,),
                       N=8, n_samples=4)
    return replace(Config(), policy=pol, sensor=SensorConfig(n_rays=16),
                   trainer=TrainConfig(**base))


CRITERIA: dict[int, str] = {}


def verdict(n: int, ok: bool, detail: str) -> None:
    """Record and print one acceptance line, then fail the test if ``ok`` is false."""
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA[n] = line
    print(line)
    assert ok, line


def dijkstra_grid(free: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    """Brute-force single-source costs on the 8-connected grid without corner cutting."""
    h, w = free.shape
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, vals = [], [], []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == dc == 0:
                continue
            r0, r1 = max(0, -dr), h - max(0, dr)
            c0, c1 = max(0, -dc), w - max(0, dc)
            ok = np.zeros_like(free)
            ok[r0:r1, c0:c1] = (free[r0:r1, c0:c1] & free[r0 + dr:r1 + dr, c0 + dc:c1 + dc])
            if dr and dc:
                ok[r0:r1, c0:c1] &= free[r0 + dr:r1 + dr, c0:c1] & free[r0:r1, c0 + dc:c1 + dc]
            rr, cc = np.nonzero(ok)
            rows.append(idx[rr, cc])
            cols.append(idx[rr + dr, cc + dc])
            vals.append(np.full(len(rr), np.hypot(dr, dc)))
    g = coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                   shape=(h * w, h * w)).tocsr()
    return dijkstra(g, indices=idx[start]).reshape(h, w)
