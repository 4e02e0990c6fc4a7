"""DDPM noise schedule, forward noising and the ancestral reverse step."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear beta schedule over steps ``k = 1..N`` (arrays are indexed by ``k - 1``).

    ``beta_start``/``beta_end`` are quoted for a ``reference_steps``-step chain and
    stretched by ``reference_steps / N`` so a short chain still ends near pure
    noise; ``reference_steps=None`` uses them as given.
    """

    N: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02
    reference_steps: int | None = 1000
    betas: np.ndarray = field(init=False, repr=False, compare=False)
    alphas: np.ndarray = field(init=False, repr=False, compare=False)
    alpha_bars: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise ValueError("need 0 < beta_start <= beta_end < 1")
        betas = np.linspace(self.beta_start, self.beta_end, self.N) if self.N > 1 \
            else np.array([self.beta_start])
        if self.reference_steps is not None:
            betas = np.minimum(betas * (self.reference_steps / self.N), 0.999)
        alphas = 1.0 - betas
        for name, arr in (("betas", betas), ("alphas", alphas),
                          ("alpha_bars", np.cumprod(alphas))):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def check_step(self, k) -> np.ndarray:
        k = np.asarray(k)
        if np.any(k < 1) or np.any(k > self.N) or not np.all(np.equal(np.mod(k, 1), 0)):
            raise ValueError(f"diffusion step must be an integer in [1, {self.N}]")
        return k.astype(int)

    def alpha_bar(self, k) -> np.ndarray | float:
        k = self.check_step(k)
        out = self.alpha_bars[k - 1]
        return float(out) if out.ndim == 0 else out

    def posterior_variance(self, k: int) -> float:
        """beta-tilde: variance of q(a_{k-1} | a_k, a_0); zero at k = 1."""
        k = int(self.check_step(k))
        if k == 1:
            return 0.0
        ab, ab_prev = self.alpha_bars[k - 1], self.alpha_bars[k - 2]
        return float((1.0 - ab_prev) / (1.0 - ab) * self.betas[k - 1])


def ddpm_noise(a0: np.ndarray, k, eps: np.ndarray, sched: DiffusionSchedule) -> np.ndarray:
    """a_k = sqrt(abar_k) a0 + sqrt(1 - abar_k) eps; ``k`` may be a per-row array."""
    a0 = np.asarray(a0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if a0.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} does not match trajectory shape {a0.shape}")
    ab = np.asarray(sched.alpha_bar(k), dtype=float)
    if ab.ndim == 1:
        ab = ab.reshape((-1,) + (1,) * (a0.ndim - 1))
    return np.sqrt(ab) * a0 + np.sqrt(1.0 - ab) * eps


def timestep_embedding(k, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer steps, shape (len(k), dim)."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    half = dim // 2
    freqs = np.exp(-math.log(10_000.0) * np.arange(half) / max(half, 1))
    ang = k[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(k), 1))], axis=1)
    return emb


def reverse_step(x: np.ndarray, eps_hat: np.ndarray, k: int, sched: DiffusionSchedule,
                 noise: np.ndarray | None) -> np.ndarray:
    """One ancestral update a_k -> a_{k-1} from the predicted noise."""
    beta = sched.betas[k - 1]
    ab = sched.alpha_bars[k - 1]
    mean = (x - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(1.0 - beta)
    if k == 1 or noise is None:
        return mean
    return mean + math.sqrt(sched.posterior_variance(k)) * noise
