"""Adam with global-norm clipping over named parameter arrays."""

from __future__ import annotations

import numpy as np

from .nn import Params, global_norm


class Adam:
    def __init__(self, lr: float = 1e-4, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, clip: float | None = 1.0):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip = clip
        self.t = 0
        self.m: Params = {}
        self.v: Params = {}

    def step(self, params: Params, grads: Params) -> tuple[Params, dict]:
        """Return updated parameters (new arrays) and step info.

        Non-finite gradients skip the update and report it in ``info["error"]``.
        """
        norm = global_norm(grads)
        info = {"grad_norm": norm, "error": None}
        if not np.isfinite(norm):
            info["error"] = "non-finite gradient; update skipped"
            return params, info
        scale = 1.0
        if self.clip is not None and norm > self.clip:
            scale = self.clip / norm
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        out = {}
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                out[name] = p
                continue
            g = g * scale
            m = self.b1 * self.m.get(name, 0.0) + (1.0 - self.b1) * g
            v = self.b2 * self.v.get(name, 0.0) + (1.0 - self.b2) * g * g
            self.m[name], self.v[name] = m, v
            out[name] = p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return out, info

    def state_dict(self) -> dict:
        return {"t": self.t, "m": dict(self.m), "v": dict(self.v)}

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        self.m = {k: np.array(v, dtype=float) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=float) for k, v in state["v"].items()}


def sgd_update(params: Params, grads: Params, opt: Adam) -> tuple[Params, dict]:
    return opt.step(params, grads)
