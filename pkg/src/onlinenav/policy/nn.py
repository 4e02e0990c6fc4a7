"""Dense networks with hand-written reverse-mode gradients.

Parameters live in a flat ``dict[str, ndarray]`` so that optimizers, checkpoints
and finite-difference checks can treat every network the same way.
"""

from __future__ import annotations

import numpy as np

Params = dict[str, np.ndarray]


def sigmoid(x: np.ndarray) -> np.ndarray:
    # exp overflow for very negative x gives inf -> 0, which is the right limit
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def silu(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return x / (1.0 + np.exp(-x))


def silu_grad(x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


class MLP:
    """Fully connected stack; SiLU between layers, linear output unless ``out_act``."""

    def __init__(self, prefix: str, sizes: tuple[int, ...] | list[int], out_act: bool = False):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.prefix = prefix
        self.sizes = tuple(int(s) for s in sizes)
        self.out_act = out_act

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def names(self) -> list[str]:
        out = []
        for i in range(self.n_layers):
            out += [f"{self.prefix}.W{i}", f"{self.prefix}.b{i}"]
        return out

    def shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            out[f"{self.prefix}.W{i}"] = (a, b)
            out[f"{self.prefix}.b{i}"] = (b,)
        return out

    def init(self, rng: np.random.Generator, params: Params) -> None:
        # He-style fan-in scaling; zero biases
        for i, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            params[f"{self.prefix}.W{i}"] = rng.normal(0.0, np.sqrt(1.0 / a), size=(a, b))
            params[f"{self.prefix}.b{i}"] = np.zeros(b)

    def W(self, params: Params, i: int) -> np.ndarray:
        return params[f"{self.prefix}.W{i}"]

    def b(self, params: Params, i: int) -> np.ndarray:
        return params[f"{self.prefix}.b{i}"]

    def forward(self, params: Params, x: np.ndarray, first: np.ndarray | None = None):
        """Returns (output, cache).

        ``first`` optionally replaces the first layer's pre-activation, letting a
        caller assemble it from precomputed blocks.
        """
        acts = [x]
        pres = []
        h = x
        for i in range(self.n_layers):
            z = first if (i == 0 and first is not None) else h @ self.W(params, i) + self.b(params, i)
            pres.append(z)
            last = i == self.n_layers - 1
            h = z if (last and not self.out_act) else silu(z)
            acts.append(h)
        return h, (acts, pres)

    def backward(self, params: Params, cache, dy: np.ndarray, grads: Params) -> np.ndarray:
        """Accumulate parameter gradients into ``grads``; return d(loss)/d(input)."""
        acts, pres = cache
        g = dy
        for i in reversed(range(self.n_layers)):
            last = i == self.n_layers - 1
            if not (last and not self.out_act):
                g = g * silu_grad(pres[i])
            wn, bn = f"{self.prefix}.W{i}", f"{self.prefix}.b{i}"
            gw = acts[i].T @ g
            gb = g.sum(axis=0)
            grads[wn] = grads[wn] + gw if wn in grads else gw
            grads[bn] = grads[bn] + gb if bn in grads else gb
            g = g @ self.W(params, i).T
        return g


def global_norm(grads: Params) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def n_params(params: Params) -> int:
    return int(sum(p.size for p in params.values()))
