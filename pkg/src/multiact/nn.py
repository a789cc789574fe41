"""Parameter initialisation and the small layers every model is built from.

Parameters live in flat ``dict[str, np.ndarray]`` stores keyed by dotted
names.  A layer only knows its prefix and sizes; calling it with a mapping of
arrays (inference) or tape tensors (training) runs the forward pass.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


def init_params(shape, seed: int | np.random.Generator, fan_in: int | None = None) -> np.ndarray:
    """Uniform draw from (-1/sqrt(fan_in), 1/sqrt(fan_in)).

    ``fan_in`` defaults to the leading dimension (rows of a weight laid out
    as ``(in, out)``).
    """
    shape = tuple(int(s) for s in shape)
    if not shape or min(shape) <= 0:
        raise ValueError(f"invalid parameter shape {shape}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(fan_in if fan_in is not None else shape[0])
    out = rng.uniform(-bound, bound, size=shape)
    # uniform() is half-open; keep the bound strict on both sides
    out[out == -bound] = 0.0
    return out


def _size_check(name: str, x, expected: int) -> None:
    got = x.shape[-1]
    if got != expected:
        raise ad.ShapeError(f"{name}: expected last dimension {expected}, got shape {tuple(x.shape)}")


@dataclass(frozen=True)
class Linear:
    prefix: str
    n_in: int
    n_out: int

    def init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        return {
            f"{self.prefix}.W": init_params((self.n_in, self.n_out), rng),
            f"{self.prefix}.b": init_params((self.n_out,), rng, fan_in=self.n_in),
        }

    def __call__(self, p, x):
        _size_check(self.prefix, x, self.n_in)
        return ad.add(ad.matmul(x, p[f"{self.prefix}.W"]), p[f"{self.prefix}.b"])


@dataclass(frozen=True)
class GRU:
    """Gated recurrent unit with gate weights over the concatenation [x, h].

        z  = sigmoid([x, h] Wz + bz)
        r  = sigmoid([x, h] Wr + br)
        h~ = tanh([x, r*h] Wh + bh)
        h' = (1 - z) * h + z * h~

    The unit's output equals its new hidden state.
    """

    prefix: str
    input_size: int
    hidden_size: int

    def init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        n = self.input_size + self.hidden_size
        out = {}
        for gate in ("z", "r", "h"):
            out[f"{self.prefix}.W{gate}"] = init_params((n, self.hidden_size), rng)
            out[f"{self.prefix}.b{gate}"] = init_params((self.hidden_size,), rng, fan_in=n)
        return out

    def step(self, p, x, h_prev):
        _size_check(f"{self.prefix} input", x, self.input_size)
        _size_check(f"{self.prefix} hidden", h_prev, self.hidden_size)
        pre = self.prefix
        xh = ad.concat([x, h_prev])
        z = ad.sigmoid(ad.add(ad.matmul(xh, p[f"{pre}.Wz"]), p[f"{pre}.bz"]))
        r = ad.sigmoid(ad.add(ad.matmul(xh, p[f"{pre}.Wr"]), p[f"{pre}.br"]))
        xrh = ad.concat([x, ad.mul(r, h_prev)])
        cand = ad.tanh(ad.add(ad.matmul(xrh, p[f"{pre}.Wh"]), p[f"{pre}.bh"]))
        h_new = ad.add(h_prev, ad.mul(z, ad.sub(cand, h_prev)))
        return h_new, h_new


def gru_step(params, gru: GRU, x, h_prev):
    """Functional form of :meth:`GRU.step`; returns ``(g, h_new)`` with g = h_new."""
    return gru.step(params, x, h_prev)


def param_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))
