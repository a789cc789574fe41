from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..data import TurnRecord, Vocabularies, encode_state_input
from ..nn import GRU


def one_hot(ids, n: int) -> np.ndarray:
    return np.eye(n)[np.asarray(ids, dtype=np.int64)]


@dataclass
class EncoderOutput:
    states: list  # e_0 .. e_l, each (batch, hidden)
    final: object  # h^E, (batch, hidden)
    mask: np.ndarray  # (batch, length); 1 where a real token sits


@dataclass(frozen=True)
class StateEncoder:
    """Embedding lookup followed by a single-layer GRU over the serialized state."""

    prefix: str
    n_tokens: int
    emb_size: int
    hidden: int

    @property
    def gru(self) -> GRU:
        return GRU(f"{self.prefix}.gru", self.emb_size, self.hidden)

    def init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        from ..nn import init_params

        return {f"{self.prefix}.emb": init_params((self.n_tokens, self.emb_size), rng, fan_in=self.emb_size),
                **self.gru.init(rng)}

    def __call__(self, p, ids: np.ndarray, mask: np.ndarray | None = None) -> EncoderOutput:
        ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
        if ids.shape[1] == 0:
            raise ValueError("cannot encode an empty token sequence")
        if mask is None:
            mask = np.ones(ids.shape)
        gru = self.gru
        batch = ids.shape[0]
        h = ad.Tensor(np.zeros((batch, self.hidden)))
        states = []
        ragged = not np.all(mask == 1)
        for t in range(ids.shape[1]):
            x = ad.embedding(p[f"{self.prefix}.emb"], ids[:, t])
            _, h_new = gru.step(p, x, h)
            if ragged:
                m = mask[:, t:t + 1]
                h_new = ad.add(ad.mul(h_new, m), ad.mul(h, 1.0 - m))
            h = h_new
            states.append(h)
        return EncoderOutput(states, h, mask)


def encode_state(params, encoder: StateEncoder, state_tokens: Sequence[int]) -> EncoderOutput:
    """Encode one serialized state (no batching)."""
    return encoder(params, np.asarray(state_tokens, dtype=np.int64)[None, :])


def pad_states(records: Sequence, vocab: Vocabularies):
    """Right-padded state token ids, their mask, and the (batch, 2) KB features.

    Items may be turn records, dialogue states, or pre-encoded states.
    """
    encoded = [encode_state_input(r, vocab) for r in records]
    length = max(len(e.ids) for e in encoded)
    ids = np.zeros((len(encoded), length), dtype=np.int64)
    mask = np.zeros((len(encoded), length))
    for i, e in enumerate(encoded):
        ids[i, :len(e.ids)] = e.ids
        mask[i, :len(e.ids)] = 1.0
    k = np.array([e.k for e in encoded], dtype=np.float64).reshape(len(encoded), 2)
    return ids, mask, k


def teacher_force_choice(rng: np.random.Generator, rate: float) -> bool:
    """True with probability ``rate``."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"teacher-forcing rate must lie in [0, 1], got {rate}")
    return bool(rng.random() < rate)


def masked_sum(x, mask: np.ndarray):
    return ad.sum_(ad.mul(x, mask))
