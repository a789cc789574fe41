from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..data import ActFrame, TurnRecord, Vocabularies, frames_from_pairs, state_multihot, to_pair_targets
from ..nn import Linear


@dataclass
class ClassBatch:
    x: np.ndarray  # (batch, n_features) multi-hot state + KB vector
    y: np.ndarray  # (batch, n_pairs)


class ClassificationModel:
    """Multi-label act+slot pair classifier: two ReLU layers, sigmoid outputs."""

    kind = "classification"

    def __init__(self, n_features: int, n_pairs: int, width: int = 128):
        self.n_features, self.n_pairs, self.width = n_features, n_pairs, width
        self.layers = (Linear("cls.l1", n_features, width), Linear("cls.l2", width, width),
                       Linear("cls.out", width, n_pairs))

    @classmethod
    def from_vocab(cls, vocab: Vocabularies, width: int = 128):
        n_features = len(vocab.state_tokens) * 6 + 2
        return cls(n_features, len(vocab.pairs), width)

    def init(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        params = {}
        for layer in self.layers:
            params.update(layer.init(rng))
        return params

    def logits(self, p, x):
        l1, l2, out = self.layers
        h = ad.relu(l1(p, x))
        h = ad.relu(l2(p, h))
        return out(p, h)

    def forward(self, p, x) -> np.ndarray:
        """Pair probabilities."""
        return ad.sigmoid(self.logits(p, x)).value

    def make_batch(self, records: Sequence[TurnRecord], vocab: Vocabularies) -> ClassBatch:
        x = np.stack([state_multihot(r, vocab) for r in records])
        y = np.stack([to_pair_targets(r.target_acts, vocab) for r in records])
        return ClassBatch(x, y)

    def loss(self, p, batch: ClassBatch, rng=None, tf_rate: float = 1.0):
        z = self.logits(p, batch.x)
        bce = ad.add(ad.mul(ad.log_sigmoid(z), batch.y), ad.mul(ad.log_sigmoid(-z), 1.0 - batch.y))
        return -ad.sum_(bce)

    def predict(self, params, records, vocab: Vocabularies, threshold: float = 0.5, **_) -> list[list[ActFrame]]:
        x = np.stack([state_multihot(r, vocab) for r in records])
        probs = self.forward(params, x)
        return [frames_from_pairs(vocab.pairs[j] for j in np.flatnonzero(row > threshold)) for row in probs]
