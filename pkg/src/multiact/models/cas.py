"""Continue-Act-Slots decoders: the gated gCAS cell and the single-GRU CAS baseline.

Both decode a sequence of (continue, act, slots) tuples from the encoded
dialogue state.  gCAS chains three GRU units inside every step
(continue -> act -> slots), each fed by its own input projection of the
previous tuple, the KB vector and whatever the earlier units of the same step
already decided.  CAS runs one GRU per step and reads the three predictions off
parallel heads.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..data import (CONTINUE_VOCAB, PAD, STOP, ActFrame, CasTuple, TurnRecord, Vocabularies,
                    encode_cas_targets, from_cas_sequence)
from ..nn import GRU, Linear
from .base import EncoderOutput, StateEncoder, masked_sum, one_hot, pad_states, teacher_force_choice

N_CONT = len(CONTINUE_VOCAB)
C_CONTINUE, C_STOP, C_PAD = range(N_CONT)


def _softmax_np(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class GcasStepTrace:
    x_c: object
    g_c: object
    h_c: object
    x_a: object
    g_a: object
    h_a: object
    x_s: object
    g_s: object
    h_s: object
    logit_c: object
    logit_a: object
    logit_s: object
    c_pred: np.ndarray  # one-hot argmax of P(c_t)
    a_pred: np.ndarray

    @property
    def p_c(self) -> np.ndarray:
        return _softmax_np(self.logit_c.value)

    @property
    def p_a(self) -> np.ndarray:
        return _softmax_np(self.logit_a.value)

    @property
    def s(self) -> np.ndarray:
        return ad._sigmoid(self.logit_s.value)

    @property
    def h(self):
        """State carried to the next step."""
        return self.h_s


@dataclass
class LossBreakdown:
    cont: object
    act: object
    slots: object
    total: object

    def values(self) -> dict[str, float]:
        return {"L_c": float(self.cont.value), "L_a": float(self.act.value),
                "L_s": float(self.slots.value), "L": float(self.total.value)}


@dataclass
class CasBatch:
    ids: np.ndarray
    mask: np.ndarray
    k: np.ndarray
    c: np.ndarray  # (batch, steps) continue ids
    a: np.ndarray  # (batch, steps) act ids
    s: np.ndarray  # (batch, steps, n_slots)
    step_mask: np.ndarray  # (batch, steps)


class _CasFamily:
    kind = ""

    def __init__(self, n_state: int, n_acts: int, n_slots: int, hidden: int = 64, emb: int | None = None):
        self.n_state, self.n_acts, self.n_slots, self.hidden = n_state, n_acts, n_slots, hidden
        self.n_in = N_CONT + n_acts + n_slots + 2
        self.encoder = StateEncoder("enc", n_state, emb or hidden, hidden)

    @classmethod
    def from_vocab(cls, vocab: Vocabularies, hidden: int = 64, emb: int | None = None):
        return cls(len(vocab.state_tokens), len(vocab.act_index), len(vocab.slots), hidden, emb)

    # -- subclasses provide
    def _layers(self) -> list:
        raise NotImplementedError

    def step(self, p, prev, k, h_prev, gold=None) -> GcasStepTrace:
        raise NotImplementedError

    def init(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        params = self.encoder.init(rng)
        for layer in self._layers():
            params.update(layer.init(rng))
        return params

    def start_tuple(self, batch: int):
        """Input tuple of the first step: (<pad>, <pad>, {})."""
        return (one_hot(np.full(batch, C_PAD), N_CONT),
                one_hot(np.zeros(batch, dtype=np.int64), self.n_acts),
                np.zeros((batch, self.n_slots)))

    def make_batch(self, records: Sequence[TurnRecord], vocab: Vocabularies) -> CasBatch:
        ids, mask, k = pad_states(records, vocab)
        targets = [encode_cas_targets(r.target_acts, vocab) for r in records]
        steps = max(len(c) for c, _, _ in targets)
        b = len(records)
        c = np.full((b, steps), C_PAD, dtype=np.int64)
        a = np.zeros((b, steps), dtype=np.int64)
        s = np.zeros((b, steps, self.n_slots))
        step_mask = np.zeros((b, steps))
        for i, (ci, ai, si) in enumerate(targets):
            n = len(ci)
            c[i, :n], a[i, :n], s[i, :n], step_mask[i, :n] = ci, ai, si, 1.0
        return CasBatch(ids, mask, k, c, a, s, step_mask)

    def loss(self, p, batch: CasBatch, rng: np.random.Generator | None = None,
             tf_rate: float = 1.0) -> LossBreakdown:
        enc = self.encoder(p, batch.ids, batch.mask)
        return self.decoder_loss(p, enc, batch, rng, tf_rate)

    def decoder_loss(self, p, enc: EncoderOutput, batch: CasBatch, rng=None, tf_rate: float = 1.0) -> LossBreakdown:
        if batch.c.shape[1] == 0:
            raise ValueError("empty CAS target sequence")
        b = batch.c.shape[0]
        prev = self.start_tuple(b)
        h = enc.final
        lc = la = ls = None
        for t in range(batch.c.shape[1]):
            gold_c = one_hot(batch.c[:, t], N_CONT)
            gold_a = one_hot(batch.a[:, t], self.n_acts)
            gold_s = batch.s[:, t]
            force = teacher_force_choice(rng, tf_rate) if rng is not None else tf_rate >= 1.0
            tr = self.step(p, prev, batch.k, h, gold=(gold_c, gold_a) if force else None)
            m = batch.step_mask[:, t]
            step_c = -masked_sum(ad.log_softmax(tr.logit_c), gold_c * m[:, None])
            step_a = -masked_sum(ad.log_softmax(tr.logit_a), gold_a * m[:, None])
            bce = ad.add(ad.mul(ad.log_sigmoid(tr.logit_s), gold_s),
                         ad.mul(ad.log_sigmoid(-tr.logit_s), 1.0 - gold_s))
            step_s = -masked_sum(bce, m[:, None])
            lc = step_c if lc is None else lc + step_c
            la = step_a if la is None else la + step_a
            ls = step_s if ls is None else ls + step_s
            h = tr.h
            if force:
                prev = (gold_c, gold_a, gold_s)
            else:
                prev = (tr.c_pred, tr.a_pred, (tr.logit_s.value > 0).astype(float))
        return LossBreakdown(lc, la, ls, lc + la + ls)

    def decode(self, params, enc: EncoderOutput, k: np.ndarray, max_steps: int = 6,
               threshold: float = 0.5) -> list[list[tuple[int, int, tuple[int, ...]]]]:
        """Greedy decoding; per example a list of (continue id, act id, slot ids)."""
        b = k.shape[0]
        prev = self.start_tuple(b)
        h = enc.final
        done = np.zeros(b, dtype=bool)
        out: list[list] = [[] for _ in range(b)]
        for _ in range(max_steps):
            tr = self.step(params, prev, k, h)
            c = tr.c_pred.argmax(axis=1)
            a = tr.a_pred.argmax(axis=1)
            s = tr.s > threshold
            for i in np.flatnonzero(~done):
                if c[i] == C_STOP:
                    out[i].append((C_STOP, 0, ()))
                    done[i] = True
                else:
                    out[i].append((int(c[i]), int(a[i]), tuple(int(j) for j in np.flatnonzero(s[i]))))
            if done.all():
                break
            prev = (tr.c_pred, tr.a_pred, s.astype(float))
            h = tr.h
        return out

    def to_tuples(self, decoded, vocab: Vocabularies) -> list[CasTuple]:
        tuples = []
        for c, a, s in decoded:
            if c == C_STOP:
                tuples.append(CasTuple(STOP, PAD, ()))
            else:
                tuples.append(CasTuple(CONTINUE_VOCAB[c], vocab.act_index.itos[a], tuple(vocab.slots[j] for j in s)))
        return tuples

    def predict(self, params, records, vocab: Vocabularies, max_steps: int = 6,
                threshold: float = 0.5, **_) -> list[list[ActFrame]]:
        ids, mask, k = pad_states(records, vocab)
        enc = self.encoder(params, ids, mask)
        decoded = self.decode(params, enc, k, max_steps, threshold)
        return [from_cas_sequence(self.to_tuples(d, vocab)) for d in decoded]


class GcasModel(_CasFamily):
    kind = "gcas"

    def __init__(self, n_state: int, n_acts: int, n_slots: int, hidden: int = 64, emb: int | None = None):
        super().__init__(n_state, n_acts, n_slots, hidden, emb)
        out = {"c": N_CONT, "a": n_acts, "s": n_slots}
        self.units = {
            u: (Linear(f"dec.{u}.in", self.n_in, hidden), GRU(f"dec.{u}.gru", hidden, hidden),
                Linear(f"dec.{u}.out", hidden, out[u]))
            for u in ("c", "a", "s")
        }

    def _layers(self):
        return [layer for unit in self.units.values() for layer in unit]

    def _unit(self, p, u, inputs, h):
        proj, gru, head = self.units[u]
        x = proj(p, ad.concat(inputs))
        g, h_new = gru.step(p, x, h)
        return x, g, h_new, head(p, g)

    def step(self, p, prev, k, h_prev, gold=None) -> GcasStepTrace:
        c_prev, a_prev, s_prev = prev
        x_c, g_c, h_c, logit_c = self._unit(p, "c", [c_prev, a_prev, s_prev, k], h_prev)
        c_t = gold[0] if gold is not None else one_hot(logit_c.value.argmax(axis=-1), N_CONT)
        x_a, g_a, h_a, logit_a = self._unit(p, "a", [c_t, a_prev, s_prev, k], h_c)
        a_t = gold[1] if gold is not None else one_hot(logit_a.value.argmax(axis=-1), self.n_acts)
        x_s, g_s, h_s, logit_s = self._unit(p, "s", [c_t, a_t, s_prev, k], h_a)
        return GcasStepTrace(x_c, g_c, h_c, x_a, g_a, h_a, x_s, g_s, h_s, logit_c, logit_a, logit_s,
                             one_hot(logit_c.value.argmax(axis=-1), N_CONT),
                             one_hot(logit_a.value.argmax(axis=-1), self.n_acts))


class CasModel(_CasFamily):
    kind = "cas"

    def __init__(self, n_state: int, n_acts: int, n_slots: int, hidden: int = 64, emb: int | None = None):
        super().__init__(n_state, n_acts, n_slots, hidden, emb)
        self.gru = GRU("dec.gru", self.n_in, hidden)
        self.heads = (Linear("dec.c.out", hidden, N_CONT), Linear("dec.a.out", hidden, n_acts),
                      Linear("dec.s.out", hidden, n_slots))

    def _layers(self):
        return [self.gru, *self.heads]

    def step(self, p, prev, k, h_prev, gold=None) -> GcasStepTrace:
        x = ad.concat([*prev, k])
        g, h = self.gru.step(p, x, h_prev)
        logit_c, logit_a, logit_s = (head(p, g) for head in self.heads)
        c_t = one_hot(logit_c.value.argmax(axis=-1), N_CONT)
        a_t = one_hot(logit_a.value.argmax(axis=-1), self.n_acts)
        return GcasStepTrace(x, g, h, None, None, None, None, None, h, logit_c, logit_a, logit_s, c_t, a_t)
