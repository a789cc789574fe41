"""End-to-end finite-difference checks for the four model families.

Each check builds a tiny seeded instance (hidden 8, 5 acts, 8 slots, a
3-token state and a 2-tuple target), computes the loss gradient on a tape,
and compares every parameter group against central differences.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import ActFrame, CONTINUE_VOCAB, Index, Vocabularies, encode_cas_targets, to_token_sequence
from .models import CasModel, ClassificationModel, GcasModel, Seq2SeqModel
from .models.cas import CasBatch
from .models.classifier import ClassBatch
from .models.seq2seq import Seq2SeqBatch

TOLERANCE = 1e-4
STEP = 1e-6


@dataclass
class GroupResult:
    model: str
    group: str
    size: int
    rel_error: float

    @property
    def ok(self) -> bool:
        return self.rel_error <= TOLERANCE


def tiny_vocab(n_acts: int = 5, n_slots: int = 8, n_state: int = 10) -> Vocabularies:
    acts = [f"act{i}" for i in range(n_acts)]
    slots = [f"slot{i}" for i in range(n_slots)]
    pairs = [f"{a}+{s}" for a in acts for s in slots[:2]]
    target = Index(["<pad>", "<go>", "<eos>", "<unk>", "(", ")", "=", ";", *acts, *slots])
    return Vocabularies(acts, slots, pairs, Index([f"w{i}" for i in range(n_state)]), target)


def _instance(kind: str, vocab: Vocabularies, hidden: int, seed: int):
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, len(vocab.state_tokens), size=(1, 3))
    mask = np.ones((1, 3))
    k = np.array([[np.log1p(rng.integers(0, 20)), rng.integers(0, 40) / 40]])
    frames = [ActFrame(vocab.acts[int(rng.integers(len(vocab.acts)))],
                       tuple(sorted(set(vocab.slots[int(j)] for j in rng.integers(0, len(vocab.slots), 2)),
                                    key=vocab.slots.index)))]
    if kind in ("gcas", "cas"):
        cls = GcasModel if kind == "gcas" else CasModel
        model = cls.from_vocab(vocab, hidden)
        c, a, s = encode_cas_targets(frames, vocab)
        batch = CasBatch(ids, mask, k, c[None], a[None], s[None], np.ones((1, len(c))))
    elif kind == "seq2seq":
        model = Seq2SeqModel.from_vocab(vocab, hidden)
        toks = [vocab.target_tokens[t] for t in to_token_sequence(frames)][:3]
        # a short target keeps the check fast; the last gold token is <eos>
        toks[-1] = vocab.target_tokens["<eos>"]
        tokens = np.array([toks])
        batch = Seq2SeqBatch(ids, mask, k, tokens, np.ones(tokens.shape))
    elif kind == "classification":
        model = ClassificationModel(len(vocab.state_tokens) + 2, len(vocab.pairs), width=hidden)
        x = np.concatenate([np.bincount(ids[0], minlength=len(vocab.state_tokens)).clip(0, 1), k[0]])[None]
        y = (rng.random((1, len(vocab.pairs))) < 0.3).astype(float)
        batch = ClassBatch(x, y)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    params = model.init(seed)
    # widen the draw so every group's gradient sits well above finite-difference noise
    params = {name: 3.0 * v for name, v in params.items()}
    return model, batch, params


def _loss_value(out) -> ad.Tensor:
    return getattr(out, "total", out)


def check_model(kind: str, seed: int = 0, hidden: int = 8, tf_rate: float = 1.0) -> list[GroupResult]:
    vocab = tiny_vocab()
    model, batch, params = _instance(kind, vocab, hidden, seed)

    def f(p):
        return float(_loss_value(model.loss(p, batch, np.random.default_rng(seed), tf_rate)).value)

    tape = ad.Tape()
    loss = _loss_value(model.loss(tape.watch(params), batch, np.random.default_rng(seed), tf_rate))
    grads = ad.backward(tape, loss)
    numeric = ad.numeric_grad(f, {n: v.copy() for n, v in params.items()}, h=STEP)
    return [GroupResult(kind, name, params[name].size, ad.rel_error(grads[name], numeric[name]))
            for name in params]


def run_all(seed: int = 0, kinds=("classification", "seq2seq", "cas", "gcas")) -> tuple[list[GroupResult], float]:
    start = time.perf_counter()
    results = [r for kind in kinds for r in check_model(kind, seed)]
    return results, time.perf_counter() - start


def format_results(results: list[GroupResult]) -> str:
    lines = [f"{'model':<15} {'group':<18} {'size':>6} {'rel.err':>10}  status"]
    for r in results:
        lines.append(f"{r.model:<15} {r.group:<18} {r.size:>6} {r.rel_error:>10.2e}  {'ok' if r.ok else 'FAIL'}")
    return "\n".join(lines)
