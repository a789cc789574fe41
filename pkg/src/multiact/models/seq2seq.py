"""GRU encoder-decoder over act token sequences with additive attention and beam search."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from ..data import EOS, GO, ActFrame, TurnRecord, Vocabularies, encode_target_tokens, from_token_sequence
from ..nn import GRU, Linear, init_params
from .base import EncoderOutput, StateEncoder, one_hot, pad_states, teacher_force_choice

NEG_INF = -1e30


@dataclass
class Seq2SeqBatch:
    ids: np.ndarray
    mask: np.ndarray
    k: np.ndarray
    tokens: np.ndarray  # (batch, steps) gold output ids, ending in <eos>
    tok_mask: np.ndarray


@dataclass
class BeamHypothesis:
    tokens: list[int]
    logp: float
    finished: bool
    h: np.ndarray | None = None


class Seq2SeqModel:
    kind = "seq2seq"

    def __init__(self, n_state: int, n_target: int, hidden: int = 64, emb: int | None = None,
                 go_id: int = 1, eos_id: int = 2, att_size: int | None = None):
        self.n_state, self.n_target, self.hidden = n_state, n_target, hidden
        self.emb = emb or hidden
        self.att_size = att_size or hidden
        self.go_id, self.eos_id = go_id, eos_id
        self.encoder = StateEncoder("enc", n_state, self.emb, hidden)
        self.gru = GRU("dec.gru", self.emb + hidden + 2, hidden)
        self.out = Linear("dec.out", 2 * hidden, n_target)

    @classmethod
    def from_vocab(cls, vocab: Vocabularies, hidden: int = 64, emb: int | None = None):
        t = vocab.target_tokens
        return cls(len(vocab.state_tokens), len(t), hidden, emb, go_id=t[GO], eos_id=t[EOS])

    def init(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        params = self.encoder.init(rng)
        params["dec.emb"] = init_params((self.n_target, self.emb), rng, fan_in=self.emb)
        params["att.W_enc"] = init_params((self.hidden, self.att_size), rng)
        params["att.W_dec"] = init_params((self.hidden, self.att_size), rng)
        params["att.v"] = init_params((self.att_size, 1), rng)
        params.update(self.gru.init(rng))
        params.update(self.out.init(rng))
        return params

    # ---------------------------------------------------------------- pieces

    def memory(self, p, enc: EncoderOutput):
        """Stacked encoder states (batch, len, hidden) and their attention keys."""
        mem = ad.stack(enc.states, axis=1)
        return mem, ad.matmul(mem, p["att.W_enc"])

    def attention(self, p, h, mem, keys, mask: np.ndarray):
        """Additive attention: softmax_i(v . tanh(W_enc e_i + W_dec h)); returns (context, weights)."""
        q = ad.matmul(h, p["att.W_dec"])
        q = ad.reshape(q, (q.shape[0], 1, q.shape[1]))
        scores = ad.matmul(ad.tanh(ad.add(keys, q)), p["att.v"])
        scores = ad.reshape(scores, scores.shape[:2])
        alpha = ad.softmax(ad.add(scores, (1.0 - mask) * NEG_INF))
        weighted = ad.mul(ad.reshape(alpha, (*alpha.shape, 1)), mem)
        return ad.sum_(weighted, axis=1), alpha

    def dec_step(self, p, prev_ids, h, mem, keys, mask, k):
        """One decoder step; returns (logits, new hidden)."""
        ctx, _ = self.attention(p, h, mem, keys, mask)
        x = ad.concat([ad.embedding(p["dec.emb"], prev_ids), ctx, k])
        _, h_new = self.gru.step(p, x, h)
        return self.out(p, ad.concat([h_new, ctx])), h_new

    # ------------------------------------------------------------- training

    def make_batch(self, records: Sequence[TurnRecord], vocab: Vocabularies) -> Seq2SeqBatch:
        ids, mask, k = pad_states(records, vocab)
        seqs = [encode_target_tokens(r.target_acts, vocab) for r in records]
        steps = max(len(s) for s in seqs)
        tokens = np.zeros((len(seqs), steps), dtype=np.int64)
        tok_mask = np.zeros((len(seqs), steps))
        for i, s in enumerate(seqs):
            tokens[i, :len(s)] = s
            tok_mask[i, :len(s)] = 1.0
        return Seq2SeqBatch(ids, mask, k, tokens, tok_mask)

    def loss(self, p, batch: Seq2SeqBatch, rng: np.random.Generator | None = None, tf_rate: float = 1.0):
        if batch.tokens.shape[1] == 0:
            raise ValueError("empty target sequence")
        enc = self.encoder(p, batch.ids, batch.mask)
        return self.decoder_loss(p, enc, batch, rng, tf_rate)

    def decoder_loss(self, p, enc: EncoderOutput, batch: Seq2SeqBatch, rng=None, tf_rate: float = 1.0):
        mem, keys = self.memory(p, enc)
        h = enc.final
        prev = np.full(batch.tokens.shape[0], self.go_id)
        total = None
        for t in range(batch.tokens.shape[1]):
            logits, h = self.dec_step(p, prev, h, mem, keys, batch.mask, batch.k)
            gold = batch.tokens[:, t]
            w = one_hot(gold, self.n_target) * batch.tok_mask[:, t:t + 1]
            step = -ad.sum_(ad.mul(ad.log_softmax(logits), w))
            total = step if total is None else total + step
            force = teacher_force_choice(rng, tf_rate) if rng is not None else tf_rate >= 1.0
            prev = gold if force else logits.value.argmax(axis=-1)
        return total

    # ------------------------------------------------------------- decoding

    def _log_probs(self, params, prev, h, mem, keys, mask, k):
        logits, h_new = self.dec_step(params, prev, h, mem, keys, mask, k)
        lp = ad.log_softmax(logits).value
        return lp, h_new.value

    def greedy(self, params, enc: EncoderOutput, k: np.ndarray, max_len: int = 60) -> BeamHypothesis:
        """Greedy decoding of a single example (batch of one)."""
        mem, keys = self.memory(params, enc)
        h = enc.final.value
        prev, tokens, logp = self.go_id, [], 0.0
        for _ in range(max_len):
            lp, h = self._log_probs(params, np.array([prev]), h, mem, keys, enc.mask, k)
            tok = int(lp[0].argmax())
            tokens.append(tok)
            logp += float(lp[0, tok])
            if tok == self.eos_id:
                return BeamHypothesis(tokens, logp, True)
            prev = tok
        return BeamHypothesis(tokens, logp, True)

    def beam_search(self, params, enc: EncoderOutput, k: np.ndarray, beam_size: int = 10,
                    max_len: int = 60) -> BeamHypothesis:
        """Beam search for a single example by summed log probability.

        Hypotheses finish on <eos> or when they reach ``max_len`` tokens.
        Search stops once the best finished score is at least the best live
        score, since appending tokens never raises a score.
        """
        mem, keys = self.memory(params, enc)
        k = np.asarray(k).reshape(1, -1)
        live = [BeamHypothesis([], 0.0, False, enc.final.value[0])]
        finished: list[BeamHypothesis] = []
        for _ in range(max_len):
            prev = np.array([hyp.tokens[-1] if hyp.tokens else self.go_id for hyp in live])
            h = np.stack([hyp.h for hyp in live])
            n = len(live)
            lp, h_new = self._log_probs(params, prev, h, mem, keys, np.repeat(enc.mask, n, axis=0),
                                        np.repeat(k, n, axis=0))
            scores = np.array([hyp.logp for hyp in live])[:, None] + lp
            flat = scores.ravel()
            # stable: ties keep lower (hypothesis, token) index first
            top = np.argsort(-flat, kind="stable")[:beam_size]
            nxt = []
            for idx in top:
                i, tok = divmod(int(idx), self.n_target)
                hyp = BeamHypothesis(live[i].tokens + [tok], float(flat[idx]), False, h_new[i])
                if tok == self.eos_id or len(hyp.tokens) >= max_len:
                    hyp.finished = True
                    finished.append(hyp)
                else:
                    nxt.append(hyp)
            live = nxt
            if not live:
                break
            best_done = max((f.logp for f in finished), default=-np.inf)
            if best_done >= max(hyp.logp for hyp in live):
                break
        pool = finished or live
        best = max(pool, key=lambda hyp: hyp.logp)
        best.h = None
        return best

    def predict_tokens(self, params, records, vocab: Vocabularies, beam_size: int = 10,
                       max_len: int = 60) -> list[list[str]]:
        out = []
        for r in records:
            ids, mask, k = pad_states([r], vocab)
            enc = self.encoder(params, ids, mask)
            hyp = self.beam_search(params, enc, k, beam_size, max_len)
            out.append([vocab.target_tokens.itos[t] for t in hyp.tokens])
        return out

    def predict(self, params, records, vocab: Vocabularies, beam_size: int = 10, max_len: int = 60,
                **_) -> list[list[ActFrame]]:
        return [from_token_sequence(toks, vocab.acts, vocab.slots)
                for toks in self.predict_tokens(params, records, vocab, beam_size, max_len)]
