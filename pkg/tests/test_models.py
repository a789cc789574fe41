import math

import numpy as np
import pytest

from multiact import autodiff as ad
from multiact.data import ActFrame, build_vocabs
from multiact.models import (CasModel, ClassificationModel, GcasModel, Seq2SeqModel, build_model)
from multiact.models.base import one_hot
from multiact.models.cas import C_PAD, N_CONT
from multiact.nn import param_count
from multiact.optim import AdamState, adam_step
from multiact.train import synthetic_corpus


@pytest.fixture(scope="module")
def corpus():
    recs = synthetic_corpus(6, seed=3)
    return recs, build_vocabs(recs)


def _zeros(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


# ---------------------------------------------------------- uniform outputs


@pytest.mark.parametrize("cls", [GcasModel, CasModel])
def test_zero_params_give_uniform_losses(cls, corpus):
    recs, vocab = corpus
    model = cls.from_vocab(vocab, hidden=8)
    batch = model.make_batch(recs[:1], vocab)
    steps = int(batch.step_mask.sum())
    out = model.loss(_zeros(model.init(0)), batch)
    vals = out.values()
    assert vals["L_c"] == pytest.approx(steps * math.log(3), abs=1e-12)
    assert vals["L_a"] == pytest.approx(steps * math.log(len(vocab.act_index)), abs=1e-12)
    assert vals["L_s"] == pytest.approx(steps * len(vocab.slots) * math.log(2), abs=1e-12)
    assert vals["L"] == pytest.approx(vals["L_c"] + vals["L_a"] + vals["L_s"], abs=1e-12)


def test_zero_params_classifier_is_half_everywhere(corpus):
    recs, vocab = corpus
    model = ClassificationModel.from_vocab(vocab, width=16)
    p = _zeros(model.init(0))
    batch = model.make_batch(recs, vocab)
    assert np.all(model.forward(p, batch.x) == 0.5)
    loss = float(model.loss(p, batch).value)
    assert loss == pytest.approx(len(recs) * len(vocab.pairs) * math.log(2), abs=1e-10)


def test_zero_params_seq2seq_loss(corpus):
    recs, vocab = corpus
    model = Seq2SeqModel.from_vocab(vocab, hidden=8)
    batch = model.make_batch(recs[:1], vocab)
    n = int(batch.tok_mask.sum())
    loss = float(model.loss(_zeros(model.init(0)), batch).value)
    assert loss == pytest.approx(n * math.log(len(vocab.target_tokens)), abs=1e-10)


# -------------------------------------------------- scalar gCAS step oracle


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def _lin(W, b, x):
    return [b[j] + sum(x[i] * W[i][j] for i in range(len(x))) for j in range(len(b))]


def _gru(p, pre, x, h):
    xh = x + h
    z = [_sig(v) for v in _lin(p[pre + ".Wz"], p[pre + ".bz"], xh)]
    r = [_sig(v) for v in _lin(p[pre + ".Wr"], p[pre + ".br"], xh)]
    cand = [math.tanh(v) for v in _lin(p[pre + ".Wh"], p[pre + ".bh"], x + [ri * hi for ri, hi in zip(r, h)])]
    return [hi + zi * (ci - hi) for hi, zi, ci in zip(h, z, cand)]


def _argmax_one_hot(v):
    j = max(range(len(v)), key=lambda i: (v[i], -i))
    return [1.0 if i == j else 0.0 for i in range(len(v))]


def _scalar_gcas_step(p, c, a, s, k, h):
    """Straight-line gCAS step on Python floats: continue, act, slots units in sequence."""
    def unit(u, inputs, h_in):
        x = _lin(p[f"dec.{u}.in.W"], p[f"dec.{u}.in.b"], inputs)
        g = _gru(p, f"dec.{u}.gru", x, h_in)
        return g, _lin(p[f"dec.{u}.out.W"], p[f"dec.{u}.out.b"], g)

    h_c, lc = unit("c", c + a + s + k, h)
    c_t = _argmax_one_hot(lc)
    h_a, la = unit("a", c_t + a + s + k, h_c)
    a_t = _argmax_one_hot(la)
    h_s, ls = unit("s", c_t + a_t + s + k, h_a)
    return lc, la, ls, h_s


def test_gcas_step_matches_scalar_oracle():
    model = GcasModel(n_state=7, n_acts=4, n_slots=5, hidden=6)
    params = model.init(11)
    rng = np.random.default_rng(2)
    c, a = one_hot([1], N_CONT), one_hot([2], 4)
    s = (rng.random((1, 5)) > 0.5).astype(float)
    k, h = rng.random((1, 2)), rng.normal(size=(1, 6))
    tr = model.step(params, (c, a, s), k, h)
    plist = {n: v.tolist() for n, v in params.items()}
    lc, la, ls, h_s = _scalar_gcas_step(plist, c[0].tolist(), a[0].tolist(), s[0].tolist(), k[0].tolist(),
                                        h[0].tolist())
    for got, want in ((tr.logit_c, lc), (tr.logit_a, la), (tr.logit_s, ls), (tr.h, h_s)):
        np.testing.assert_allclose(got.value[0], want, rtol=0, atol=1e-10)
    # the emitted hidden state is the slot unit's output, and each unit's output is its state
    assert tr.g_s is tr.h_s and tr.h is tr.h_s


def test_gcas_chain_feeds_previous_unit_state():
    model = GcasModel(n_state=5, n_acts=3, n_slots=4, hidden=4)
    p = model.init(0)
    prev = model.start_tuple(1)
    tr = model.step(p, prev, np.zeros((1, 2)), np.zeros((1, 4)))
    # act unit consumes the predicted continue one-hot, not the previous one
    np.testing.assert_array_equal(tr.x_a.value, (np.concatenate([tr.c_pred, prev[1], prev[2], np.zeros((1, 2))], 1)
                                                 @ p["dec.a.in.W"] + p["dec.a.in.b"]))


def test_start_tuple_is_pad_pad_empty():
    model = GcasModel(n_state=5, n_acts=3, n_slots=4, hidden=4)
    c, a, s = model.start_tuple(2)
    assert c.argmax(1).tolist() == [C_PAD] * 2 and a.argmax(1).tolist() == [0, 0] and not s.any()


def test_cas_decode_respects_max_steps(corpus):
    recs, vocab = corpus
    for cls in (CasModel, GcasModel):
        model = cls.from_vocab(vocab, hidden=8)
        params = model.init(1)
        params["dec.c.out.b"][:] = [5.0, -5.0, -5.0]  # never stop
        out = model.predict(params, recs, vocab, max_steps=3)
        assert all(len(f) <= 3 for f in out)


def test_teacher_forcing_changes_only_inputs(corpus):
    recs, vocab = corpus
    model = GcasModel.from_vocab(vocab, hidden=8)
    p, batch = model.init(4), model.make_batch(recs, vocab)
    forced = float(model.loss(p, batch, tf_rate=1.0).total.value)
    free = float(model.loss(p, batch, tf_rate=0.0).total.value)
    assert forced != free
    # on the first step the continue unit sees the start tuple either way
    one = model.make_batch(recs[:1], vocab)
    one.c, one.a, one.s, one.step_mask = one.c[:, :1], one.a[:, :1], one.s[:, :1], one.step_mask[:, :1]
    assert model.loss(p, one, tf_rate=1.0).values()["L_c"] == model.loss(p, one, tf_rate=0.0).values()["L_c"]
    # CAS has no chained units, so its whole first-step loss is unaffected
    cas = CasModel.from_vocab(vocab, hidden=8)
    q = cas.init(4)
    assert float(cas.loss(q, one, tf_rate=1.0).total.value) == float(cas.loss(q, one, tf_rate=0.0).total.value)


# -------------------------------------------------------------- attention


def test_attention_weights_and_masking():
    model = Seq2SeqModel(n_state=6, n_target=5, hidden=4)
    p = model.init(0)
    ids = np.array([[1, 2, 3, 0], [4, 5, 0, 0]])
    mask = np.array([[1, 1, 1, 0], [1, 1, 0, 0]], dtype=float)
    enc = model.encoder(p, ids, mask)
    mem, keys = model.memory(p, enc)
    h = np.random.default_rng(0).normal(size=(2, 4))
    ctx, alpha = model.attention(p, h, mem, keys, mask)
    a = alpha.value
    np.testing.assert_allclose(a.sum(1), 1.0, rtol=0, atol=1e-12)
    assert np.all(a[mask == 0] == 0.0)
    # hand computation for row 0
    e = np.stack([s.value[0] for s in enc.states])[:3]
    scores = np.tanh(e @ p["att.W_enc"] + h[0] @ p["att.W_dec"]) @ p["att.v"][:, 0]
    w = np.exp(scores - scores.max())
    w /= w.sum()
    np.testing.assert_allclose(a[0, :3], w, rtol=0, atol=1e-12)
    np.testing.assert_allclose(ctx.value[0], w @ e, rtol=0, atol=1e-12)


# ------------------------------------------------------------------ beams


def _tiny_seq2seq(seed, n_target=5):
    model = Seq2SeqModel(n_state=6, n_target=n_target, hidden=8, go_id=0, eos_id=1)
    params = model.init(seed)
    rng = np.random.default_rng(seed + 1000)
    ids = rng.integers(0, 6, size=(1, 4))
    enc = model.encoder(params, ids)
    k = rng.random((1, 2))
    return model, params, enc, k


def _enumerate_best(model, params, enc, k, max_len):
    """Exhaustive search over every sequence that ends in <eos> or reaches max_len."""
    mem, keys = model.memory(params, enc)
    best = (-np.inf, None)

    def walk(prefix, h, logp):
        nonlocal best
        prev = prefix[-1] if prefix else model.go_id
        lp, h_new = model._log_probs(params, np.array([prev]), h, mem, keys, enc.mask, k)
        for tok in range(model.n_target):
            seq, score = prefix + [tok], logp + float(lp[0, tok])
            if tok == model.eos_id or len(seq) == max_len:
                if score > best[0]:
                    best = (score, seq)
            else:
                walk(seq, h_new, score)

    walk([], enc.final.value, 0.0)
    return best


def test_beam_one_equals_greedy():
    for seed in range(10):
        model, params, enc, k = _tiny_seq2seq(seed, n_target=7)
        g = model.greedy(params, enc, k, max_len=8)
        b = model.beam_search(params, enc, k, beam_size=1, max_len=8)
        assert g.tokens == b.tokens and g.logp == pytest.approx(b.logp, abs=1e-12)


def test_beam_ten_finds_enumerated_argmax():
    for seed in range(5):
        model, params, enc, k = _tiny_seq2seq(seed)
        score, seq = _enumerate_best(model, params, enc, k, 4)
        hyp = model.beam_search(params, enc, k, beam_size=10, max_len=4)
        assert hyp.tokens == seq and hyp.logp == pytest.approx(score, abs=1e-12)


def test_beam_scores_are_sums_of_log_probs():
    model, params, enc, k = _tiny_seq2seq(3)
    hyp = model.beam_search(params, enc, k, beam_size=3, max_len=5)
    mem, keys = model.memory(params, enc)
    h, prev, total = enc.final.value, model.go_id, 0.0
    for tok in hyp.tokens:
        lp, h = model._log_probs(params, np.array([prev]), h, mem, keys, enc.mask, k)
        total += lp[0, tok]
        prev = tok
    assert hyp.logp == pytest.approx(total, abs=1e-12)


# -------------------------------------------------------------- training


def test_seq2seq_loss_decreases_under_adam(corpus):
    recs, vocab = corpus
    model = Seq2SeqModel.from_vocab(vocab, hidden=8)
    params, state = model.init(0), AdamState()
    batch = model.make_batch(recs[:2], vocab)
    losses = []
    for _ in range(50):
        tape = ad.Tape()
        loss = model.loss(tape.watch(params), batch)
        losses.append(float(loss.value))
        adam_step(state, params, ad.backward(tape, loss), lr=0.01)
    assert losses[-1] < losses[0]


# ----------------------------------------------------------- parameter counts


def _gru_count(n_in, h):
    return 3 * ((n_in + h) * h + h)


def test_parameter_counts():
    n_state, n_acts, n_slots, h, width = 10, 6, 8, 5, 7
    n_in = 3 + n_acts + n_slots + 2
    enc = n_state * h + _gru_count(h, h)
    gcas = enc + sum(n_in * h + h + _gru_count(h, h) + h * o + o for o in (3, n_acts, n_slots))
    cas = enc + _gru_count(n_in, h) + sum(h * o + o for o in (3, n_acts, n_slots))
    n_target = 20
    s2s = enc + n_target * h + 2 * h * h + h + _gru_count(2 * h + 2, h) + 2 * h * n_target + n_target
    cls = (60 * width + width) + (width * width + width) + (width * 12 + 12)
    assert param_count(GcasModel(n_state, n_acts, n_slots, h).init(0)) == gcas
    assert param_count(CasModel(n_state, n_acts, n_slots, h).init(0)) == cas
    assert param_count(Seq2SeqModel(n_state, n_target, h).init(0)) == s2s
    assert param_count(ClassificationModel(60, 12, width).init(0)) == cls


def test_build_model_rejects_unknown(corpus):
    _, vocab = corpus
    with pytest.raises(ValueError):
        build_model("transformer", vocab)


def test_predict_accepts_states_and_records(corpus):
    recs, vocab = corpus
    for kind in ("classification", "seq2seq", "cas", "gcas"):
        model = build_model(kind, vocab, hidden=8, width=8)
        p = model.init(0)
        a = model.predict(p, recs[:2], vocab, max_len=10)
        b = model.predict(p, [r.state for r in recs[:2]], vocab, max_len=10)
        assert a == b and all(isinstance(f, ActFrame) for fs in a for f in fs)
