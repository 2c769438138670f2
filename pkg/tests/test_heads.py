import math

import numpy as np
import pytest

from biden.heads import BiRNN, Decoder, SelectionHead, SpanHead, best_span, greedy_decode, qa_spans, \
    select_response, summarize_loss
from biden.heads.rnn import GRUCell, LSTMCell, bi_rnn_baseline, run
from biden.heads.selection import utterance_max_pool
from biden.masking import key_padding_mask
from biden.numkit import Tape, Tensor, backward, parameter
from oracles import best_span_brute, numeric_grad, rel_err


def rng(seed=0):
    return np.random.default_rng(seed)


def pools(I, content=None):
    """(1, U, n) content membership for one context laid out by ``I``."""
    I = np.asarray(I)
    content = np.ones(len(I), dtype=bool) if content is None else np.asarray(content)
    U = I.max() + 1
    pool = np.stack([(I == u) & content for u in range(U)])[None]
    return pool, pool.any(axis=2)


# -- response selection ---------------------------------------------------------

def test_identical_candidates_split_evenly():
    head = SelectionHead(6, 3, rng(1))
    H = rng(2).normal(size=(1, 5, 6))
    pool, valid = pools([0, 0, 1, 1, 2])
    P, loss = select_response(Tensor(np.concatenate([H, H])), np.concatenate([pool, pool]),
                              np.concatenate([valid, valid]), 2, [1], head)
    np.testing.assert_allclose(P, [[0.5, 0.5]], atol=1e-12)
    assert abs(float(loss.data) - math.log(2)) < 1e-12


def test_zero_classifier_is_uniform():
    head = SelectionHead(6, 3, rng(3))
    head.w_d.data[...] = 0
    N = 5
    H = Tensor(rng(4).normal(size=(N, 4, 6)))
    pool, valid = pools([0, 1, 1, 2])
    P, loss = select_response(H, np.repeat(pool, N, 0), np.repeat(valid, N, 0), N, [3], head)
    np.testing.assert_allclose(P, np.full((1, N), 1 / N), atol=1e-12)
    assert abs(float(loss.data) - math.log(N)) < 1e-12


def _candidate_batch(r, N=4, d=6):
    lens = r.integers(3, 8, size=N)
    n = lens.max()
    H = r.normal(size=(N, n, d))
    pool = np.zeros((N, 3, n), dtype=bool)
    for b, k in enumerate(lens):
        I = np.minimum(np.arange(k) * 3 // k, 2)
        pool[b, :, :k] = I[None] == np.arange(3)[:, None]
    return H, pool, pool.any(axis=2), lens


@pytest.mark.parametrize("use_gru", [True, False])
def test_batched_scores_match_per_candidate_loop(use_gru):
    r = rng(5)
    head = SelectionHead(6, 3, r, use_gru=use_gru)
    H, pool, valid, lens = _candidate_batch(r)
    P, _ = select_response(Tensor(H), pool, valid, 4, [0], head)
    one = [float(head.scores(Tensor(H[b:b + 1, :k]), pool[b:b + 1, :, :k], valid[b:b + 1]).data[0])
           for b, k in enumerate(lens)]
    e = np.exp(np.array(one) - max(one))
    np.testing.assert_allclose(P[0], e / e.sum(), atol=1e-9)


def test_selection_permutation_invariance():
    r = rng(6)
    head = SelectionHead(6, 3, r)
    H, pool, valid, _ = _candidate_batch(r)
    P, _ = select_response(Tensor(H), pool, valid, 4, [0], head)
    perm = r.permutation(4)
    Pp, _ = select_response(Tensor(H[perm]), pool[perm], valid[perm], 4, [0], head)
    np.testing.assert_allclose(Pp[0], P[0][perm], atol=1e-12)
    assert perm[np.argmax(Pp[0])] == np.argmax(P[0])


def test_max_pool_ignores_pads_and_specials():
    H = rng(7).normal(size=(1, 5, 3))
    pool, valid = pools([0, 0, 0, 1, 1], content=[False, True, True, True, False])
    base = utterance_max_pool(Tensor(H), pool, valid).data
    np.testing.assert_array_equal(base[0, 0], H[0, 1:3].max(axis=0))
    np.testing.assert_array_equal(base[0, 1], H[0, 3])
    padded = np.concatenate([H, 100.0 + rng(8).normal(size=(1, 3, 3))], axis=1)
    ppool = np.concatenate([pool, np.zeros((1, 2, 3), dtype=bool)], axis=2)
    np.testing.assert_array_equal(utterance_max_pool(Tensor(padded), ppool, valid).data, base)


def test_selection_label_range():
    head = SelectionHead(4, 2, rng())
    pool, valid = pools([0, 1])
    with pytest.raises(ValueError):
        select_response(Tensor(np.zeros((2, 2, 4))), np.repeat(pool, 2, 0), np.repeat(valid, 2, 0), 2, [2], head)


def test_selection_distribution_and_loss_sign():
    r = rng(9)
    head = SelectionHead(6, 3, r)
    H, pool, valid, _ = _candidate_batch(r, N=8)
    P, loss = select_response(Tensor(H), pool, valid, 4, [1, 3], head)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
    assert float(loss.data) >= 0


# -- extractive QA --------------------------------------------------------------

def test_zero_classifiers_give_two_log_v():
    head = SpanHead(4, rng())
    head.w_s.data[...] = 0
    head.w_e.data[...] = 0
    allowed = np.array([[False, True, True, True, False, False]])
    _, _, loss = qa_spans(Tensor(rng(1).normal(size=(1, 6, 4))), allowed, [[1, 2]], head)
    assert abs(float(loss.data) - 2 * math.log(3)) < 1e-12


def test_point_mass_limit():
    head = SpanHead(3, rng())
    head.w_s.data[...] = [1, 0, 0]
    head.w_e.data[...] = [0, 1, 0]
    allowed = np.ones((1, 4), dtype=bool)
    losses = []
    for scale in (1.0, 10.0, 100.0):
        H = np.zeros((1, 4, 3))
        H[0, 1, 0] = scale  # gold start
        H[0, 2, 1] = scale  # gold end
        losses.append(float(qa_spans(Tensor(H), allowed, [[1, 2]], head)[2].data))
    assert losses[0] > losses[1] > losses[2] >= 0 and losses[2] < 1e-30


def test_span_distributions():
    head = SpanHead(4, rng(2))
    allowed = np.array([[False, True, True, False, True]])
    p_s, p_e, _ = qa_spans(Tensor(rng(3).normal(size=(1, 5, 4))), allowed, [[1, 4]], head)
    for p in (p_s, p_e):
        assert abs(p.sum() - 1) < 1e-9 and np.all(p[~allowed] == 0)


def test_span_outside_history_rejected():
    head = SpanHead(4, rng())
    allowed = np.array([[False, True, True]])
    with pytest.raises(ValueError):
        qa_spans(Tensor(np.zeros((1, 3, 4))), allowed, [[0, 1]], head)
    with pytest.raises(ValueError):
        qa_spans(Tensor(np.zeros((1, 3, 4))), allowed, [[2, 1]], head)


def test_best_span_matches_brute_force():
    r = rng(4)
    for case in range(300):
        n = int(r.integers(1, 30))
        allowed = r.random(n) < 0.7
        if not allowed.any():
            allowed[r.integers(n)] = True
        # small integers force ties so the tie-break rule is exercised too
        if case % 2:
            s, e = r.integers(-3, 3, n).astype(float), r.integers(-3, 3, n).astype(float)
        else:
            s, e = r.normal(size=n), r.normal(size=n)
        max_span = int(r.integers(0, 6))
        assert best_span(s, e, allowed, max_span) == best_span_brute(s, e, allowed, max_span)


def test_best_span_no_admissible_pair():
    with pytest.raises(ValueError):
        best_span(np.zeros(3), np.zeros(3), np.zeros(3, dtype=bool))


# -- summarization --------------------------------------------------------------

def decoder(V=7, d=8, seed=0, T=6):
    r = rng(seed)
    table = parameter(r.normal(size=(V, d)))
    return Decoder(table, T, d, 2, 2, 16, r)


def test_uniform_output_gives_log_v():
    dec = decoder()
    dec.token.data[...] = 0
    H = Tensor(rng(1).normal(size=(2, 4, 8)))
    tin = np.array([[1, 2, 3], [1, 4, 0]])
    tout = np.array([[2, 3, 5], [4, 5, 0]])
    tmask = np.array([[1, 1, 1], [1, 1, 0]], dtype=bool)
    loss = summarize_loss(H, key_padding_mask([4, 3], 4), tin, tout, tmask, dec)
    assert abs(float(loss.data) - math.log(7)) < 1e-12


def test_output_projection_is_tied():
    dec = decoder()
    assert dec.parameters()[0] is dec.token


def test_decoder_is_causal():
    dec = decoder(seed=2)
    H = Tensor(rng(3).normal(size=(1, 4, 8)))
    km = key_padding_mask([4], 4)
    a = np.array([[1, 2, 3, 4, 5]])
    b = a.copy()
    b[0, 3:] = [6, 0]
    la, lb = dec.logits(a, H, km).data, dec.logits(b, H, km).data
    np.testing.assert_array_equal(la[0, :3], lb[0, :3])
    assert not np.allclose(la[0, 3:], lb[0, 3:])


def test_memory_padding_is_ignored():
    dec = decoder(seed=4)
    H = rng(5).normal(size=(1, 3, 8))
    Hp = np.concatenate([H, rng(6).normal(size=(1, 2, 8))], axis=1)
    t = np.array([[1, 2]])
    np.testing.assert_allclose(dec.logits(t, Tensor(Hp), key_padding_mask([3], 5)).data,
                               dec.logits(t, Tensor(H), key_padding_mask([3], 3)).data, atol=1e-12)


def test_empty_target_rejected():
    dec = decoder()
    with pytest.raises(ValueError, match="empty"):
        summarize_loss(Tensor(np.zeros((1, 2, 8))), key_padding_mask([2], 2), np.zeros((1, 1), int),
                       np.zeros((1, 1), int), np.zeros((1, 1), bool), dec)


def test_greedy_decode_matches_step_by_step_argmax():
    dec = decoder(seed=7)
    H = Tensor(rng(8).normal(size=(1, 4, 8)))
    km = key_padding_mask([4], 4)
    seq = [1]
    for _ in range(4):
        seq.append(int(np.argmax(dec.logits(np.array([seq]), H, km).data[0, -1])))
    want = seq[1:]
    eos = 6 if 6 not in want else -1
    assert greedy_decode(H, km, dec, 1, eos, max_len=4) == [want]
    # stopping at the first end token
    stop = want[1]
    assert greedy_decode(H, km, dec, 1, stop, max_len=4) == [want[: want.index(stop)]]


def test_copy_task_overfits():
    from biden.harness.optim import AdamW
    r = rng(9)
    V, d, n = 12, 64, 5
    table = parameter(r.normal(0, d ** -0.5, size=(V, d)))
    dec = Decoder(table, 8, d, 2, 2, 128, r)
    # memory is the embedded source; the target is the source itself
    src = r.integers(3, V, size=(8, n))
    tin = np.concatenate([np.ones((8, 1), int), src], axis=1)
    tout = np.concatenate([src, np.full((8, 1), 2)], axis=1)
    tmask = np.ones_like(tin, dtype=bool)
    km = key_padding_mask([n] * 8, n)
    opt = AdamW(dec.parameters(), lr=3e-3, weight_decay=0.0)
    acc = 0.0
    for step in range(2000):
        with Tape() as tape:
            loss = summarize_loss(table[src], km, tin, tout, tmask, dec)
        opt.step(backward(tape, loss))
        if step % 20 == 19:
            pred = np.argmax(dec.logits(tin, Tensor(table.data[src]), km).data, axis=-1)
            acc = float((pred == tout).mean())
            if acc >= 0.99:
                break
    assert acc >= 0.99


# -- recurrent layers -----------------------------------------------------------

def test_gru_zero_recurrent_weights_use_input_projection_only():
    cell = GRUCell(3, 2, rng(10))
    cell.w_zr.data[...] = 0
    cell.w_n.data[...] = 0
    x = rng(11).normal(size=(1, 4, 3))
    out, _ = run(cell, Tensor(x))
    xp = x[0] @ cell.w_x.data + cell.b.data
    sig = lambda v: 1 / (1 + np.exp(-v))
    h = np.zeros(2)
    for t in range(4):
        z, n = sig(xp[t, :2]), np.tanh(xp[t, 4:])
        h = (1 - z) * n + z * h
        np.testing.assert_allclose(out.data[0, t], h, atol=1e-12)


def test_lstm_zero_recurrent_weights_first_step():
    cell = LSTMCell(3, 2, rng(12))
    cell.w_h.data[...] = 0
    x = rng(13).normal(size=(1, 1, 3))
    out, _ = run(cell, Tensor(x))
    p = x[0, 0] @ cell.w_x.data + cell.b.data
    sig = lambda v: 1 / (1 + np.exp(-v))
    want = sig(p[6:]) * np.tanh(sig(p[:2]) * np.tanh(p[4:6]))
    np.testing.assert_allclose(out.data[0, 0], want, atol=1e-12)


@pytest.mark.parametrize("kind", [GRUCell, LSTMCell])
def test_reverse_run_equals_forward_run_on_reversed_input(kind):
    cell = kind(3, 4, rng(14))
    x = rng(15).normal(size=(2, 5, 3))
    valid = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], dtype=bool)
    back, last_b = run(cell, Tensor(x), valid, reverse=True)
    for b, k in enumerate(valid.sum(axis=1)):
        fwd, last_f = run(cell, Tensor(x[b:b + 1, :k][:, ::-1].copy()))
        np.testing.assert_allclose(back.data[b, :k], fwd.data[0, ::-1], atol=1e-12)
        np.testing.assert_allclose(last_b.data[b], last_f.data[0], atol=1e-12)
        assert np.all(back.data[b, k:] == 0)


@pytest.mark.parametrize("kind", ["gru", "lstm"])
def test_birnn_gradcheck(kind):
    net = BiRNN(3, 2, rng(16), kind)
    x = Tensor(rng(17).normal(size=(2, 4, 3)), requires_grad=True)
    valid = np.array([[1, 1, 1, 1], [1, 1, 0, 0]], dtype=bool)
    w = rng(18).normal(size=(2, 4, 4))
    f = lambda: (bi_rnn_baseline(x, valid, net) * w).sum()
    with Tape() as tape:
        loss = f()
    grads = backward(tape, loss)
    for leaf in [x] + net.parameters():
        assert rel_err(grads[leaf], numeric_grad(lambda: float(f().data), leaf.data)) < 1e-6
