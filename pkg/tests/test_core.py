import numpy as np
import pytest

from biden.batching import collate, encode_samples
from biden.core import (
    DecouplingLayers,
    MoEFusion,
    decouple,
    heuristic_match,
    init_copy_last_encoder_layer,
    mean_fuse,
    moe_fuse,
)
from biden.data import Vocab, synth_gen
from biden.encoder import Encoder
from biden.harness.optim import AdamW
from biden.masking import CHANNELS, build_decoupling_masks, stack_masks, zero_masks
from biden.model import BidenModel, ModelConfig
from biden.numkit import NEG_INF, Tape, Tensor, backward


def rng(seed=0):
    return np.random.default_rng(seed)


def random_I(r, max_utts=5, max_len=4):
    lengths = r.integers(1, max_len + 1, size=r.integers(1, max_utts + 1))
    return np.repeat(np.arange(len(lengths)), lengths)


def test_single_utterance_channels():
    layers = DecouplingLayers(8, 2, 16, rng())
    H = Tensor(rng(1).normal(size=(4, 8)))
    m = build_decoupling_masks([0, 0, 0, 0])
    f, c, p = decouple(H, m, layers)
    assert np.all(f.data == 0) and np.all(p.data == 0)
    assert np.array_equal(c.data, layers.c2c(H, np.zeros((4, 4))).data)


def test_zero_masks_with_shared_weights_gives_identical_channels():
    layers = DecouplingLayers(8, 2, 16, rng(2))
    state = layers.c2c.state_dict()
    layers.f2c.load_state_dict(state)
    layers.p2c.load_state_dict(state)
    H = Tensor(rng(3).normal(size=(5, 8)))
    f, c, p = decouple(H, zero_masks(5), layers)
    assert np.array_equal(f.data, c.data) and np.array_equal(p.data, c.data)


def _changed_rows(a, b):
    return set(np.nonzero(np.abs(a - b).max(axis=-1) > 0)[0].tolist())


def test_perturbation_reaches_only_permitted_rows():
    r = rng(4)
    layers = DecouplingLayers(8, 2, 16, r)
    rule = {"f2c": np.greater, "c2c": np.equal, "p2c": np.less}  # I(j) vs I(i)
    for _ in range(30):
        I = random_I(r)
        n = len(I)
        m = build_decoupling_masks(I)
        H = r.normal(size=(n, 8))
        base = decouple(Tensor(H), m, layers)
        j = int(r.integers(n))
        H2 = H.copy()
        H2[j] += r.normal(size=8)
        moved = decouple(Tensor(H2), m, layers)
        for name, a, b in zip(CHANNELS, base, moved):
            allowed = {i for i in range(n) if rule[name](I[j], I[i]) and getattr(m, f"valid_{name}")[i]}
            # a token always reaches its own row through the residual path
            if getattr(m, f"valid_{name}")[j]:
                allowed.add(j)
            assert _changed_rows(a.data, b.data) <= allowed


def test_three_utterance_p2c_ignores_future():
    layers = DecouplingLayers(8, 2, 16, rng(5))
    I = [0, 1, 1, 2, 2]
    m = build_decoupling_masks(I)
    H = rng(6).normal(size=(5, 8))
    _, _, p = decouple(Tensor(H), m, layers)
    H2 = H.copy()
    H2[4] += 1.0  # last utterance
    _, _, p2 = decouple(Tensor(H2), m, layers)
    assert np.array_equal(p.data[:4], p2.data[:4])
    H3 = H.copy()
    H3[0] += 1.0
    _, _, p3 = decouple(Tensor(H3), m, layers)
    assert not np.allclose(p.data[3:], p3.data[3:])


def test_heuristic_match():
    X = rng(7).normal(size=(3, 2))
    out = heuristic_match(Tensor(X), Tensor(X)).data
    np.testing.assert_array_equal(out, np.concatenate([X, X, 0 * X, X * X], axis=1))
    out = heuristic_match(Tensor(X), Tensor(np.zeros_like(X))).data
    np.testing.assert_array_equal(out, np.concatenate([X, 0 * X, X, 0 * X], axis=1))
    Y = rng(8).normal(size=(3, 2))
    out = heuristic_match(Tensor(X), Tensor(Y)).data
    for i in range(3):
        for c in range(2):
            assert out[i].tolist()[c::2] == [X[i, c], Y[i, c], X[i, c] - Y[i, c], X[i, c] * Y[i, c]]
    with pytest.raises(ValueError):
        heuristic_match(Tensor(X), Tensor(np.zeros((3, 3))))


def test_moe_identical_experts():
    moe = MoEFusion(4, rng(9))
    H, Hk = Tensor(rng(10).normal(size=(3, 4))), Tensor(rng(11).normal(size=(3, 4)))
    out = moe_fuse(H, Hk, Hk, Hk, np.zeros((3, 3)), moe).data
    np.testing.assert_allclose(out, Hk.data, atol=1e-12)


def test_moe_only_c2c_valid():
    moe = MoEFusion(4, rng(12))
    r = rng(13)
    H, f, c, p = (Tensor(r.normal(size=(2, 4))) for _ in range(4))
    m_g = np.array([[NEG_INF, 0.0, NEG_INF]] * 2)
    out, gates = moe_fuse(H, f, c, p, m_g, moe, return_gates=True)
    assert np.all(gates.data[..., 1] == 1.0) and np.all(gates.data[..., [0, 2]] == 0.0)
    assert np.array_equal(out.data, c.data)


def _fused(r, layers, moe, I):
    n = len(I)
    m = build_decoupling_masks(I)
    H = Tensor(r.normal(size=(1, n, 8)))
    chans = decouple(H, m, layers)
    bm = stack_masks([m], n)
    out, gates = moe_fuse(H, *chans, bm.fusion, moe, return_gates=True)
    return m, np.stack([c.data[0] for c in chans], axis=-1), out.data[0], gates.data[0]


def test_gates_normalised_and_fusion_convex():
    r = rng(14)
    layers, moe = DecouplingLayers(8, 2, 16, r), MoEFusion(8, r)
    for _ in range(40):
        m, experts, H_e, G = _fused(r, layers, moe, random_I(r))
        valid = m.validity()  # (n, 3)
        np.testing.assert_allclose(G.sum(axis=-1), 1.0, atol=1e-9)
        assert np.all(G[~np.broadcast_to(valid[:, None, :], G.shape)] == 0)
        lo = np.where(valid[:, None, :], experts, np.inf).min(axis=-1)
        hi = np.where(valid[:, None, :], experts, -np.inf).max(axis=-1)
        assert np.all(lo - 1e-12 <= H_e) and np.all(H_e <= hi + 1e-12)


def test_mean_fuse_averages_valid_channels():
    a, b, c = (Tensor(np.full((2, 3), v)) for v in (1.0, 2.0, 6.0))
    valid = np.array([[1, 1, 1], [0, 1, 0]])
    out = mean_fuse(a, b, c, valid).data
    assert out[0].tolist() == [3.0] * 3 and out[1].tolist() == [2.0] * 3


def test_copy_init_bit_equal_and_shape_checked():
    enc = Encoder(10, 8, 8, 2, 2, 16, rng(15))
    layers = init_copy_last_encoder_layer(enc, DecouplingLayers(8, 2, 16, rng(16)))
    src = enc.layers[-1].state_dict()
    for name in CHANNELS:
        got = layers.layer(name).state_dict()
        assert all(np.array_equal(got[k], src[k]) for k in src)
    with pytest.raises(ValueError):
        init_copy_last_encoder_layer(enc, DecouplingLayers(8, 2, 32, rng(17)))


def test_random_init_layers_differ():
    layers = DecouplingLayers(8, 2, 16, rng(18))
    assert not np.array_equal(layers.f2c.attn.w_q.data, layers.c2c.attn.w_q.data)
    other = DecouplingLayers(8, 2, 16, rng(19))
    assert not np.array_equal(layers.f2c.attn.w_q.data, other.f2c.attn.w_q.data)


def _selection_batch(n=6):
    samples = synth_gen("a", n, 3)
    vocab = Vocab.build(samples)
    return vocab, collate(encode_samples(samples, vocab, 64), vocab)


def test_copy_init_diverges_after_one_step():
    vocab, batch = _selection_batch()
    cfg = ModelConfig(len(vocab), d=16, n_heads=2, n_layers=1, init_mode="copy_last_encoder_layer")
    model = BidenModel(cfg, 0)
    bidm = model.bidm
    assert np.array_equal(bidm.f2c.attn.w_q.data, bidm.c2c.attn.w_q.data)
    with Tape() as tape:
        loss = model.loss(batch)
    AdamW(model.parameters(), lr=1e-3).step(backward(tape, loss))
    f, c, p = (bidm.layer(k).state_dict() for k in CHANNELS)
    assert any(not np.array_equal(f[k], c[k]) for k in f)
    assert any(not np.array_equal(p[k], c[k]) for k in p)


def test_zero_mask_ablation_with_tied_channels_matches_each_channel():
    vocab, _ = _selection_batch()
    samples = synth_gen("a", 4, 5)
    batch = collate(encode_samples(samples, vocab, 64), vocab, zero_mask=True)
    cfg = ModelConfig(len(vocab), d=16, n_heads=2, n_layers=1, zero_masks=True,
                      init_mode="copy_last_encoder_layer")
    H_e, rec = BidenModel(cfg, 1).represent(batch, record=True)
    for name in ("H_f2c", "H_c2c", "H_p2c"):
        np.testing.assert_allclose(H_e.data, rec[name].data, atol=1e-9)


def test_single_utterance_fused_equals_c2c():
    layers, moe = DecouplingLayers(8, 2, 16, rng(20)), MoEFusion(8, rng(21))
    _, experts, H_e, _ = _fused(rng(22), layers, moe, [0, 0, 0])
    assert np.array_equal(H_e, experts[..., 1])

