import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxnmt import numerics as nx
from ctxnmt.context import ConfigurationError
from ctxnmt.numerics import ContractError, DomainError, Tensor
from ctxnmt.seq2seq import (
    DecoderState,
    EncoderStates,
    ModelConfig,
    Seq2Seq,
    load_checkpoint,
    param_count,
    save_checkpoint,
)

SV, TV = 15, 11


def small(seed=0, **kw):
    base = dict(d=6, hidden=6, enc_layers=2, dec_layers=2, dropout=0.0)
    base.update(kw)
    cfg = ModelConfig(SV, TV, **base)
    return Seq2Seq.init(cfg, np.random.default_rng(seed), dtype=np.float64, scale=0.5)


def enc_from(vectors):
    states = [Tensor(np.asarray([v], dtype=float)) for v in vectors]
    return EncoderStates(states, nx.stack(states, axis=1), [])


ALL_CELLS = [
    (bi, ctx, integ)
    for bi, ctx, integ in itertools.product([False, True], ["none", "nbow", "bilstm", "holstm"], ["gate", "concat"])
    if not (ctx == "none" and integ == "concat")
]


# -------------------------------------------------------------- config


def test_config_rejects_odd_bi_hidden():
    with pytest.raises(ConfigurationError):
        ModelConfig(SV, TV, d=6, hidden=7, bidirectional=True)


def test_config_roundtrip_dict():
    cfg = ModelConfig(SV, TV, d=8, hidden=8, context="bilstm", integration="gate")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.context_hidden == 4 and cfg.context_dim == 8


@pytest.mark.parametrize("bi,ctx,integ", ALL_CELLS)
@pytest.mark.parametrize("layers", [2, 3])
def test_param_count_formula(bi, ctx, integ, layers):
    cfg = ModelConfig(SV, TV, d=8, hidden=10, enc_layers=layers, dec_layers=layers,
                      bidirectional=bi, context=ctx, integration=integ,
                      context_hidden=4 if ctx == "bilstm" else None)
    if ctx == "holstm" and integ == "gate":
        cfg = ModelConfig(SV, TV, d=8, hidden=10, enc_layers=layers, dec_layers=layers,
                          bidirectional=bi, context=ctx, integration=integ)
    model = Seq2Seq.init(cfg, np.random.default_rng(0))
    assert model.num_parameters() == param_count(cfg)


def test_full_scale_baseline_parameter_count():
    # 2-layer bi baseline at d = hidden = 500 over 50K+specials vocabularies
    cfg = ModelConfig(50005, 50005, d=500, hidden=500, bidirectional=True)
    emb = 2 * 50005 * 500
    enc = 2 * (4 * 250 * (500 + 250 + 1)) + 2 * (4 * 250 * (500 + 250 + 1))
    dec = 4 * 500 * (1000 + 500 + 1) + 4 * 500 * (500 + 500 + 1)
    out = 500 * 500 + 500 * 1000 + 50005 * 500
    assert param_count(cfg) == emb + enc + dec + out


# ------------------------------------------------------------- encoder


def test_encoder_bi_shapes():
    m = small(d=5, hidden=16, bidirectional=True)
    enc = m.encode([5, 6, 7, 8])
    assert len(enc.states) == 4 and all(s.shape == (1, 16) for s in enc.states)
    assert enc.stacked.shape == (1, 4, 16)


def test_encoder_zero_parameters():
    m = small(bidirectional=True).zero_()
    enc = m.encode([5, 6, 7])
    assert all(np.all(s.data == 0) for s in enc.states)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(5, SV - 1), min_size=2, max_size=6), st.data())
def test_uni_encoder_prefix_property(x, data):
    m = small(bidirectional=False, context="none")
    k = data.draw(st.integers(1, len(x) - 1))
    y = x[:k] + data.draw(st.lists(st.integers(5, SV - 1), min_size=len(x) - k, max_size=len(x) - k))
    ex, ey = m.encode(x), m.encode(y)
    for t in range(k):
        assert ex.states[t].data.tolist() == ey.states[t].data.tolist()


def test_encoder_empty():
    with pytest.raises(DomainError):
        small().encode(np.zeros((1, 0), dtype=int))


def test_dropout_only_in_training():
    m = small(dropout=0.5)
    a = m.encode([5, 6, 7], train=False, rng=np.random.default_rng(0))
    b = m.encode([5, 6, 7], train=False, rng=np.random.default_rng(1))
    c = m.encode([5, 6, 7], train=True, rng=np.random.default_rng(1))
    assert a.stacked.data.tolist() == b.stacked.data.tolist()
    assert c.stacked.data.tolist() != a.stacked.data.tolist()


# ----------------------------------------------------------- attention


def test_attention_zero_matrix_is_mean():
    m = small(hidden=3, d=3, bidirectional=False)
    m.params["att.W"].data[:] = 0.0
    h = [[1.0, 2.0, 3.0], [-1.0, 0.0, 5.0], [4.0, 4.0, -2.0]]
    a, alpha = m.attention(Tensor(np.array([[0.3, -0.2, 0.9]])), enc_from(h))
    np.testing.assert_allclose(alpha.data, [[1 / 3] * 3], atol=1e-15)
    np.testing.assert_allclose(a.data[0], np.mean(h, axis=0), atol=1e-14)


def test_attention_single_position():
    m = small(hidden=3, d=3, bidirectional=False)
    a, alpha = m.attention(Tensor(np.array([[0.3, -0.2, 0.9]])), enc_from([[1.0, 2.0, 3.0]]))
    assert alpha.data.tolist() == [[1.0]]
    assert a.data.tolist() == [[1.0, 2.0, 3.0]]


def test_attention_hand_case():
    m = small(hidden=2, d=2)
    m.params["att.W"].data[:] = np.eye(2)
    # scores g . h_k = [1, 2]
    h = [[1.0, 0.0], [0.0, 2.0]]
    a, alpha = m.attention(Tensor(np.array([[1.0, 1.0]])), enc_from(h))
    np.testing.assert_allclose(alpha.data[0], [0.2689414213699951, 0.7310585786300049], atol=1e-15)
    np.testing.assert_allclose(a.data[0], [0.2689414213699951, 2 * 0.7310585786300049], atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_attention_convex_combination(n, seed):
    rng = np.random.default_rng(seed)
    m = small(hidden=4, d=4)
    m.params["att.W"].data[:] = rng.normal(size=(4, 4)) * 3
    h = rng.normal(size=(n, 4))
    a, alpha = m.attention(Tensor(rng.normal(size=(1, 4))), enc_from(h))
    assert abs(alpha.data.sum() - 1) < 1e-9
    assert np.max(np.abs(a.data)) <= np.max(np.abs(h)) + 1e-12


def test_attention_permutation():
    rng = np.random.default_rng(0)
    m = small(hidden=4, d=4)
    h = rng.normal(size=(5, 4))
    g = Tensor(rng.normal(size=(1, 4)))
    perm = rng.permutation(5)
    a1, al1 = m.attention(g, enc_from(h))
    a2, al2 = m.attention(g, enc_from(h[perm]))
    np.testing.assert_allclose(al2.data[0], al1.data[0][perm], atol=1e-15)
    m.params["att.W"].data[:] = 0.0
    a1, _ = m.attention(g, enc_from(h))
    a2, _ = m.attention(g, enc_from(h[perm]))
    np.testing.assert_allclose(a1.data, a2.data, atol=1e-14)


def test_attention_reads_previous_decoder_state():
    m = small()
    enc = m.encode([5, 6, 7])
    state = m.initial_state(enc)
    expected, _ = m.attention(state.top, enc)
    _, g_hat = m.decoder_step(state, [2], enc)
    new = DecoderState(state.layers, state.feed)
    # g_hat = tanh(W1 [g_t ; a_t]) with a_t built from the state passed in
    manual_layers = m.decoder_step(new, [2], enc)[0].layers
    w1 = m.params["out.W1"].data
    ref = np.tanh(np.concatenate([manual_layers[-1][0].data, expected.data], axis=1) @ w1.T)
    np.testing.assert_allclose(g_hat.data, ref, atol=1e-14)


# -------------------------------------------------------------- decoder


def test_decode_step_distribution():
    m = small()
    enc = m.encode([5, 6])
    state = m.initial_state(enc)
    for tok in (2, 7, 9):
        state, p, g_hat = m.decode_step(state, [tok], enc)
        assert p.shape == (1, TV) and abs(p.sum() - 1) < 1e-9 and np.all(p >= 0)
        assert g_hat.shape == (1, m.cfg.hidden)


def test_zero_parameters_give_uniform_distribution():
    m = small().zero_()
    enc = m.encode([5, 6])
    _, p, _ = m.decode_step(m.initial_state(enc), [2], enc)
    np.testing.assert_allclose(p, np.full((1, TV), 1 / TV), atol=1e-15)


def test_input_feeding_initial_zero():
    m = small()
    state = m.initial_state(m.encode([5, 6]))
    assert np.all(state.feed.data == 0)


def test_decode_step_rejects_bad_token():
    m = small()
    enc = m.encode([5])
    with pytest.raises(ContractError):
        m.decode_step(m.initial_state(enc), [TV], enc)


# ----------------------------------------------------------------- loss


def test_zero_parameter_loss():
    m = small().zero_()
    tgt = np.array([2, 5, 6, 7, 3])
    loss, n = m.forward_loss([5, 6, 7], tgt)
    assert n == 4
    assert float(loss.data) == pytest.approx(4 * math.log(TV), abs=1e-12)


def test_three_token_target_three_steps():
    loss, n = small().forward_loss([5, 6], [2, 7, 3])
    assert n == 2
    _, n = small().forward_loss([5, 6], [2, 7, 8, 3])
    assert n == 3


def test_loss_matches_stepwise_decoding():
    m = small(context="bilstm", integration="concat")
    src, tgt = [5, 6, 7], [2, 8, 9, 3]
    enc = m.encode(src)
    state = m.initial_state(enc)
    total = 0.0
    for prev, nxt in zip(tgt[:-1], tgt[1:]):
        state, p, _ = m.decode_step(state, [prev], enc)
        total -= math.log(p[0, nxt])
    assert float(m.forward_loss(src, tgt)[0].data) == pytest.approx(total, abs=1e-10)


def test_loss_deterministic_without_dropout():
    m = small(dropout=0.3)
    a = float(m.forward_loss([5, 6], [2, 7, 3])[0].data)
    b = float(m.forward_loss([5, 6], [2, 7, 3])[0].data)
    assert a == b


def test_loss_decreases_under_sgd():
    from ctxnmt.training import sgd_step

    m = Seq2Seq.init(ModelConfig(SV, TV, d=8, hidden=8, dropout=0.0), np.random.default_rng(0))
    losses = []
    for _ in range(50):
        with nx.Graph() as g:
            loss, _ = m.forward_loss([5, 6, 7], [2, 8, 9, 10, 3])
        nx.backward(g, loss)
        sgd_step(m.params, 0.1)
        losses.append(float(loss.data))
    windows = [np.mean(losses[k : k + 10]) for k in range(0, 50, 10)]
    assert all(b < a for a, b in zip(windows, windows[1:]))


def test_forward_loss_gradients():
    cfg = ModelConfig(8, 7, d=4, hidden=4, context="bilstm", integration="gate", dropout=0.0)
    m = Seq2Seq.init(cfg, np.random.default_rng(1), dtype=np.float64)
    err = nx.grad_check(lambda: m.forward_loss([5, 6, 7], [2, 5, 6, 3])[0], m.params)
    assert err < 1e-4


def test_batched_loss_is_sum_of_single_losses():
    m = small(context="holstm", integration="concat")
    src = np.array([[5, 6, 7], [8, 9, 10]])
    tgt = np.array([[2, 5, 6, 3], [2, 7, 8, 3]])
    both = float(m.forward_loss(src, tgt)[0].data)
    single = sum(float(m.forward_loss(s, t)[0].data) for s, t in zip(src, tgt))
    assert both == pytest.approx(single, abs=1e-10)


# ---------------------------------------------------------- checkpoints


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_checkpoint_round_trip_bit_exact(tmp_path, dtype):
    cfg = ModelConfig(SV, TV, d=6, hidden=6, context="holstm", integration="concat")
    m = Seq2Seq.init(cfg, np.random.default_rng(3), dtype=dtype)
    meta = {"src_vocab": ["<pad>", "a"], "note": "x"}
    save_checkpoint(tmp_path / "m.ckpt", m, meta)
    m2, meta2 = load_checkpoint(tmp_path / "m.ckpt")
    assert m2.cfg == cfg and meta2 == meta
    assert sorted(m2.params) == sorted(m.params)
    for k, t in m.params.items():
        assert m2.params[k].data.dtype == t.data.dtype
        assert m2.params[k].data.tobytes() == t.data.tobytes()
    save_checkpoint(tmp_path / "again.ckpt", m2, meta2)
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "again.ckpt").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.ckpt")
