import math

import numpy as np
import pytest

from ctxnmt import numerics as nx
from ctxnmt.context import ConfigurationError
from ctxnmt.data import IndexedPair
from ctxnmt.numerics import DomainError, Tensor
from ctxnmt.seq2seq import ModelConfig, Seq2Seq
from ctxnmt.training import (
    NonFiniteGradient,
    TrainConfig,
    converged,
    filter_length,
    global_norm,
    lr_schedule,
    make_batches,
    perplexity,
    sgd_step,
    train,
)


def pair(n_src, n_tgt, tok=5):
    return IndexedPair(np.full(n_src, tok), np.array([2] + [tok] * n_tgt + [3]))


def toy_corpus(n=12, seed=0, vocab=10):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        k = int(rng.integers(2, 4))
        src = rng.integers(5, vocab, size=k)
        out.append(IndexedPair(src, np.concatenate([[2], src[::-1], [3]])))
    return out


def tiny_model(seed=0, **kw):
    cfg = ModelConfig(10, 10, d=6, hidden=6, dropout=0.3, **kw)
    return Seq2Seq.init(cfg, np.random.default_rng(seed))


# ----------------------------------------------------------------- config


def test_train_config_defaults():
    cfg = TrainConfig()
    assert (cfg.lr, cfg.clip_norm, cfg.batch_size, cfg.max_len, cfg.dropout, cfg.min_delta) == (
        1.0, 5.0, 256, 50, 0.3, 0.01)


@pytest.mark.parametrize("bad", [dict(lr=0), dict(clip_norm=-1), dict(batch_size=0), dict(dropout=1.0),
                                 dict(schedule="cosine")])
def test_train_config_validation(bad):
    with pytest.raises(ConfigurationError):
        TrainConfig(**bad)


# ---------------------------------------------------------------- batching


def test_batches_group_by_exact_lengths():
    corpus = [pair(3, 4)] * 5 + [pair(3, 5)] * 2
    batches = make_batches(corpus, TrainConfig())
    assert sorted(len(s) for s, _ in batches) == [2, 5]
    for s, t in batches:
        assert len({len(r) for r in s}) == 1 and len({len(r) for r in t}) == 1


def test_long_source_is_filtered():
    corpus = [pair(51, 3), pair(50, 50)]
    assert filter_length(corpus, 50) == [corpus[1]]
    assert filter_length([pair(3, 51)], 50) == []


def test_batch_splitting():
    batches = make_batches([pair(4, 4)] * 300, TrainConfig())
    assert [len(s) for s, _ in batches] == [256, 44]


def test_all_filtered_is_configuration_error():
    with pytest.raises(ConfigurationError):
        make_batches([pair(60, 3)], TrainConfig())


def test_batch_order_shuffled_within_batch_stable():
    corpus = [IndexedPair(np.array([5 + k % 5] * (1 + k % 4)), np.array([2, 5 + k, 3])) for k in range(40)]
    cfg = TrainConfig(batch_size=3)
    plain = make_batches(corpus, cfg)
    shuffled = make_batches(corpus, cfg, np.random.default_rng(7))
    key = lambda b: b[0].tobytes() + b[1].tobytes()  # noqa: E731
    assert sorted(map(key, plain)) == sorted(map(key, shuffled))
    assert [key(b) for b in plain] != [key(b) for b in shuffled]
    again = make_batches(corpus, cfg, np.random.default_rng(7))
    assert [key(b) for b in again] == [key(b) for b in shuffled]
    for s, t in plain:
        # members keep corpus order: their target ids increase
        assert list(t[:, 1]) == sorted(t[:, 1])


def test_no_batch_exceeds_length_limit():
    corpus = [pair(k, 60 - k) for k in range(1, 60)]
    for s, t in make_batches(corpus, TrainConfig()):
        assert s.shape[1] <= 50 and t.shape[1] - 2 <= 50


# --------------------------------------------------------------------- SGD


def leaf(values, grad):
    t = Tensor(np.array(values, dtype=float), requires_grad=True)
    t.grad = np.array(grad, dtype=float)
    return t


def test_sgd_scalar():
    p = leaf([1.0], [0.2])
    sgd_step({"p": p}, lr=1.0)
    assert p.data.tolist() == [0.8]


def test_sgd_clips_to_half():
    a, b = leaf([0.0, 0.0], [6.0, 0.0]), leaf([0.0], [8.0])
    norm = sgd_step({"a": a, "b": b}, lr=1.0, clip_norm=5.0)
    assert norm == 10.0
    assert a.data.tolist() == [-3.0, 0.0] and b.data.tolist() == [-4.0]


def test_sgd_below_threshold_unchanged():
    a = leaf([1.0, 1.0], [1.8, 2.4])  # norm 3
    sgd_step({"a": a}, lr=1.0, clip_norm=5.0)
    np.testing.assert_allclose(a.data, [1 - 1.8, 1 - 2.4], atol=0)


def test_sgd_clears_gradients():
    a = leaf([1.0], [1.0])
    sgd_step({"a": a}, lr=0.1)
    assert a.grad is None


def test_sgd_rejects_non_finite():
    with pytest.raises(NonFiniteGradient, match="bad"):
        sgd_step({"ok": leaf([1.0], [1.0]), "bad": leaf([1.0], [np.nan])}, lr=1.0)


def test_clipped_norm_never_exceeds_threshold():
    rng = np.random.default_rng(0)
    for _ in range(100):
        grads = {f"t{k}": leaf(np.zeros(3), rng.normal(size=3) * rng.uniform(0, 20)) for k in range(4)}
        before = {k: t.grad.copy() for k, t in grads.items()}
        norm = global_norm(grads)
        sgd_step(grads, lr=1.0)
        applied = math.sqrt(sum(float(np.sum(t.data**2)) for t in grads.values()))
        assert applied <= 5.0 + 1e-9
        if norm <= 5.0:
            for k, t in grads.items():
                np.testing.assert_allclose(-t.data, before[k], atol=0)


# ---------------------------------------------------------------- schedule


def run_schedule(series, lr=1.0):
    rates = []
    for k in range(1, len(series) + 1):
        lr = lr_schedule(series[:k], lr)
        rates.append(lr)
    return rates


def test_schedule_monotone_improvement():
    assert run_schedule([10, 9, 8]) == [1.0, 1.0, 1.0]


def test_schedule_sticky_halving():
    assert run_schedule([10, 9, 9.5]) == [1.0, 1.0, 0.5]
    assert run_schedule([10, 9, 9.5, 3.0]) == [1.0, 1.0, 0.5, 0.25]
    assert run_schedule([10, 9, 9.5, 3.0, 2.0, 1.0]) == [1.0, 1.0, 0.5, 0.25, 0.125, 0.0625]


def test_schedule_single_epoch():
    assert run_schedule([10]) == [1.0]


def test_convergence_rule():
    assert converged([5.00, 4.995], 0.01)
    assert not converged([5.00, 4.98], 0.01)
    assert not converged([5.00], 0.01)
    assert converged([5.00, 5.004], 0.01)


def test_training_stops_on_small_delta(monkeypatch):
    import ctxnmt.training as tr

    series = iter([5.00, 4.995, 4.0, 3.0])
    monkeypatch.setattr(tr, "perplexity", lambda model, corpus, batch_size=256: next(series))
    _, tlog = train(tiny_model(), toy_corpus(), toy_corpus(seed=1), TrainConfig(max_epochs=10))
    assert [r.dev_ppl for r in tlog.epochs] == [5.00, 4.995]
    assert tlog.stopped == "converged"


def test_training_halves_every_epoch_after_overfit(monkeypatch):
    import ctxnmt.training as tr

    series = iter([10.0, 9.0, 9.5, 8.0, 7.0])
    monkeypatch.setattr(tr, "perplexity", lambda model, corpus, batch_size=256: next(series))
    _, tlog = train(tiny_model(), toy_corpus(), toy_corpus(seed=1), TrainConfig(max_epochs=5))
    assert [r.lr for r in tlog.epochs] == [1.0, 1.0, 1.0, 0.5, 0.25]
    assert tlog.halvings == [3, 4, 5]
    rates = [r.lr for r in tlog.epochs]
    assert all(b <= a for a, b in zip(rates, rates[1:]))


# ------------------------------------------------------------- perplexity


def test_zero_model_perplexity_is_vocab_size():
    model = tiny_model().zero_()
    assert perplexity(model, toy_corpus()) == pytest.approx(10.0, abs=1e-10)


def test_perplexity_order_invariant():
    model, corpus = tiny_model(), toy_corpus(20)
    assert perplexity(model, corpus) == pytest.approx(perplexity(model, corpus[::-1]), abs=1e-12)


def test_perplexity_empty():
    with pytest.raises(DomainError):
        perplexity(tiny_model(), [])


# ---------------------------------------------------------------- training


def test_joint_training_updates_context_network():
    model = tiny_model(context="bilstm", integration="concat")
    before = {k: t.data.copy() for k, t in model.params.items() if k.startswith("ctx.")}
    src, tgt = np.array([[5, 6, 7]]), np.array([[2, 7, 6, 5, 3]])
    with nx.Graph() as g:
        loss, n = model.forward_loss(src, tgt)
        mean = nx.scale(loss, 1.0 / n)
    nx.backward(g, mean)
    sgd_step(model.params, 1.0)
    assert all(np.any(model.params[k].data != v) for k, v in before.items())


def test_training_is_deterministic():
    runs = []
    for _ in range(2):
        model = tiny_model(seed=3, context="holstm", integration="gate")
        model, tlog = train(model, toy_corpus(), toy_corpus(seed=1), TrainConfig(max_epochs=3, batch_size=4))
        runs.append((tlog, {k: t.data.tobytes() for k, t in model.params.items()}))
    assert runs[0][0] == runs[1][0]
    assert runs[0][0].to_tsv() == runs[1][0].to_tsv()
    assert runs[0][1] == runs[1][1]


def test_train_log_tsv_layout():
    _, tlog = train(tiny_model(), toy_corpus(), toy_corpus(seed=1), TrainConfig(max_epochs=2))
    lines = tlog.to_tsv().splitlines()
    assert lines[0].split("\t") == ["epoch", "train_loss", "dev_ppl", "lr", "seconds"]
    assert len(lines) == 1 + len(tlog.epochs)
    assert lines[1].split("\t")[-1] == "-"
    assert tlog.to_tsv(timing=True).splitlines()[1].split("\t")[-1] != "-"


def test_training_lowers_loss():
    corpus = toy_corpus(16)
    model = tiny_model(seed=1)
    start = perplexity(model, corpus)
    model, _ = train(model, corpus, corpus, TrainConfig(max_epochs=15, batch_size=4, dropout=0.0,
                                                        schedule="constant"))
    assert perplexity(model, corpus) < start
