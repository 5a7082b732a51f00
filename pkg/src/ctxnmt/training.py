"""SGD training loop: length-grouped batches, norm clipping, halving schedule."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .context import ConfigurationError
from .data import IndexedPair
from .numerics import DomainError, Tensor
from .seq2seq import Seq2Seq

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1.0
    clip_norm: float = 5.0
    batch_size: int = 256
    max_len: int = 50
    dropout: float = 0.3
    min_delta: float = 0.01
    max_epochs: int = 20
    seed: int = 0
    schedule: str = "halve"  # or "constant"

    def __post_init__(self):
        for name in ("lr", "clip_norm", "batch_size", "max_len", "min_delta", "max_epochs"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        if self.schedule not in ("halve", "constant"):
            raise ConfigurationError(f"unknown learning-rate schedule {self.schedule!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_ppl: float
    lr: float
    seconds: float = field(default=0.0, compare=False)


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    halvings: list[int] = field(default_factory=list)  # epochs after which lr was halved
    stopped: str = ""

    def to_tsv(self, timing: bool = False) -> str:
        lines = ["epoch\ttrain_loss\tdev_ppl\tlr\tseconds"]
        for r in self.epochs:
            secs = f"{r.seconds:.3f}" if timing else "-"
            lines.append(f"{r.epoch}\t{r.train_loss:.6f}\t{r.dev_ppl:.6f}\t{r.lr:.6g}\t{secs}")
        return "\n".join(lines) + "\n"


class NonFiniteGradient(FloatingPointError):
    pass


class TrainingDiverged(RuntimeError):
    """Dev perplexity became NaN/inf. ``last_good`` holds the previous epoch's model."""

    def __init__(self, msg: str, last_good: Seq2Seq | None, log: TrainLog):
        super().__init__(msg)
        self.last_good = last_good
        self.log = log


# ----------------------------------------------------------------- batching


def filter_length(corpus: Sequence[IndexedPair], max_len: int = 50) -> list[IndexedPair]:
    """Drop pairs whose source or target (excluding bos/eos) exceeds ``max_len`` tokens."""
    return [p for p in corpus if len(p.src) <= max_len and len(p.tgt) - 2 <= max_len]


def make_batches(corpus: Sequence[IndexedPair], cfg: TrainConfig,
                 rng: np.random.Generator | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Group pairs by exact (source, target) length into batches of at most
    ``cfg.batch_size``; shuffle batch order with ``rng`` if given.

    Groups appear in order of first occurrence and keep corpus order inside,
    so the unshuffled result is deterministic.
    """
    kept = filter_length(corpus, cfg.max_len)
    if not kept:
        raise ConfigurationError("no sentence pairs left after length filtering")
    groups: dict[tuple[int, int], list[IndexedPair]] = defaultdict(list)
    for p in kept:
        groups[(len(p.src), len(p.tgt))].append(p)
    batches = []
    for members in groups.values():
        for lo in range(0, len(members), cfg.batch_size):
            chunk = members[lo : lo + cfg.batch_size]
            batches.append((np.stack([p.src for p in chunk]), np.stack([p.tgt for p in chunk])))
    if rng is not None:
        order = rng.permutation(len(batches))
        batches = [batches[i] for i in order]
    return batches


# ---------------------------------------------------------------- optimizer


def global_norm(params: dict[str, Tensor]) -> float:
    return math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params.values() if p.grad is not None))


def sgd_step(params: dict[str, Tensor], lr: float, clip_norm: float = 5.0) -> float:
    """Rescale gradients to at most ``clip_norm`` global L2 norm, then step.

    Returns the norm before clipping. Gradients are cleared afterwards.
    """
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    norm = global_norm(params)
    factor = clip_norm / norm if norm > clip_norm else 1.0
    for p in params.values():
        if p.grad is None:
            continue
        p.data -= (lr * factor) * p.grad
        p.grad = None
    return norm


def lr_schedule(history: Sequence[float], lr: float) -> float:
    """Learning rate for the next epoch given dev perplexities so far.

    Once any epoch has been worse than its predecessor, every call halves.
    """
    overfit = any(b > a for a, b in zip(history, history[1:]))
    return lr / 2.0 if overfit else lr


def converged(history: Sequence[float], min_delta: float = 0.01) -> bool:
    return len(history) >= 2 and abs(history[-1] - history[-2]) < min_delta


# ---------------------------------------------------------------- evaluation


def corpus_loss(model: Seq2Seq, corpus: Sequence[IndexedPair], batch_size: int = 256) -> tuple[float, int]:
    """Summed cross-entropy and token count, dropout off, no tape."""
    if not corpus:
        raise DomainError("empty corpus")
    cfg = TrainConfig(batch_size=batch_size, max_len=10**9)
    total, count = 0.0, 0
    for src, tgt in make_batches(corpus, cfg):
        loss, n = model.forward_loss(src, tgt, train=False)
        total += float(loss.data)
        count += n
    return total, count


def perplexity(model: Seq2Seq, corpus: Sequence[IndexedPair], batch_size: int = 256) -> float:
    total, count = corpus_loss(model, corpus, batch_size)
    return math.exp(total / count)


# ------------------------------------------------------------------- driver


def train_batch(model: Seq2Seq, src, tgt, lr: float, cfg: TrainConfig, rng) -> tuple[float, int]:
    with nx.Graph() as g:
        loss, n = model.forward_loss(src, tgt, train=True, rng=rng)
        mean = nx.scale(loss, 1.0 / n)
    nx.backward(g, mean)
    sgd_step(model.params, lr, cfg.clip_norm)
    return float(loss.data), n


def train(
    model: Seq2Seq,
    corpus: Sequence[IndexedPair],
    dev: Sequence[IndexedPair],
    cfg: TrainConfig,
    on_epoch: Callable[[int, Seq2Seq, EpochRecord], None] | None = None,
) -> tuple[Seq2Seq, TrainLog]:
    """Train ``model`` in place until dev perplexity settles or ``max_epochs``.

    ``cfg.dropout`` replaces the model's dropout setting. All randomness
    (batch order, dropout masks) comes from ``cfg.seed``.
    """
    if model.cfg.dropout != cfg.dropout:
        model.cfg = dataclasses.replace(model.cfg, dropout=cfg.dropout)
    rng = np.random.default_rng(cfg.seed)
    lr = cfg.lr
    history: list[float] = []
    tlog = TrainLog()
    last_good: Seq2Seq | None = None
    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        total, count = 0.0, 0
        for src, tgt in make_batches(corpus, cfg, rng):
            loss, n = train_batch(model, src, tgt, lr, cfg, rng)
            total += loss
            count += n
        ppl = perplexity(model, dev)
        rec = EpochRecord(epoch, total / count, ppl, lr, time.perf_counter() - start)
        tlog.epochs.append(rec)
        log.info("epoch %d train_loss %.4f dev_ppl %.4f lr %g", epoch, rec.train_loss, ppl, lr)
        if not math.isfinite(ppl):
            tlog.stopped = "diverged"
            raise TrainingDiverged(f"dev perplexity became {ppl} in epoch {epoch}", last_good, tlog)
        history.append(ppl)
        if on_epoch is not None:
            on_epoch(epoch, model, rec)
        last_good = model.copy()
        if converged(history, cfg.min_delta):
            tlog.stopped = "converged"
            break
        new_lr = lr_schedule(history, lr) if cfg.schedule == "halve" else lr
        if new_lr != lr:
            tlog.halvings.append(epoch)
        lr = new_lr
    else:
        tlog.stopped = "max_epochs"
    return model, tlog
