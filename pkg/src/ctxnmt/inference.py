"""Greedy and beam-search decoding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .context import ConfigurationError
from .data import BOS, EOS, UNK, Vocabulary
from .numerics import Tensor
from .seq2seq import DecoderState, EncoderStates, Seq2Seq

DEFAULT_BEAM = 5


def default_max_len(src_len: int, factor: float = 2.0) -> int:
    return int(factor * src_len) + 5


@dataclass
class Hypothesis:
    tokens: list[int]
    logprob: float
    terminal: bool
    state: DecoderState | None = None


def _src_batch(src) -> np.ndarray:
    src = np.asarray(src, dtype=np.int64)
    return src[None, :] if src.ndim == 1 else src


def greedy_decode(model: Seq2Seq, src, max_len: int | None = None, with_score: bool = False):
    """Arg-max decoding. The end-of-sentence token is not included in the output.

    Ties go to the lowest token id.
    """
    src = _src_batch(src)
    if max_len is None:
        max_len = default_max_len(src.shape[1])
    enc = model.encode(src)
    state = model.initial_state(enc)
    y, out, score = BOS, [], 0.0
    for _ in range(max_len):
        state, logp = model.log_probs(state, [y], enc)
        y = int(np.argmax(logp[0]))
        score += float(logp[0, y])
        if y == EOS:
            break
        out.append(y)
    return (out, score) if with_score else out


def _select_rows(state: DecoderState, rows: np.ndarray) -> DecoderState:
    return DecoderState(
        [(Tensor(h.data[rows]), Tensor(c.data[rows])) for h, c in state.layers],
        Tensor(state.feed.data[rows]),
    )


def _tile(enc: EncoderStates, k: int) -> EncoderStates:
    stacked = Tensor(np.repeat(enc.stacked.data, k, axis=0))
    return EncoderStates([], stacked, [])


def beam_decode(model: Seq2Seq, src, beam: int = DEFAULT_BEAM, max_len: int | None = None,
                nbest: bool = False):
    """Beam search over summed log-probabilities, no length normalization.

    At each step the ``beam`` best expansions of the live hypotheses are kept
    (ties: earlier hypothesis, then lower token id); those ending in EOS move
    to a finished pool capped at ``beam``. Search stops when nothing is live,
    at ``max_len`` steps, or when no live hypothesis can still beat the best
    finished one. Returns the best finished token list (EOS stripped), or the
    best live one if none finished; with ``nbest`` the ranked hypotheses.
    """
    if beam < 1:
        raise ConfigurationError("beam width must be at least 1")
    src = _src_batch(src)
    if max_len is None:
        max_len = default_max_len(src.shape[1])
    enc = model.encode(src)
    state = model.initial_state(enc)
    tokens: list[list[int]] = [[]]
    scores = np.zeros(1)
    prev = np.array([BOS])
    finished: list[Hypothesis] = []
    tiled = {1: enc}
    for _ in range(max_len):
        k = len(tokens)
        if k not in tiled:
            tiled[k] = _tile(enc, k)
        state, logp = model.log_probs(state, prev, tiled[k])
        vocab = logp.shape[1]
        cand = (scores[:, None] + logp).reshape(-1)
        # Stable sort on -score keeps (hypothesis, token) order among ties.
        order = np.argsort(-cand, kind="stable")[:beam]
        rows, toks = np.divmod(order, vocab)
        live_rows, live_toks, live_scores = [], [], []
        for r, t, s in zip(rows.tolist(), toks.tolist(), cand[order].tolist()):
            if t == EOS:
                finished.append(Hypothesis(tokens[r], s, True))
            else:
                live_rows.append(r)
                live_toks.append(t)
                live_scores.append(s)
        finished.sort(key=lambda h: -h.logprob)
        del finished[beam:]
        if not live_rows:
            tokens = []
            break
        rows_arr = np.asarray(live_rows)
        state = _select_rows(state, rows_arr)
        tokens = [tokens[r] + [t] for r, t in zip(live_rows, live_toks)]
        scores = np.asarray(live_scores)
        prev = np.asarray(live_toks)
        if finished and finished[0].logprob >= scores.max():
            break
    live = [Hypothesis(t, float(s), False) for t, s in zip(tokens, scores)]
    ranked = finished + sorted(live, key=lambda h: -h.logprob)
    if nbest:
        return ranked
    return ranked[0].tokens


def sequence_logprob(model: Seq2Seq, src, tokens: Sequence[int], terminal: bool = True) -> float:
    """Log-probability of ``tokens`` (plus EOS when ``terminal``) under teacher forcing."""
    enc = model.encode(_src_batch(src))
    state = model.initial_state(enc)
    seq = list(tokens) + ([EOS] if terminal else [])
    prev, total = BOS, 0.0
    for y in seq:
        state, logp = model.log_probs(state, [prev], enc)
        total += float(logp[0, y])
        prev = y
    return total


def translate_corpus(model: Seq2Seq, sentences: Iterable[Sequence[str]], src_vocab: Vocabulary,
                     tgt_vocab: Vocabulary, beam: int = DEFAULT_BEAM, max_len_factor: float = 2.0) -> list[str]:
    """Translate tokenized sentences, one output line per input line.

    Empty input lines give empty output lines. Target ids outside the
    vocabulary's regular entries print as the literal unk token.
    """
    out = []
    unk = tgt_vocab.token(UNK)
    for sent in sentences:
        if not sent:
            out.append("")
            continue
        ids = src_vocab.encode(sent)
        max_len = default_max_len(len(ids), max_len_factor)
        if beam == 1:
            hyp = greedy_decode(model, ids, max_len)
        else:
            hyp = beam_decode(model, ids, beam, max_len)
        words = [tgt_vocab.token(i) if i >= 5 and i < len(tgt_vocab) else unk for i in hyp]
        out.append(" ".join(words))
    return out
