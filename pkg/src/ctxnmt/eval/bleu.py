"""Corpus-level BLEU on pre-tokenized text."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

from ..numerics import ContractError


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def ngram_stats(references: Sequence[Sequence[str]], hypotheses: Sequence[Sequence[str]], max_n: int = 4):
    """Clipped matches and totals per order, plus hypothesis and reference lengths."""
    if len(references) != len(hypotheses):
        raise ContractError(f"{len(references)} references vs {len(hypotheses)} hypotheses")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for ref, hyp in zip(references, hypotheses):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            h = ngrams(hyp, n)
            r = ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)
    return matches, totals, hyp_len, ref_len


def bleu(references: Sequence[Sequence[str]], hypotheses: Sequence[Sequence[str]], max_n: int = 4) -> float:
    """BLEU in [0, 1] with one reference per sentence.

    Orders n >= 2 whose clipped match count is zero are smoothed to
    ``1 / (total + 1)``; a zero unigram precision gives 0.
    """
    matches, totals, hyp_len, ref_len = ngram_stats(references, hypotheses, max_n)
    if hyp_len == 0 or matches[0] == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_n):
        num, den = matches[n], totals[n]
        if n > 0 and num == 0:
            num, den = 1, den + 1
        log_p += math.log(num / den) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p)
