"""Word-translation precision/recall/F1 through alignments, sense buckets, bootstrap."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..numerics import DomainError
from .align import AlignmentSet


@dataclass
class TranslationPair:
    source: Sequence[str]
    reference: Sequence[str]
    hypothesis: Sequence[str]
    ref_align: AlignmentSet
    hyp_align: AlignmentSet


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, tp: int, fp: int, fn: int) -> None:
        self.tp += tp
        self.fp += fp
        self.fn += fn

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


def prf(tp, fp, fn):
    """Vectorized precision, recall and F1 over arrays of pooled counts."""
    tp, fp, fn = (np.asarray(x, dtype=float) for x in (tp, fp, fn))
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        r = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f = np.where(p + r > 0, 2 * p * r / (p + r), 0.0)
    return p, r, f


@dataclass
class BucketWindow:
    senses: tuple[int, ...]  # sense counts of the buckets in this window
    value: float


@dataclass
class HomographReport:
    per_word: dict[str, Counts]
    micro: Counts
    pair_counts: list[tuple[int, int, int]]  # pooled over listed words, per sentence pair
    buckets: list[BucketWindow] = field(default_factory=list)

    def to_tsv(self) -> str:
        lines = ["word\tTP\tFP\tFN\tP\tR\tF1"]
        rows = sorted(self.per_word.items()) + [("#micro", self.micro)]
        for word, c in rows:
            lines.append(f"{word}\t{c.tp}\t{c.fp}\t{c.fn}\t{c.precision:.4f}\t{c.recall:.4f}\t{c.f1:.4f}")
        for b in self.buckets:
            lines.append(f"#bucket\t{b.senses[0]}-{b.senses[-1]}\t{b.value:.4f}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        def row(c):
            return {"TP": c.tp, "FP": c.fp, "FN": c.fn, "P": c.precision, "R": c.recall, "F1": c.f1}

        return json.dumps(
            {
                "words": {w: row(c) for w, c in sorted(self.per_word.items())},
                "micro": row(self.micro),
                "buckets": [{"senses": list(b.senses), "F1": b.value} for b in self.buckets],
            },
            indent=2,
            sort_keys=True,
        )


def aligned_words(position: int, target: Sequence[str], links: AlignmentSet) -> set[str]:
    return {target[j] for i, j in links if i == position}


def word_translation_f1(pairs: Sequence[TranslationPair], words: Iterable[str] | None = None,
                        stop_words: Iterable[str] = ()) -> HomographReport:
    """Score every occurrence of the listed source words.

    For an occurrence, R and H are the sets of reference and hypothesis words
    aligned to it; TP = |R & H|, FP = |H - R|, FN = |R - H|. Counts are pooled
    per word and over all occurrences (micro average). ``words=None`` scores
    every source word. Stop words are never scored.
    """
    stop = set(stop_words)
    listed = None if words is None else [w for w in words if w not in stop]
    wanted = None if listed is None else set(listed)
    per_word: dict[str, Counts] = {w: Counts() for w in listed} if listed is not None else {}
    micro = Counts()
    pair_counts = []
    for pair in pairs:
        local = Counts()
        for i, word in enumerate(pair.source):
            if word in stop or (wanted is not None and word not in wanted):
                continue
            ref = aligned_words(i, pair.reference, pair.ref_align)
            hyp = aligned_words(i, pair.hypothesis, pair.hyp_align)
            tp, fp, fn = len(ref & hyp), len(hyp - ref), len(ref - hyp)
            per_word.setdefault(word, Counts()).add(tp, fp, fn)
            local.add(tp, fp, fn)
        micro.add(local.tp, local.fp, local.fn)
        pair_counts.append((local.tp, local.fp, local.fn))
    return HomographReport(per_word, micro, pair_counts)


@dataclass
class SenseDictionary:
    senses: dict[str, int]
    stop_words: set[str] = field(default_factory=set)

    def __post_init__(self):
        bad = [w for w, n in self.senses.items() if n < 1]
        if bad:
            raise ValueError(f"sense counts must be >= 1: {bad[:5]}")

    @classmethod
    def load(cls, senses_path, stop_path=None) -> "SenseDictionary":
        senses = {}
        with open(senses_path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2:
                    raise ValueError(f"{senses_path}:{n}: expected word<TAB>count")
                senses[parts[0]] = int(parts[1])
        stop = set()
        if stop_path is not None:
            with open(stop_path, encoding="utf-8") as fh:
                stop = {line.strip() for line in fh if line.strip()}
        return cls(senses, stop)


def sense_bucket_report(per_word_f1: dict[str, float], senses: SenseDictionary, window: int = 4) -> list[BucketWindow]:
    """Mean F1 per sense count, smoothed over ``window`` consecutive non-empty buckets.

    Words are averaged within a bucket, then buckets within a window. With
    fewer non-empty buckets than ``window``, one window spans them all.
    """
    buckets: dict[int, list[float]] = defaultdict(list)
    for word, f1 in per_word_f1.items():
        if word in senses.stop_words or word not in senses.senses:
            continue
        buckets[senses.senses[word]].append(f1)
    if not buckets:
        raise DomainError("no scored word has a known sense count")
    keys = sorted(buckets)
    means = [sum(buckets[k]) / len(buckets[k]) for k in keys]
    span = min(window, len(keys))
    return [
        BucketWindow(tuple(keys[s : s + span]), sum(means[s : s + span]) / span)
        for s in range(len(keys) - span + 1)
    ]


def bootstrap_compare(a: HomographReport, b: HomographReport, resamples: int = 1000,
                      metric: str = "f1", seed: int = 0) -> float:
    """Share of paired resamples in which system ``b`` scores no better than ``a``.

    Sentence pairs are drawn with replacement; ties count one half.
    """
    ca = np.asarray(a.pair_counts, dtype=float)
    cb = np.asarray(b.pair_counts, dtype=float)
    if len(ca) != len(cb):
        raise ValueError("reports cover different numbers of sentence pairs")
    if len(ca) < 2:
        raise DomainError("bootstrap needs at least two sentence pairs")
    pick = {"precision": 0, "recall": 1, "f1": 2}[metric]
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(ca), size=(resamples, len(ca)))
    sa = ca[idx].sum(axis=1)
    sb = cb[idx].sum(axis=1)
    ma = prf(sa[:, 0], sa[:, 1], sa[:, 2])[pick]
    mb = prf(sb[:, 0], sb[:, 1], sb[:, 2])[pick]
    return float(((mb < ma).sum() + 0.5 * (mb == ma).sum()) / resamples)


def gold_alignment(source: Sequence[str], reference: Sequence[str], word: str, gold: str) -> AlignmentSet:
    """Reference links taken from a gold label: every occurrence of ``word`` in
    the source links to every occurrence of ``gold`` in the reference."""
    return {(i, j) for i, s in enumerate(source) if s == word for j, r in enumerate(reference) if r == gold}
