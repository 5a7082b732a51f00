"""Corpus ingestion, vocabularies and the synthetic homograph corpus.

Text is assumed to be tokenized already: one sentence per line, tokens
separated by single spaces. No tokenizer is applied here.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .numerics import DomainError

PAD, UNK, BOS, EOS, HELDOUT = 0, 1, 2, 3, 4
SPECIALS = ("<pad>", "<unk>", "<s>", "</s>", "<$>")
DEFAULT_VOCAB_SIZE = 50000


class IngestionError(ValueError):
    """Malformed corpus input; the message names the offending line."""


class Vocabulary:
    """Token/index map. Ids 0-4 are reserved for pad, unk, bos, eos and the
    held-out symbol; regular tokens follow in rank order."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(SPECIALS)}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate vocabulary entry {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, tok: str) -> bool:
        return tok in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def index(self, tok: str) -> int:
        return self.stoi.get(tok, UNK)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    @property
    def regular_tokens(self) -> list[str]:
        return self.itos[len(SPECIALS) :]

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if tuple(lines[: len(SPECIALS)]) != SPECIALS:
            raise IngestionError(f"{path}: vocabulary must start with {' '.join(SPECIALS)}")
        return cls(lines[len(SPECIALS) :])


def build_vocab(sentences: Iterable[Sequence[str]], k: int = DEFAULT_VOCAB_SIZE) -> Vocabulary:
    """Keep the ``k`` most frequent tokens; ties go to the lexicographically smaller."""
    if k < 1:
        raise ValueError("vocabulary size limit must be >= 1")
    counts = Counter(tok for sent in sentences for tok in sent)
    if not counts:
        raise DomainError("cannot build a vocabulary from an empty corpus")
    for special in SPECIALS:
        counts.pop(special, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(tok for tok, _ in ranked[:k])


@dataclass
class ParallelCorpus:
    pairs: list[tuple[list[str], list[str]]]

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> list[list[str]]:
        return [s for s, _ in self.pairs]

    @property
    def targets(self) -> list[list[str]]:
        return [t for _, t in self.pairs]


def read_tokenized(path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh.read().splitlines()]


def write_tokenized(path, sentences: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sent in sentences:
            fh.write(" ".join(sent) + "\n")


def read_parallel(src_path, tgt_path) -> ParallelCorpus:
    src = read_tokenized(src_path)
    tgt = read_tokenized(tgt_path)
    if len(src) != len(tgt):
        shorter = min(len(src), len(tgt))
        raise IngestionError(
            f"line count mismatch: {src_path} has {len(src)}, {tgt_path} has {len(tgt)} "
            f"(first unmatched line {shorter + 1})"
        )
    for lineno, (s, t) in enumerate(zip(src, tgt), start=1):
        if not s or not t:
            side = src_path if not s else tgt_path
            raise IngestionError(f"{side}:{lineno}: empty sentence")
    return ParallelCorpus(list(zip(src, tgt)))


@dataclass
class IndexedPair:
    src: np.ndarray  # (n,)
    tgt: np.ndarray  # (m + 2,) wrapped in bos/eos


def index_corpus(corpus: ParallelCorpus | Sequence[tuple[Sequence[str], Sequence[str]]],
                 src_vocab: Vocabulary, tgt_vocab: Vocabulary) -> list[IndexedPair]:
    pairs = corpus.pairs if isinstance(corpus, ParallelCorpus) else list(corpus)
    out = []
    for lineno, pair in enumerate(pairs, start=1):
        if len(pair) != 2:
            raise IngestionError(f"line {lineno}: expected a (source, target) pair")
        src, tgt = pair
        if not src or not tgt:
            raise IngestionError(f"line {lineno}: empty sentence")
        out.append(
            IndexedPair(
                np.asarray(src_vocab.encode(src), dtype=np.int64),
                np.asarray([BOS, *tgt_vocab.encode(tgt), EOS], dtype=np.int64),
            )
        )
    return out


# --------------------------------------------------------- synthetic corpus


class SpecError(ValueError):
    """Invalid homograph corpus specification."""


@dataclass
class HomographSpec:
    """Recipe for a synthetic corpus where a cue word decides each homograph's translation.

    ``senses`` maps a homograph to its ``(cue, translation)`` pairs. Every other
    source word (cues and fillers) translates through ``lexicon``; sentences
    are a word-by-word rendering so target length equals source length.
    """

    senses: dict[str, list[tuple[str, str]]]
    fillers: list[str]
    lexicon: dict[str, str] = field(default_factory=dict)
    length_range: tuple[int, int] = (5, 9)
    seed: int = 0

    def translation(self, word: str) -> str:
        return self.lexicon.get(word, word.upper())

    def validate(self) -> None:
        homographs = set(self.senses)
        fillers = set(self.fillers)
        lo, hi = self.length_range
        if lo < 2 or hi < lo:
            raise SpecError(f"length range {self.length_range} must satisfy 2 <= lo <= hi")
        if not self.fillers and hi > 2:
            raise SpecError("filler vocabulary is empty")
        seen_targets: dict[str, tuple[str, str]] = {}
        for hom, pairs in self.senses.items():
            if len(pairs) < 2:
                raise SpecError(f"homograph {hom!r} needs at least two senses")
            cues = [c for c, _ in pairs]
            if len(set(cues)) != len(cues):
                raise SpecError(f"homograph {hom!r} repeats a cue")
            for cue, target in pairs:
                if cue in homographs:
                    raise SpecError(f"cue {cue!r} is also a homograph")
                if cue in fillers:
                    raise SpecError(f"cue {cue!r} is also a filler")
                if target in seen_targets:
                    raise SpecError(
                        f"sense target {target!r} used by both {seen_targets[target]} and {(hom, cue)}"
                    )
                seen_targets[target] = (hom, cue)
        if fillers & homographs:
            raise SpecError(f"fillers overlap homographs: {sorted(fillers & homographs)}")
        others = {self.translation(w) for w in fillers | self.cues}
        clash = others & set(seen_targets)
        if clash:
            raise SpecError(f"sense targets collide with ordinary translations: {sorted(clash)}")

    @property
    def cues(self) -> set[str]:
        return {c for pairs in self.senses.values() for c, _ in pairs}


@dataclass(frozen=True)
class SenseLabel:
    line: int
    homograph: str
    gold: str
    position: int


_DEFAULT_SENSES = {
    "bank": [("river", "ufer"), ("money", "institut")],
    "bass": [("fish", "barsch"), ("music", "bassstimme")],
    "bat": [("cave", "fledermaus"), ("baseball", "schlaeger")],
    "bow": [("arrow", "bogen"), ("ship", "bug")],
    "lead": [("metal", "blei"), ("team", "fuehrung")],
    "seal": [("ocean", "robbe"), ("envelope", "siegel")],
    "spring": [("season", "fruehling"), ("coil", "feder")],
    "pitch": [("tar", "pech"), ("field", "spielfeld")],
}


def default_homograph_spec(n_homographs: int = 8, n_fillers: int = 40, seed: int = 0) -> HomographSpec:
    """Eight two-sense English homographs with German-like sense targets."""
    if not 1 <= n_homographs <= len(_DEFAULT_SENSES):
        raise SpecError(f"between 1 and {len(_DEFAULT_SENSES)} default homographs are available")
    senses = dict(itertools.islice(_DEFAULT_SENSES.items(), n_homographs))
    fillers = [f"w{i:02d}" for i in range(n_fillers)]
    lexicon = {f: f"v{f[1:]}" for f in fillers}
    for pairs in senses.values():
        for cue, _ in pairs:
            lexicon[cue] = f"{cue}_de"
    return HomographSpec(senses=senses, fillers=fillers, lexicon=lexicon, seed=seed)


def gen_homograph_corpus(spec: HomographSpec, n_pairs: int, seed: int | None = None):
    """Sample ``n_pairs`` sentences, each with one homograph and one of its cues.

    (homograph, sense) combinations are used equally often up to one. The cue
    lands before or after the homograph with equal probability. Returns the
    corpus and one :class:`SenseLabel` per line.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    combos = [(h, k) for h in spec.senses for k in range(len(spec.senses[h]))]
    order = np.resize(np.arange(len(combos)), n_pairs)
    rng.shuffle(order)
    lo, hi = spec.length_range
    pairs, labels = [], []
    for line, ci in enumerate(order):
        hom, sense = combos[ci]
        cue, gold = spec.senses[hom][sense]
        n = int(rng.integers(lo, hi + 1))
        words = list(rng.choice(spec.fillers, size=n)) if spec.fillers else [None] * n
        cue_after = bool(rng.random() < 0.5)
        i, j = sorted(rng.choice(n, size=2, replace=False).tolist())
        hpos, cpos = (i, j) if cue_after else (j, i)
        words[hpos], words[cpos] = hom, cue
        src = [str(w) for w in words]
        tgt = [gold if k == hpos else spec.translation(w) for k, w in enumerate(src)]
        pairs.append((src, tgt))
        labels.append(SenseLabel(line, hom, gold, hpos))
    return ParallelCorpus(pairs), labels


def write_labels(path, labels: Iterable[SenseLabel]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lab in labels:
            fh.write(f"{lab.line}\t{lab.homograph}\t{lab.gold}\n")


def read_labels(path) -> list[tuple[int, str, str]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise IngestionError(f"{path}:{lineno}: expected line_index<TAB>homograph<TAB>gold_target")
            out.append((int(parts[0]), parts[1], parts[2]))
    return out
