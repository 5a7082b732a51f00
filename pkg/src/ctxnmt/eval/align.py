"""IBM Model 1 word alignment with grow-diag-final-and symmetrization.

Links are ``(source_position, target_position)`` pairs, 0-based, which is
also the order used in Pharaoh files (``i-j``).
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..numerics import DomainError

NULL = "<null>"
NULL_FLOOR = 1e-6

Pair = tuple[Sequence[str], Sequence[str]]
AlignmentSet = set[tuple[int, int]]


@dataclass
class LexicalTable:
    """``prob[given][word]`` = p(word | given), trained in one direction.

    ``direction`` is ``"forward"`` (source words generate target words) or
    ``"backward"``. ``log_likelihood[k]`` is the corpus log-likelihood after
    ``k`` EM iterations (entry 0 is the uniform start).
    """

    prob: dict[str, dict[str, float]]
    direction: str = "forward"
    log_likelihood: list[float] = field(default_factory=list)

    def __call__(self, word: str, given: str) -> float:
        return self.prob.get(given, {}).get(word, 0.0)


def _orient(pairs: Sequence[Pair], direction: str) -> list[tuple[list[str], list[str]]]:
    if direction == "forward":
        return [(list(s), list(t)) for s, t in pairs]
    if direction == "backward":
        return [(list(t), list(s)) for s, t in pairs]
    raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")


def _e_step(corpus, prob, uniform):
    counts: dict[str, dict[str, float]] = defaultdict(lambda: defaultdict(float))
    ll = []
    for given, words in corpus:
        given = [NULL] + given
        norm = math.log(len(given))
        for w in words:
            probs = [prob[g][w] if prob is not None else uniform for g in given]
            denom = sum(probs)
            ll.append(math.log(denom) - norm)
            for g, p in zip(given, probs):
                counts[g][w] += p / denom
    return counts, math.fsum(ll)


def train_aligner(pairs: Sequence[Pair], iterations: int = 5, direction: str = "forward") -> LexicalTable:
    """Fit p(target word | source word) (or the reverse) by EM from a uniform start."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    corpus = _orient(pairs, direction)
    if not corpus:
        raise DomainError("cannot train an aligner on an empty corpus")
    vocab = {w for _, words in corpus for w in words}
    uniform = 1.0 / len(vocab)
    prob = None
    history = []
    for _ in range(iterations):
        counts, ll = _e_step(corpus, prob, uniform)
        history.append(ll)
        prob = {}
        for g, row in counts.items():
            total = math.fsum(row.values())
            prob[g] = {w: c / total for w, c in row.items()}
    _, ll = _e_step(corpus, prob, uniform)
    history.append(ll)
    return LexicalTable(prob, direction, history)


def _best(scores: list[float], center: float, floor: float) -> int | None:
    best, key = None, None
    for k, s in enumerate(scores):
        if s < floor:
            continue
        cand = (-s, abs(k - center), k)
        if key is None or cand < key:
            best, key = k, cand
    return best


def directed_links(src: Sequence[str], tgt: Sequence[str], table: LexicalTable,
                   floor: float = NULL_FLOOR) -> AlignmentSet:
    """Each word on the generated side links to its most probable partner.

    Ties prefer the partner nearest the diagonal, then the lower position.
    Words whose best probability falls below ``floor`` (including unseen
    words) stay unaligned.
    """
    links = set()
    if table.direction == "forward":
        for j, w in enumerate(tgt):
            center = j * len(src) / max(len(tgt), 1)
            i = _best([table(w, s) for s in src], center, floor)
            if i is not None:
                links.add((i, j))
    else:
        for i, w in enumerate(src):
            center = i * len(tgt) / max(len(src), 1)
            j = _best([table(w, t) for t in tgt], center, floor)
            if j is not None:
                links.add((i, j))
    return links


_NEIGHBORS = ((-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))


def grow_diag_final_and(forward: AlignmentSet, backward: AlignmentSet, src_len: int, tgt_len: int) -> AlignmentSet:
    """Symmetrize two directed alignments; the result lies between their
    intersection and union."""
    union = forward | backward
    result = forward & backward
    src_done = {i for i, _ in result}
    tgt_done = {j for _, j in result}

    changed = True
    while changed:
        changed = False
        for i in range(src_len):
            for j in range(tgt_len):
                if (i, j) not in result:
                    continue
                for di, dj in _NEIGHBORS:
                    ni, nj = i + di, j + dj
                    if (ni, nj) in result or (ni, nj) not in union:
                        continue
                    if ni not in src_done or nj not in tgt_done:
                        result.add((ni, nj))
                        src_done.add(ni)
                        tgt_done.add(nj)
                        changed = True

    for directed in (forward, backward):
        for i, j in sorted(directed):
            if i not in src_done and j not in tgt_done:
                result.add((i, j))
                src_done.add(i)
                tgt_done.add(j)
    return result


def align(pair: Pair, forward: LexicalTable, backward: LexicalTable, floor: float = NULL_FLOOR) -> AlignmentSet:
    src, tgt = pair
    fwd = directed_links(src, tgt, forward, floor)
    bwd = directed_links(src, tgt, backward, floor)
    return grow_diag_final_and(fwd, bwd, len(src), len(tgt))


def align_corpus(pairs: Sequence[Pair], iterations: int = 5) -> list[AlignmentSet]:
    """Train both directions on ``pairs`` and return symmetrized alignments for each."""
    fwd = train_aligner(pairs, iterations, "forward")
    bwd = train_aligner(pairs, iterations, "backward")
    return [align(p, fwd, bwd) for p in pairs]


def format_pharaoh(links: Iterable[tuple[int, int]]) -> str:
    return " ".join(f"{i}-{j}" for i, j in sorted(links))


def parse_pharaoh(line: str, where: str = "") -> AlignmentSet:
    links = set()
    for item in line.split():
        try:
            i, j = item.split("-")
            links.add((int(i), int(j)))
        except ValueError:
            raise ValueError(f"{where}malformed alignment link {item!r}") from None
    return links


def write_pharaoh(path, alignments: Iterable[AlignmentSet]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for links in alignments:
            fh.write(format_pharaoh(links) + "\n")


def read_pharaoh(path) -> list[AlignmentSet]:
    with open(path, encoding="utf-8") as fh:
        return [parse_pharaoh(line, f"{path}:{n}: ") for n, line in enumerate(fh, start=1)]
