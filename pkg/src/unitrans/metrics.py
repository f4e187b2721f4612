"""Evaluation metrics: edit distance, CER, corpus BLEU, unit distributions,
and Pearson correlation between unit distributions.

All functions are pure and safe for concurrent use.
"""

from __future__ import annotations

import math
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, EvaluationError

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    # prev holds distances for the shorter sequence b
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            sub = prev[j - 1] + (x != y)
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, sub))
        prev = cur
    return prev[len(b)]


def cer(hyp: Sequence, ref: Sequence) -> float:
    """Character error rate: edit_distance(hyp, ref) / len(ref). May exceed 1."""
    if len(ref) == 0:
        raise EvaluationError("CER undefined for empty reference")
    return edit_distance(hyp, ref) / len(ref)


def normalize_text(s: str) -> list[str]:
    """Lowercase, strip ASCII punctuation, split on whitespace."""
    return s.lower().translate(_PUNCT_TABLE).split()


def _ngram_counts(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    hyps: Sequence[Sequence[str]],
    refs: Sequence[Sequence[str]],
    max_order: int = 4,
    smooth_eps: float = 0.0,
) -> float:
    """Corpus-level BLEU in [0, 100].

    Geometric mean of clipped n-gram precisions (orders 1..max_order) times
    the brevity penalty exp(1 - ref_len/hyp_len) applied when hyp_len <
    ref_len. Single reference per hypothesis. With smooth_eps == 0 (the
    default) a zero precision at any order yields BLEU 0; smooth_eps > 0
    adds epsilon to each order's numerator and denominator instead.
    """
    if len(hyps) != len(refs):
        raise EvaluationError(
            f"hypothesis/reference count mismatch: {len(hyps)} vs {len(refs)}"
        )
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            hyp_counts = _ngram_counts(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = _ngram_counts(ref, n)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(
                min(c, ref_counts.get(g, 0)) for g, c in hyp_counts.items()
            )
    if hyp_len == 0:
        return 0.0
    log_prec = 0.0
    for m, t in zip(matches, totals):
        if smooth_eps > 0.0:
            m, t = m + smooth_eps, t + smooth_eps
        if m == 0 or t == 0:
            return 0.0
        log_prec += math.log(m / t)
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_prec / max_order)


@dataclass
class UnitDistribution:
    """Histogram of unit ids for one system's corpus."""

    counts: np.ndarray
    total: int

    @property
    def normalized(self) -> np.ndarray:
        if self.total == 0:
            raise EvaluationError("normalization undefined for an empty distribution")
        return self.counts / self.total

    @property
    def is_empty(self) -> bool:
        return self.total == 0


def unit_distribution(sequences: Sequence[Sequence[int]], k: int) -> UnitDistribution:
    """Histogram over unit ids [0, k) pooled across all sequences."""
    counts = np.zeros(k, dtype=np.int64)
    for seq in sequences:
        for u in seq:
            if not 0 <= u < k:
                raise DataError(f"unit id {u} out of range for k={k}")
            counts[u] += 1
    return UnitDistribution(counts=counts, total=int(counts.sum()))


def pearson(d1: UnitDistribution, d2: UnitDistribution) -> float:
    """Sample Pearson correlation between two normalized unit distributions."""
    if d1.counts.shape != d2.counts.shape:
        raise EvaluationError("distributions have different vocabulary sizes")
    if d1.is_empty or d2.is_empty:
        raise EvaluationError("Pearson undefined for empty distributions")
    x = d1.normalized
    y = d2.normalized
    xc = x - x.mean()
    yc = y - y.mean()
    vx = float(np.dot(xc, xc))
    vy = float(np.dot(yc, yc))
    if vx == 0.0 or vy == 0.0:
        raise EvaluationError("Pearson undefined for zero-variance distribution")
    return float(np.dot(xc, yc) / math.sqrt(vx * vy))


@dataclass
class CorrelationMatrix:
    """Pairwise Pearson correlations of per-system unit distributions."""

    labels: list[str]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = len(self.labels)
        if self.values.shape != (n, n):
            raise DataError("correlation matrix shape does not match labels")

    def to_csv(self) -> str:
        lines = ["system," + ",".join(self.labels)]
        for label, row in zip(self.labels, self.values):
            lines.append(label + "," + ",".join(f"{v:.6f}" for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_distributions(
        cls, dists: dict[str, UnitDistribution]
    ) -> "CorrelationMatrix":
        labels = list(dists)
        n = len(labels)
        values = np.eye(n)
        for i in range(n):
            for j in range(i + 1, n):
                r = pearson(dists[labels[i]], dists[labels[j]])
                values[i, j] = values[j, i] = r
        return cls(labels=labels, values=values)
