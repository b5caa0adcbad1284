"""Corpus-free BLEU-4 and ROUGE-L on the shared tokenizer."""
from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

from ..text import ngrams, tokenize

SMOOTHING_EPS = 1e-9
MAX_ORDER = 4


def _closest_ref_len(cand_len: int, ref_lens: Sequence[int]) -> int:
    return min(ref_lens, key=lambda r: (abs(r - cand_len), r))


def bleu4(candidate: str, references: Sequence[str] | str, eps: float = SMOOTHING_EPS) -> float:
    """Sentence BLEU, n = 1..4, uniform weights, brevity penalty.

    A zero clipped count contributes ``eps`` to that order's numerator so
    the geometric mean stays defined. Candidates shorter than four tokens
    average only over the orders they can contain, so identical short
    texts still score 1. An empty candidate scores 0.
    """
    if isinstance(references, str):
        references = [references]
    cand = tokenize(candidate)
    refs = [tokenize(r) for r in references]
    if not cand or not refs:
        return 0.0
    orders = min(MAX_ORDER, len(cand))
    log_sum = 0.0
    for n in range(1, orders + 1):
        counts = Counter(ngrams(cand, n))
        max_ref: Counter = Counter()
        for r in refs:
            max_ref |= Counter(ngrams(r, n))
        clipped = sum(min(c, max_ref[g]) for g, c in counts.items())
        total = sum(counts.values())
        log_sum += math.log((clipped or eps) / total)
    ref_len = _closest_ref_len(len(cand), [len(r) for r in refs])
    bp = 1.0 if len(cand) > ref_len else math.exp(1.0 - ref_len / len(cand))
    return min(1.0, bp * math.exp(log_sum / orders))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    cand, ref = tokenize(candidate), tokenize(reference)
    lcs = lcs_length(cand, ref) if cand and ref else 0
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return 2 * p * r / (p + r)
