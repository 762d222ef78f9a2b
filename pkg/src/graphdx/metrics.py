"""Ranking metrics: P@1, Recall@k, nDCG@k with binary gains."""

from __future__ import annotations

import math

from .exceptions import UndefinedMetricError


def _check(ranked, truth, k: int | None = None):
    if not truth:
        raise UndefinedMetricError("ground-truth set is empty")
    if len(set(ranked)) != len(ranked):
        raise ValueError("ranked list contains duplicates")
    if k is not None and k < 1:
        raise ValueError("k must be >= 1")


def precision_at_1(ranked: list[int], truth: set[int]) -> float:
    _check(ranked, truth)
    return 1.0 if ranked and ranked[0] in truth else 0.0


def recall_at_k(ranked: list[int], truth: set[int], k: int) -> float:
    _check(ranked, truth, k)
    hits = sum(1 for d in ranked[:k] if d in truth)
    return hits / len(truth)


def ndcg_at_k(ranked: list[int], truth: set[int], k: int) -> float:
    _check(ranked, truth, k)
    dcg = 0.0
    for rank, d in enumerate(ranked[:k], start=1):
        if d in truth:
            dcg += 1.0 / math.log2(rank + 1)
    ideal = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, len(truth)) + 1))
    return dcg / ideal
