"""Multi-label retrieval metrics as functions of the number retrieved.

Relevance between a query and a retrieved image is graded by the number of
labels they share. mAP uses binary relevance (at least one shared label);
ACG averages the shared counts; NDCG discounts the gains by log2(rank + 1)
and normalises by the ideal reordering of the same retrieved list.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .retrieval import DescriptorStore, query

Gain = Literal["linear", "exponential"]


@dataclass(frozen=True)
class RelevanceJudgment:
    shared: int
    relevant: bool


def judge(query_labels, retrieved_labels) -> RelevanceJudgment:
    a = np.asarray(query_labels, dtype=np.int64)
    b = np.asarray(retrieved_labels, dtype=np.int64)
    if a.shape != b.shape:
        raise ValueError(f"label vectors differ in length: {a.size} vs {b.size}")
    shared = int(np.count_nonzero((a != 0) & (b != 0)))
    return RelevanceJudgment(shared, shared > 0)


def _gains(shared: np.ndarray, gain: Gain) -> np.ndarray:
    if gain == "linear":
        return shared
    if gain == "exponential":
        return np.exp2(shared) - 1.0
    raise ValueError(f"unknown gain policy {gain!r}")


def metric_curves(shared, gain: Gain = "linear") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """AP@k, ACG@k and NDCG@k for every k = 1..len(shared)."""
    s = np.asarray(shared, dtype=np.float64)
    ranks = np.arange(1, s.size + 1, dtype=np.float64)
    rel = (s > 0).astype(np.float64)
    hits = np.cumsum(rel)
    prec_sum = np.cumsum(rel * hits / ranks)
    ap = np.divide(prec_sum, hits, out=np.zeros_like(hits), where=hits > 0)

    acg = np.cumsum(s) / ranks

    disc = 1.0 / np.log2(ranks + 1.0)
    g = _gains(s, gain)
    dcg = np.cumsum(g * disc)
    idcg = np.cumsum(np.sort(g)[::-1] * disc)
    ndcg = np.divide(dcg, idcg, out=np.zeros_like(dcg), where=idcg > 0)
    return ap, acg, ndcg


def _check_k(seq, k: int) -> None:
    if not 1 <= k <= len(seq):
        raise ValueError(f"k={k} out of range for a list of length {len(seq)}")


def average_precision(relevance: Sequence, k: int) -> float:
    """Mean of precision@r over relevant ranks r <= k; 0 if none relevant."""
    _check_k(relevance, k)
    return float(metric_curves(np.asarray(relevance[:k], dtype=bool))[0][-1])


def acg_at_k(shared: Sequence, k: int) -> float:
    _check_k(shared, k)
    return float(np.mean(np.asarray(shared[:k], dtype=np.float64)))


def ndcg_at_k(shared: Sequence, k: int, gain: Gain = "linear") -> float:
    """DCG@k over IDCG@k, where the ideal ordering sorts ``shared`` itself."""
    _check_k(shared, k)
    return float(metric_curves(shared, gain)[2][k - 1])


@dataclass(frozen=True)
class EvalCurve:
    map_at_k: np.ndarray
    acg_at_k: np.ndarray
    ndcg_at_k: np.ndarray

    @property
    def k_max(self) -> int:
        return len(self.map_at_k)

    def rows(self):
        for k in range(self.k_max):
            yield k + 1, float(self.map_at_k[k]), float(self.acg_at_k[k]), float(self.ndcg_at_k[k])


def shared_counts(store: DescriptorStore, query_id, descriptor, labels, k_max: int) -> np.ndarray:
    """Shared-label counts of the top k_max results for one query."""
    exclude = (query_id,) if query_id in store else ()
    available = len(store) - len(exclude)
    if k_max > available:
        raise ValueError(
            f"k_max={k_max} exceeds the {available} retrievable images for query {query_id}"
        )
    hits = query(store, descriptor, k_max, exclude=exclude)
    y = np.asarray(labels) != 0
    return np.array([np.count_nonzero(y & (store.labels(h.image_id) != 0)) for h in hits])


def evaluate(
    store: DescriptorStore, queries: Sequence[tuple], k_max: int, gain: Gain = "linear"
) -> EvalCurve:
    """Average the three metric curves over (id, descriptor, labels) queries."""
    if not queries:
        raise ValueError("empty query set")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    tot = np.zeros((3, k_max))
    for qid, desc, labels in queries:
        tot += np.array(metric_curves(shared_counts(store, qid, desc, labels, k_max), gain))
    tot /= len(queries)
    return EvalCurve(tot[0], tot[1], tot[2])


def store_queries(store: DescriptorStore, ids: Sequence[str]) -> list[tuple]:
    return [(i, store.descriptor(i), store.labels(i)) for i in ids]
