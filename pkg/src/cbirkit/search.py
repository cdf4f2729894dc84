"""Exact top-K nearest-neighbor retrieval over unit-normalized embeddings.

Similarity is the cosine, computed as the dot product of unit vectors;
search is exact brute force so every downstream number can be checked
against an independent oracle.  Ties on score break by ascending gallery
item_id, which makes every ranking a total order and therefore
reproducible across runs and thread counts.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class RankingList:
    """Ordered retrieval result for one query: ids with non-increasing scores."""

    query_id: str
    item_ids: tuple[str, ...]
    scores: np.ndarray = field(compare=False)

    def __post_init__(self):
        scores = np.array(self.scores, dtype=np.float64)
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        if len(self.item_ids) != scores.shape[0]:
            raise DataError(f"ranking for {self.query_id!r}: ids/scores length mismatch")
        if scores.size and np.any(np.diff(scores) > 0):
            raise DataError(f"ranking for {self.query_id!r}: scores increase")
        if len(set(self.item_ids)) != len(self.item_ids):
            raise DataError(f"ranking for {self.query_id!r}: duplicate gallery ids")

    def __len__(self) -> int:
        return len(self.item_ids)

    def entries(self):
        return zip(self.item_ids, self.scores.tolist())

    def head(self, k: int) -> "RankingList":
        if k >= len(self):
            return self
        return RankingList(self.query_id, self.item_ids[:k], self.scores[:k])


class RetrievalIndex:
    """Immutable gallery snapshot; optionally pre-partitioned by category."""

    def __init__(self, gallery: EmbeddingMatrix, partition_by_category: bool = False):
        if not gallery.is_unit_normalized():
            raise DataError("gallery rows must be unit-normalized (|norm - 1| <= 1e-5)")
        self.gallery = gallery
        self.partition: dict[int, np.ndarray] | None = (
            self._group_by_category(gallery) if partition_by_category else None
        )

    @staticmethod
    def _group_by_category(gallery: EmbeddingMatrix) -> dict[int, np.ndarray]:
        cats = gallery.category_ids()
        return {int(c): np.nonzero(cats == c)[0] for c in np.unique(cats)}

    def category_rows(self, category_id: int) -> np.ndarray:
        groups = self.partition
        if groups is None:
            groups = self._group_by_category(self.gallery)
        return groups.get(category_id, np.empty(0, dtype=np.int64))

    def __len__(self) -> int:
        return self.gallery.n_rows


def build_index(gallery: EmbeddingMatrix, partition_by_category: bool = False) -> RetrievalIndex:
    return RetrievalIndex(gallery, partition_by_category)


def _resolve_threads(threads: int | None) -> int:
    if threads is None or threads == 0:
        return os.cpu_count() or 1
    if threads < 0:
        raise ConfigError(f"threads must be >= 0, got {threads}")
    return threads


def topk_rows(index: RetrievalIndex, query_vec: np.ndarray, k: int,
              candidate_rows: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Top-k gallery row indices and clipped cosine scores for one query.

    Candidates default to the whole gallery.  Ordering is by descending
    score, ties by ascending item_id.
    """
    gallery = index.gallery
    if candidate_rows is None:
        scores = gallery.data @ query_vec
        ids = gallery.item_ids
        rows = None
    else:
        if candidate_rows.size == 0:
            return np.empty(0, dtype=np.int64), np.empty(0)
        scores = gallery.data[candidate_rows] @ query_vec
        ids = gallery.item_ids[candidate_rows]
        rows = candidate_rows
    scores = np.clip(scores, -1.0, 1.0)
    order = np.lexsort((ids, -scores))[:k]
    top = order if rows is None else rows[order]
    return top, scores[order]


def knn_search(
    index: RetrievalIndex,
    queries: EmbeddingMatrix,
    k: int,
    restrict_to_query_category: bool = False,
    threads: int = 1,
) -> list[RankingList]:
    """Exact top-k cosine search for every query row.

    With restrict_to_query_category only gallery rows sharing the query's
    category are candidates; a category absent from the gallery yields an
    empty RankingList.  Fewer than k candidates yield a shorter list.
    Queries are processed independently, so results do not depend on the
    thread count.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if queries.dim != index.gallery.dim:
        raise DataError(f"query dim {queries.dim} != gallery dim {index.gallery.dim}")
    if not queries.is_unit_normalized():
        raise DataError("query rows must be unit-normalized (|norm - 1| <= 1e-5)")

    def run_one(qi: int) -> RankingList:
        rec = queries.ids[qi]
        cand = index.category_rows(rec.category_id) if restrict_to_query_category else None
        rows, scores = topk_rows(index, queries.data[qi], k, cand)
        ids = tuple(index.gallery.item_ids[rows].tolist())
        return RankingList(rec.item_id, ids, scores)

    n_threads = _resolve_threads(threads)
    if n_threads <= 1 or queries.n_rows == 1:
        return [run_one(i) for i in range(queries.n_rows)]
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        return list(pool.map(run_one, range(queries.n_rows)))
