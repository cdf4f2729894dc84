import numpy as np
import pytest

from cbirkit.embeddings import EmbeddingMatrix
from cbirkit.errors import ConfigError, DataError
from cbirkit.search import RankingList, build_index, knn_search

from oracles import knn_ref
from util import gallery_ids, query_ids, rng_for, unit_rows


def gmat(data, categories=None):
    data = np.asarray(data, dtype=float)
    return EmbeddingMatrix(data, gallery_ids(data.shape[0], categories))


def qmat(data, categories=None):
    data = np.asarray(data, dtype=float)
    return EmbeddingMatrix(data, query_ids(data.shape[0], categories))


class TestRankingList:
    def test_rejects_increasing_scores(self):
        with pytest.raises(DataError, match="increase"):
            RankingList("q", ("a", "b"), np.array([0.1, 0.9]))

    def test_rejects_duplicates(self):
        with pytest.raises(DataError, match="duplicate"):
            RankingList("q", ("a", "a"), np.array([0.9, 0.1]))

    def test_head(self):
        r = RankingList("q", ("a", "b", "c"), np.array([0.9, 0.5, 0.1]))
        assert r.head(2).item_ids == ("a", "b")
        assert r.head(10) is r


class TestBuildIndex:
    def test_single_row(self):
        idx = build_index(gmat([[1.0, 0.0]]))
        assert len(idx) == 1

    def test_rejects_non_unit(self):
        with pytest.raises(DataError, match="unit"):
            build_index(gmat([[2.0, 0.0]]))

    def test_partition_sizes(self):
        idx = build_index(gmat(np.eye(3), categories=[1, 1, 2]),
                          partition_by_category=True)
        assert len(idx.category_rows(1)) == 2
        assert len(idx.category_rows(2)) == 1
        assert len(idx.category_rows(9)) == 0

    def test_index_equals_raw_matrix_search(self):
        rng = rng_for(40)
        g = gmat(unit_rows(rng, 1000, 16))
        q = qmat(unit_rows(rng, 5, 16))
        idx = build_index(g)
        got = knn_search(idx, q, 10)
        for ranking, qrow in zip(got, q.data):
            exp = knn_ref(g.data, [r.item_id for r in g.ids], qrow, 10)
            assert list(ranking.item_ids) == [e[0] for e in exp]


class TestKnnSearch:
    def test_self_match_scores_one(self):
        rng = rng_for(41)
        g = gmat(unit_rows(rng, 20, 8))
        q = EmbeddingMatrix(g.data[3:4], query_ids(1))
        [r] = knn_search(build_index(g), q, 5)
        assert r.item_ids[0] == "g00003"
        assert r.scores[0] == 1.0

    def test_orthogonal_ties_break_by_id(self):
        g = gmat(np.eye(4)[:3])
        q = qmat([[0.0, 0.0, 0.0, 1.0]])
        [r] = knn_search(build_index(g), q, 3)
        assert list(r.item_ids) == ["g00000", "g00001", "g00002"]
        assert np.all(r.scores == 0.0)

    def test_dimension_mismatch(self):
        rng = rng_for(42)
        g = gmat(unit_rows(rng, 4, 8))
        q = qmat(unit_rows(rng, 2, 6))
        with pytest.raises(DataError, match="dim"):
            knn_search(build_index(g), q, 2)

    def test_k_must_be_positive(self):
        g = gmat([[1.0, 0.0]])
        with pytest.raises(ConfigError):
            knn_search(build_index(g), qmat([[1.0, 0.0]]), 0)

    def test_restriction_limits_candidates(self):
        g = gmat(np.eye(4), categories=[1, 1, 2, 2])
        q = qmat([[1.0, 0.0, 0.0, 0.0]], categories=[2])
        [r] = knn_search(build_index(g), q, 4, restrict_to_query_category=True)
        assert set(r.item_ids) == {"g00002", "g00003"}

    def test_restriction_missing_category_empty(self):
        g = gmat(np.eye(2), categories=[1, 1])
        q = qmat([[1.0, 0.0]], categories=[7])
        [r] = knn_search(build_index(g), q, 2, restrict_to_query_category=True)
        assert len(r) == 0

    def test_short_gallery_gives_short_list(self):
        g = gmat(np.eye(3))
        [r] = knn_search(build_index(g), qmat([[1.0, 0.0, 0.0]]), 10)
        assert len(r) == 3

    def test_scores_bounded(self):
        rng = rng_for(43)
        g = gmat(unit_rows(rng, 100, 12))
        q = qmat(unit_rows(rng, 10, 12))
        for r in knn_search(build_index(g), q, 100):
            assert np.all(r.scores <= 1.0) and np.all(r.scores >= -1.0)

    def test_monotone_k_prefix(self):
        rng = rng_for(44)
        g = gmat(unit_rows(rng, 50, 10))
        q = qmat(unit_rows(rng, 4, 10))
        idx = build_index(g)
        small = knn_search(idx, q, 7)
        big = knn_search(idx, q, 8)
        for s, b in zip(small, big):
            assert b.item_ids[:7] == s.item_ids

    def test_thread_counts_agree(self):
        rng = rng_for(45)
        g = gmat(unit_rows(rng, 300, 16))
        q = qmat(unit_rows(rng, 40, 16))
        idx = build_index(g)
        base = knn_search(idx, q, 10, threads=1)
        for threads in (2, 8, 0):
            other = knn_search(idx, q, 10, threads=threads)
            assert base == other
            for a, b in zip(base, other):
                assert np.array_equal(a.scores, b.scores)

    def test_planted_neighbor_recovered(self):
        rng = rng_for(46)
        g = gmat(unit_rows(rng, 5000, 32))
        hits = 0
        trials = 200
        for t in range(trials):
            row = int(rng.integers(0, 5000))
            noise = rng.normal(size=32)
            noise *= 0.01 / np.linalg.norm(noise)
            v = g.data[row] + noise
            v /= np.linalg.norm(v)
            q = EmbeddingMatrix(v[None, :], query_ids(1))
            [r] = knn_search(build_index(g), q, 1)
            hits += r.item_ids[0] == f"g{row:05d}"
        assert hits / trials >= 0.99
