import numpy as np
import pytest

from cbirkit.embeddings import EmbeddingMatrix
from cbirkit.errors import ConfigError, DataError
from cbirkit.rerank import (
    QeParams,
    RerankParams,
    database_augmentation,
    k_reciprocal_rerank,
    query_expansion,
)
from cbirkit.search import build_index, knn_search

from oracles import expand_ref, rerank_ref
from util import gallery_ids, query_ids, rng_for, unit_rows


def gmat(data):
    data = np.asarray(data, dtype=float)
    return EmbeddingMatrix(data, gallery_ids(data.shape[0]))


def qmat(data):
    data = np.asarray(data, dtype=float)
    return EmbeddingMatrix(data, query_ids(data.shape[0]))


class TestParams:
    def test_qe_rejects_negative_k(self):
        with pytest.raises(ConfigError):
            QeParams(k=-1)

    def test_rerank_rejects_k2_above_k1(self):
        with pytest.raises(ConfigError):
            RerankParams(k1=5, k2=6)

    def test_rerank_rejects_bad_lambda(self):
        with pytest.raises(ConfigError):
            RerankParams(lam=1.5)


class TestQueryExpansion:
    def test_k0_identity_object(self):
        rng = rng_for(50)
        q = qmat(unit_rows(rng, 4, 6))
        idx = build_index(gmat(unit_rows(rng, 10, 6)))
        assert query_expansion(q, idx, QeParams(k=0)) is q

    def test_identical_neighbor_fixed_point(self):
        v = np.array([[0.6, 0.8]])
        q = qmat(v)
        idx = build_index(gmat(v))
        out = query_expansion(q, idx, QeParams(k=1, alpha=0.0))
        assert np.abs(out.data - q.data).max() <= 1e-12

    def test_hand_computed_weighted_sum(self):
        # gallery of three: cosines with q are 1.0, 0.5 and 0.0;
        # with k=2, alpha=1 the update is q + 1*g1 + 0.5*g2, renormalized
        q = qmat([[1.0, 0.0]])
        g = gmat([[1.0, 0.0], [0.5, np.sqrt(3) / 2], [0.0, 1.0]])
        out = query_expansion(q, build_index(g), QeParams(k=2, alpha=1.0))
        raw = np.array([1.0, 0.0]) + 1.0 * g.data[0] + 0.5 * g.data[1]
        assert np.allclose(out.data[0], raw / np.linalg.norm(raw), atol=1e-12)

    def test_matches_loop_reference(self):
        rng = rng_for(51)
        q = qmat(unit_rows(rng, 8, 10))
        g = gmat(unit_rows(rng, 30, 10))
        idx = build_index(g)
        k, alpha = 4, 2.0
        out = query_expansion(q, idx, QeParams(k=k, alpha=alpha))
        ranked = knn_search(idx, q, k)
        for i, r in enumerate(ranked):
            neighbors = [g.data[g.row_of(item)] for item in r.item_ids]
            exp = expand_ref(q.data[i], neighbors, r.scores.tolist(), alpha)
            assert np.allclose(out.data[i], exp, atol=1e-9)

    def test_output_unit_norm(self):
        rng = rng_for(52)
        q = qmat(unit_rows(rng, 20, 8))
        idx = build_index(gmat(unit_rows(rng, 50, 8)))
        out = query_expansion(q, idx, QeParams(k=5, alpha=3.0))
        assert np.abs(np.linalg.norm(out.data, axis=1) - 1.0).max() <= 1e-6

    def test_zero_vector_error_names_query(self):
        # alpha=0 weights the opposite vector fully: q + (-q) = 0
        q = qmat([[1.0, 0.0]])
        g = gmat([[-1.0, 0.0]])
        with pytest.raises(DataError, match="q00000"):
            query_expansion(q, build_index(g), QeParams(k=1, alpha=0.0))


class TestDatabaseAugmentation:
    def test_k0_identity(self):
        rng = rng_for(53)
        g = gmat(unit_rows(rng, 6, 4))
        assert database_augmentation(g, QeParams(k=0)) is g

    def test_duplicate_rows_fixed_point(self):
        row = np.array([0.6, 0.8])
        g = EmbeddingMatrix(np.tile(row, (5, 1)), gallery_ids(5))
        for include_self in (True, False):
            out = database_augmentation(g, QeParams(k=3, include_self=include_self))
            assert np.abs(out.data - g.data).max() <= 1e-12

    def test_exclude_self_changes_neighbors(self):
        g = gmat([[1.0, 0.0], [0.0, 1.0]])
        kept = database_augmentation(g, QeParams(k=1, alpha=1.0, include_self=True))
        # self is the only positive-cosine neighbor: row stays put
        assert np.allclose(kept.data, g.data, atol=1e-12)
        dropped = database_augmentation(g, QeParams(k=1, alpha=1.0, include_self=False))
        # the orthogonal row gets weight 0^1 = 0, so direction is unchanged too
        assert np.allclose(dropped.data, g.data, atol=1e-12)

    def test_matches_brute_force_on_fixture(self):
        rng = rng_for(54)
        g = gmat(unit_rows(rng, 20, 6))
        params = QeParams(k=4, alpha=1.0, include_self=True)
        out = database_augmentation(g, params)
        sims = g.data @ g.data.T
        for i in range(20):
            order = sorted(range(20), key=lambda j: (-min(1.0, max(-1.0, sims[i, j])),
                                                     g.ids[j].item_id))
            top = order[: params.k]
            exp = expand_ref(g.data[i], [g.data[j] for j in top],
                             [min(1.0, max(-1.0, sims[i, j])) for j in top], params.alpha)
            assert np.allclose(out.data[i], exp, atol=1e-9)


def _initial_rankings(q, g, k=None):
    idx = build_index(g)
    return knn_search(idx, q, g.n_rows if k is None else k)


class TestKReciprocalRerank:
    def test_lambda_one_is_identity_permutation(self):
        rng = rng_for(55)
        q = qmat(unit_rows(rng, 6, 8))
        g = gmat(unit_rows(rng, 30, 8))
        initial = _initial_rankings(q, g)
        out = k_reciprocal_rerank(q, g, initial, RerankParams(k1=10, k2=4, lam=1.0))
        for before, after in zip(initial, out):
            assert after.item_ids == before.item_ids

    def test_k1_larger_than_gallery(self):
        rng = rng_for(56)
        q = qmat(unit_rows(rng, 2, 4))
        g = gmat(unit_rows(rng, 5, 4))
        with pytest.raises(ConfigError, match="gallery"):
            k_reciprocal_rerank(q, g, _initial_rankings(q, g), RerankParams(k1=6, k2=2))

    def test_short_initial_rankings_rejected(self):
        rng = rng_for(57)
        q = qmat(unit_rows(rng, 2, 4))
        g = gmat(unit_rows(rng, 30, 4))
        short = _initial_rankings(q, g, k=3)
        with pytest.raises(DataError, match="k1"):
            k_reciprocal_rerank(q, g, short, RerankParams(k1=10, k2=4))

    def test_separated_clusters_stay_separated(self):
        rng = rng_for(58)
        dim = 8
        a = np.zeros(dim); a[0] = 1.0
        b = -a
        ga = a + 0.15 * rng.normal(size=(10, dim))
        gb = b + 0.15 * rng.normal(size=(10, dim))
        g = gmat(np.vstack([ga, gb]) /
                 np.linalg.norm(np.vstack([ga, gb]), axis=1, keepdims=True))
        qa = a + 0.15 * rng.normal(size=(4, dim))
        q = qmat(qa / np.linalg.norm(qa, axis=1, keepdims=True))
        out = k_reciprocal_rerank(q, g, _initial_rankings(q, g),
                                  RerankParams(k1=8, k2=3, lam=0.3))
        cluster_a = {f"g{i:05d}" for i in range(10)}
        for r in out:
            assert set(r.item_ids[:10]) == cluster_a

    def test_matches_definition_oracle(self):
        rng = rng_for(59)
        for lam in (0.0, 0.3, 1.0):
            q = qmat(unit_rows(rng, 8, 6))
            g = gmat(unit_rows(rng, 40, 6))
            initial = _initial_rankings(q, g)
            params = RerankParams(k1=7, k2=3, lam=lam)
            got = k_reciprocal_rerank(q, g, initial, params)
            initial_rows = [[g.row_of(i) for i in r.item_ids] for r in initial]
            ref = rerank_ref(q.data, g.data, initial_rows, params.k1, params.k2, lam)
            for ranking, pairs in zip(got, ref):
                exp = {f"g{row:05d}": d for row, d in pairs}
                for item, score in ranking.entries():
                    assert (1.0 - score) == pytest.approx(exp[item], abs=1e-6)

    def test_final_distance_bounds(self):
        rng = rng_for(60)
        q = qmat(unit_rows(rng, 5, 6))
        g = gmat(unit_rows(rng, 25, 6))
        out = k_reciprocal_rerank(q, g, _initial_rankings(q, g),
                                  RerankParams(k1=6, k2=2, lam=0.3))
        for r in out:
            dstar = 1.0 - r.scores
            assert np.all(dstar >= -1e-12) and np.all(dstar <= 2.0 + 1e-12)

    def test_jaccard_symmetry_of_encoding(self):
        # the min/max-sum distance used on the encoded vectors is symmetric
        rng = rng_for(61)
        v = rng.uniform(0.0, 1.0, size=(10, 30))
        v[v < 0.6] = 0.0
        for _ in range(50):
            i, j = rng.integers(0, 10, size=2)
            dij = 1.0 - np.minimum(v[i], v[j]).sum() / max(np.maximum(v[i], v[j]).sum(), 1e-300)
            dji = 1.0 - np.minimum(v[j], v[i]).sum() / max(np.maximum(v[j], v[i]).sum(), 1e-300)
            assert abs(dij - dji) <= 1e-9

    def test_threads_agree(self):
        rng = rng_for(62)
        q = qmat(unit_rows(rng, 10, 8))
        g = gmat(unit_rows(rng, 40, 8))
        initial = _initial_rankings(q, g)
        params = RerankParams(k1=8, k2=3, lam=0.3)
        base = k_reciprocal_rerank(q, g, initial, params, threads=1)
        multi = k_reciprocal_rerank(q, g, initial, params, threads=4)
        assert base == multi
        for a, b in zip(base, multi):
            assert np.array_equal(a.scores, b.scores)
