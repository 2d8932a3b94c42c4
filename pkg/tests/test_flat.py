import numpy as np
import pytest

from datagen import dense_scores, random_db, random_hist
from hierpool.bow import NormState, SparseHistogram
from hierpool.flat import FlatIndex, InvertedIndex, MatchResult, rank

N = 200


def build(db):
    idx = FlatIndex(N)
    for i, h in enumerate(db):
        idx.insert(i, h)
    return idx


def test_insert_postings():
    inv = InvertedIndex(10)
    inv.add(0, SparseHistogram.from_pairs([(1, 0.5), (4, 0.5)], NormState.TFIDF))
    assert [inv.length[w] for w in range(10)] == [0, 1, 0, 0, 1, 0, 0, 0, 0, 0]
    inv.add(1, SparseHistogram.from_pairs([(2, 1.0)], NormState.TFIDF))
    assert inv.length.max() == 1
    nodes, w = inv.posting(4)
    assert list(nodes) == [0] and list(w) == [0.5]


def test_postings_survive_growth():
    inv = InvertedIndex(3)
    for n in range(100):
        inv.add(n, SparseHistogram.from_pairs([(n % 3, float(n + 1))]))
    nodes, w = inv.posting(1)
    assert list(nodes) == list(range(1, 100, 3))
    assert list(w) == [float(n + 1) for n in range(1, 100, 3)]


def test_duplicate_id_rejected():
    idx = build(random_db(3, N))
    with pytest.raises(ValueError, match="duplicate"):
        idx.insert(1, random_db(1, N, seed=9)[0])


def test_self_match_is_one():
    db = random_db(50, N)
    idx = build(db)
    ids, scores = idx.search(db[17], 0.99)
    assert ids[0] == 17
    assert scores[0] == pytest.approx(1.0, abs=1e-12)


def test_tau_zero_equals_dense_brute_force():
    db = random_db(300, N, seed=1)
    idx = build(db)
    rng = np.random.default_rng(2)
    for _ in range(20):
        q = random_hist(rng, N, 20)
        ids, scores = idx.search(q, 0.0)
        ref = dense_scores(q, db, N)
        expect = np.flatnonzero(ref > 0)
        assert sorted(ids.tolist()) == expect.tolist()
        assert np.allclose(scores, ref[ids], atol=1e-9, rtol=0)


def test_tau_above_one_empty():
    db = random_db(40, N)
    idx = build(db)
    assert idx.query(db[3], 1.01) == []


def test_ranking_and_exclusion():
    h = SparseHistogram.from_pairs([(1, 1.0)], NormState.TFIDF)
    idx = FlatIndex(5)
    for i in (4, 2, 7):
        idx.insert(i, h)
    idx.insert(9, SparseHistogram.from_pairs([(1, 0.5), (2, 0.5)], NormState.TFIDF))
    res = idx.query(h, 0.0)
    assert res == [MatchResult(2, 1.0), MatchResult(4, 1.0), MatchResult(7, 1.0), MatchResult(9, 0.5)]
    res = idx.query(h, 0.0, exclude=lambda ids: ids < 5)
    assert [r.leaf_id for r in res] == [7, 9]


def test_topk():
    db = random_db(100, N, seed=4)
    idx = build(db)
    q = db[0]
    ids, scores = idx.search_topk(q, 5)
    ref = dense_scores(q, db, N)
    assert ids.tolist() == np.lexsort((np.arange(100), -ref))[:5].tolist()


def test_rank_ties_by_id():
    ids, scores = rank(np.array([5, 1, 3]), np.array([0.5, 0.5, 0.9]))
    assert ids.tolist() == [3, 1, 5]
