"""Append-only inverted index and the flat (single-layer) search baseline."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels
from .bow import NormState, SparseHistogram

# vectorized exclusion: receives leaf ids, returns a boolean "drop" mask
ExcludeFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MatchResult:
    leaf_id: int
    score: float
    island_id: Optional[int] = None


class GrowArray:
    """Amortized O(1) append buffer over a numpy array."""

    def __init__(self, dtype, capacity: int = 64):
        self._buf = np.empty(capacity, dtype=dtype)
        self.n = 0

    def _reserve(self, extra: int) -> None:
        need = self.n + extra
        if need > self._buf.size:
            grown = np.empty(max(need, 2 * self._buf.size), dtype=self._buf.dtype)
            grown[: self.n] = self._buf[: self.n]
            self._buf = grown

    def append(self, value) -> None:
        self._reserve(1)
        self._buf[self.n] = value
        self.n += 1

    def extend(self, values) -> None:
        values = np.asarray(values, dtype=self._buf.dtype)
        self._reserve(values.size)
        self._buf[self.n : self.n + values.size] = values
        self.n += values.size

    @property
    def view(self) -> np.ndarray:
        return self._buf[: self.n]

    def __len__(self) -> int:
        return self.n


class InvertedIndex:
    """Per-word posting lists of (node, weight), node ids ascending."""

    def __init__(self, n_words: int):
        self.n_words = n_words
        self.start = np.zeros(n_words, np.int64)
        self.length = np.zeros(n_words, np.int64)
        self.cap = np.zeros(n_words, np.int64)
        self._pool_node = np.empty(1024, np.int64)
        self._pool_w = np.empty(1024, np.float64)
        self._used = 0
        self.node_count = 0
        # scratch for scoring; kernels hold the GIL so calls never overlap
        self._acc = np.zeros(256)
        self._touched = np.empty(256, np.int64)
        self._mask = np.zeros(256, dtype=np.bool_)

    def add(self, node: int, h: SparseHistogram) -> None:
        if node != self.node_count:
            raise ValueError("nodes must be added with consecutive ids")
        if h.ids.size and h.ids[-1] >= self.n_words:
            raise ValueError("word id outside vocabulary")
        self._pool_node, self._pool_w, self._used = _kernels.postings_append(
            self.start, self.length, self.cap, self._pool_node, self._pool_w,
            self._used, node, h.ids, h.weights,
        )
        self.node_count += 1
        if self.node_count > self._acc.size:
            size = 2 * self._acc.size
            self._acc = np.zeros(size)
            self._touched = np.empty(size, np.int64)
            self._mask = np.zeros(size, dtype=np.bool_)

    def posting(self, word: int) -> tuple[np.ndarray, np.ndarray]:
        s, n = self.start[word], self.length[word]
        return self._pool_node[s : s + n].copy(), self._pool_w[s : s + n].copy()

    def postings_cost(self, q_ids: np.ndarray) -> int:
        q_ids = q_ids[q_ids < self.n_words]
        return int(self.length[q_ids].sum())

    def score(self, q: SparseHistogram, min_score: float = 0.0, mask: Optional[np.ndarray] = None):
        """(nodes, scores) of nodes sharing a word with ``q`` and scoring >= min_score.

        Node order is unspecified.
        """
        m = _NO_MASK if mask is None else mask
        return _kernels.score_inverted(
            q.ids, q.weights, self.start, self.length, self._pool_node,
            self._pool_w, self._acc, self._touched, m, float(min_score),
        )


_NO_MASK = np.zeros(0, dtype=np.bool_)


class NodeStore:
    """Node histograms in CSR form plus the inverted index over them."""

    def __init__(self, n_words: int):
        self.n_words = n_words
        self.indptr = GrowArray(np.int64)
        self.indptr.append(0)
        self.words = GrowArray(np.int64, 1024)
        self.weights = GrowArray(np.float64, 1024)
        self.states: list[NormState] = []
        self.inverted = InvertedIndex(n_words)
        self._dense = np.zeros(n_words)

    def __len__(self) -> int:
        return len(self.states)

    def add(self, h: SparseHistogram) -> int:
        node = len(self.states)
        self.inverted.add(node, h)
        self.words.extend(h.ids)
        self.weights.extend(h.weights)
        self.indptr.append(self.words.n)
        self.states.append(h.state)
        return node

    def histogram(self, node: int) -> SparseHistogram:
        ip = self.indptr.view
        s, e = ip[node], ip[node + 1]
        return SparseHistogram(self.words.view[s:e], self.weights.view[s:e], self.states[node])

    def nnz(self, nodes: np.ndarray) -> int:
        ip = self.indptr.view
        return int((ip[nodes + 1] - ip[nodes]).sum())

    def score_all(self, q: SparseHistogram, min_score: float = 0.0):
        return self.inverted.score(q, min_score)

    def score_candidates(self, q: SparseHistogram, cand: np.ndarray, min_score: float = 0.0):
        """Score only ``cand`` nodes; returns (nodes, scores) with score > 0 and >= min_score.

        Picks whichever of posting traversal or direct histogram walk touches
        fewer entries; both give identical scores.
        """
        inv = self.inverted
        return _kernels.score_subset(
            q.ids, q.weights, inv.start, inv.length, inv._pool_node, inv._pool_w,
            inv._acc, inv._touched, inv._mask, self._dense, cand,
            self.indptr.view, self.words.view, self.weights.view, float(min_score),
        )


def rank(ids: np.ndarray, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sort by score descending, then id ascending."""
    order = np.lexsort((ids, -scores))
    return ids[order], scores[order]


def to_matches(ids: np.ndarray, scores: np.ndarray) -> list[MatchResult]:
    return [MatchResult(int(i), float(s)) for i, s in zip(ids, scores)]


class LeafMap:
    """External leaf id <-> internal position."""

    def __init__(self):
        self.ids = GrowArray(np.int64)
        self._pos: dict[int, int] = {}

    def add(self, leaf_id: int) -> int:
        leaf_id = int(leaf_id)
        if leaf_id in self._pos:
            raise ValueError(f"duplicate leaf id {leaf_id}")
        self._pos[leaf_id] = self.ids.n
        self.ids.append(leaf_id)
        return self.ids.n - 1

    def __contains__(self, leaf_id) -> bool:
        return int(leaf_id) in self._pos

    def position(self, leaf_id: int) -> int:
        return self._pos[int(leaf_id)]

    def __len__(self) -> int:
        return self.ids.n


def apply_exclusion(ids, scores, exclude: Optional[ExcludeFn]):
    if exclude is None or ids.size == 0:
        return ids, scores
    drop = np.asarray(exclude(ids), dtype=bool)
    return ids[~drop], scores[~drop]


class FlatIndex:
    """Linear search over all stored histograms through one inverted index."""

    def __init__(self, n_words: int):
        self.n_words = n_words
        self.store = NodeStore(n_words)
        self.leaves = LeafMap()

    @property
    def size(self) -> int:
        return len(self.leaves)

    def insert(self, leaf_id: int, h: SparseHistogram, meta=None) -> None:
        if leaf_id in self.leaves:
            raise ValueError(f"duplicate leaf id {leaf_id}")
        self.store.add(h)
        self.leaves.add(leaf_id)

    def histogram(self, leaf_id: int) -> SparseHistogram:
        return self.store.histogram(self.leaves.position(leaf_id))

    def search(self, q: SparseHistogram, tau: float, exclude: Optional[ExcludeFn] = None):
        """Leaves with score >= tau as ranked (ids, scores) arrays."""
        nodes, scores = self.store.score_all(q, tau)
        ids = self.leaves.ids.view[nodes]
        ids, scores = apply_exclusion(ids, scores, exclude)
        return rank(ids, scores)

    def query(self, q: SparseHistogram, tau: float, exclude: Optional[ExcludeFn] = None) -> list[MatchResult]:
        return to_matches(*self.search(q, tau, exclude))

    def search_topk(self, q: SparseHistogram, k: int, exclude: Optional[ExcludeFn] = None):
        nodes, scores = self.store.score_all(q)
        ids = self.leaves.ids.view[nodes]
        ids, scores = apply_exclusion(ids, scores, exclude)
        ids, scores = rank(ids, scores)
        return ids[:k], scores[:k]

    def query_topk(self, q: SparseHistogram, k: int, exclude: Optional[ExcludeFn] = None) -> list[MatchResult]:
        return to_matches(*self.search_topk(q, k, exclude))
