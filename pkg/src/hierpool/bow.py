"""Sparse bag-of-words histograms, TF-IDF weighting, intersection kernel and pooling."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# weights below this are dropped after every operation
EPS_WEIGHT = 1e-12


class NormState(str, enum.Enum):
    RAW = "raw-counts"
    TFIDF = "tfidf-normalized"
    SUM = "pooled-sum"
    MAX = "pooled-max"
    MEAN = "pooled-mean"


class PoolingMode(str, enum.Enum):
    MEAN = "mean"
    SUM = "sum"
    MAX = "max"

    @property
    def is_upper_bound(self) -> bool:
        """True when pooled scores bound every child's score from above."""
        return self is not PoolingMode.MEAN

    @property
    def norm_state(self) -> NormState:
        return _POOLED_STATE[self]


_POOLED_STATE = {
    PoolingMode.MEAN: NormState.MEAN,
    PoolingMode.SUM: NormState.SUM,
    PoolingMode.MAX: NormState.MAX,
}


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SparseHistogram:
    """Sorted word ids with strictly positive weights.

    ``ids`` is int64 and strictly increasing, ``weights`` float64 and > 0.
    Arrays are made read-only on construction.
    """

    ids: np.ndarray
    weights: np.ndarray
    state: NormState = NormState.RAW

    def __post_init__(self):
        ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if ids.ndim != 1 or ids.shape != w.shape:
            raise ValueError("ids and weights must be 1-D arrays of equal length")
        if ids.size:
            if ids[0] < 0:
                raise ValueError("word ids must be nonnegative")
            if np.any(np.diff(ids) <= 0):
                raise ValueError("word ids must be strictly increasing")
            if not np.all(w > 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be finite and > 0")
        object.__setattr__(self, "ids", _frozen(ids))
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "state", NormState(self.state))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], state=NormState.RAW) -> "SparseHistogram":
        """Build from (word, weight) pairs; repeated words are summed, zeros dropped."""
        pairs = list(pairs)
        if not pairs:
            return cls(np.empty(0, np.int64), np.empty(0), state)
        ids = np.array([p[0] for p in pairs], dtype=np.int64)
        w = np.array([p[1] for p in pairs], dtype=np.float64)
        return cls.from_arrays(ids, w, state)

    @classmethod
    def from_arrays(cls, ids, weights, state=NormState.RAW) -> "SparseHistogram":
        """Like `from_pairs` but for unsorted id/weight arrays."""
        ids = np.asarray(ids, dtype=np.int64)
        w = np.asarray(weights, dtype=np.float64)
        uniq, inv = np.unique(ids, return_inverse=True)
        acc = np.bincount(inv, weights=w, minlength=uniq.size)
        keep = acc > EPS_WEIGHT
        return cls(uniq[keep], acc[keep], state)

    @classmethod
    def from_words(cls, words) -> "SparseHistogram":
        """Raw-count histogram from a list of quantized word ids."""
        words = np.asarray(words, dtype=np.int64)
        uniq, counts = np.unique(words, return_counts=True)
        return cls(uniq, counts.astype(np.float64), NormState.RAW)

    @classmethod
    def from_dense(cls, v, state=NormState.RAW) -> "SparseHistogram":
        v = np.asarray(v, dtype=np.float64)
        nz = np.flatnonzero(v > EPS_WEIGHT)
        return cls(nz, v[nz], state)

    def to_dense(self, n_words: int) -> np.ndarray:
        out = np.zeros(n_words)
        out[self.ids] = self.weights
        return out

    def total(self) -> float:
        return float(self.weights.sum())

    def __len__(self) -> int:
        return int(self.ids.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseHistogram):
            return NotImplemented
        return (
            self.state == other.state
            and np.array_equal(self.ids, other.ids)
            and np.array_equal(self.weights, other.weights)
        )

    def __repr__(self) -> str:
        body = ", ".join(f"({i},{w:g})" for i, w in zip(self.ids[:6], self.weights[:6]))
        more = ", ..." if len(self) > 6 else ""
        return f"SparseHistogram([{body}{more}], {self.state.value})"


@dataclass(frozen=True, eq=False)
class IdfTable:
    weights: np.ndarray
    doc_count: int

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if self.doc_count < 1:
            raise ValueError("doc_count must be positive")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("idf weights must be finite and nonnegative")
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def n_words(self) -> int:
        return int(self.weights.size)


def intersection(q: SparseHistogram, p: SparseHistogram) -> float:
    """Histogram intersection: sum over bins of min(q_i, p_i)."""
    _, iq, ip = np.intersect1d(q.ids, p.ids, assume_unique=True, return_indices=True)
    if iq.size == 0:
        return 0.0
    return float(np.minimum(q.weights[iq], p.weights[ip]).sum())


def pool(children: Sequence[SparseHistogram], mode: PoolingMode | str) -> SparseHistogram:
    """Combine child histograms bin-wise by mean, sum or max.

    The reduction order is fixed by (word, weight), so the result does not
    depend on the order of ``children``.
    """
    mode = PoolingMode(mode)
    if len(children) == 0:
        raise ValueError("empty pool group")
    ids = np.concatenate([c.ids for c in children])
    w = np.concatenate([c.weights for c in children])
    order = np.lexsort((w, ids))
    ids, w = ids[order], w[order]
    uniq, start = np.unique(ids, return_index=True)
    if mode is PoolingMode.MAX:
        out = np.maximum.reduceat(w, start)
    else:
        out = np.add.reduceat(w, start)
        if mode is PoolingMode.MEAN:
            out = out / len(children)
    keep = out > EPS_WEIGHT
    return SparseHistogram(uniq[keep], out[keep], mode.norm_state)


def tfidf_normalize(counts: SparseHistogram, idf: IdfTable) -> SparseHistogram:
    """Weight raw counts by term frequency times idf, then L1-normalize."""
    if counts.state is not NormState.RAW:
        raise ValueError(f"expected raw-counts histogram, got {counts.state.value}")
    if counts.ids.size and counts.ids[-1] >= idf.n_words:
        raise ValueError("word id outside vocabulary")
    tf = counts.weights / counts.weights.sum() if len(counts) else counts.weights
    w = tf * idf.weights[counts.ids]
    keep = w > EPS_WEIGHT
    if not np.any(keep):
        raise ValueError("empty histogram after weighting")
    ids, w = counts.ids[keep], w[keep]
    w = w / w.sum()
    keep = w > EPS_WEIGHT
    return SparseHistogram(ids[keep], w[keep], NormState.TFIDF)
