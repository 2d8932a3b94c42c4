"""Hierarchical k-means vocabulary over real or binary descriptors."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bow import IdfTable, SparseHistogram

VOCAB_FORMAT = "hierpool-vocab"
VOCAB_VERSION = 1


class ConfigError(ValueError):
    pass


def _as_descriptors(descriptors, kind: Optional[str] = None) -> tuple[np.ndarray, str]:
    """Return (array, kind). uint8 2-D arrays are binary, anything else real."""
    arr = np.asarray(descriptors)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ValueError("descriptors must be a nonempty 2-D array")
    if kind is None:
        kind = "binary" if arr.dtype == np.uint8 else "real"
    if kind == "binary":
        if arr.dtype != np.uint8:
            raise ValueError("binary descriptors must be packed uint8 rows")
        return np.ascontiguousarray(arr), kind
    return np.ascontiguousarray(arr, dtype=np.float64), kind


def _unpack(x: np.ndarray, kind: str) -> np.ndarray:
    # binary rows become 0/1 float rows so Hamming distance = squared Euclidean
    if kind == "binary":
        return np.unpackbits(x, axis=1).astype(np.float64)
    return x


def _sqdist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _centroids(x: np.ndarray, labels: np.ndarray, k: int, kind: str) -> np.ndarray:
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    c = sums / np.maximum(counts, 1.0)[:, None]
    if kind == "binary":
        # bitwise majority, ties to 0
        c = (c > 0.5).astype(np.float64)
    return c


def _kmeans(x: np.ndarray, k: int, kind: str, rng: np.random.Generator, n_iter: int = 20,
            n_init: int = 3):
    """Best of ``n_init`` seeded runs by within-cluster squared distance."""
    best = None
    for _ in range(n_init):
        centers, labels = _kmeans_once(x, k, kind, rng, n_iter)
        cost = float(_sqdist(x, centers)[np.arange(len(x)), labels].sum())
        if best is None or cost < best[0]:
            best = (cost, centers, labels)
    return best[1], best[2]


def _kmeans_once(x: np.ndarray, k: int, kind: str, rng: np.random.Generator, n_iter: int = 20):
    """Lloyd iterations with k-means++ seeding. Returns (centers, labels)."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = _sqdist(x, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = x[idx]
        closest = np.minimum(closest, _sqdist(x, centers[j : j + 1])[:, 0])

    labels = np.argmin(_sqdist(x, centers), axis=1)
    for _ in range(n_iter):
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # re-seed from the farthest point of the largest cluster
            big = int(np.argmax(counts))
            members = np.flatnonzero(labels == big)
            d = _sqdist(x[members], centers[big : big + 1])[:, 0]
            far = members[int(np.argmax(d))]
            if d.max() <= 0:
                break
            centers[j] = x[far]
            labels[far] = j
            counts = np.bincount(labels, minlength=k)
        new_centers = _centroids(x, labels, k, kind)
        new_labels = np.argmin(_sqdist(x, new_centers), axis=1)
        centers = new_centers
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centers, labels


@dataclass(frozen=True, eq=False)
class VocabularyTree:
    """Vocabulary tree stored as flat node arrays.

    Node 0 is the root. ``child_ptr``/``child_idx`` is a CSR list of children
    per node; ``word`` is the word id of a leaf node and -1 for inner nodes.
    Centroids are kept unpacked (one float per bit for binary vocabularies).
    """

    kind: str
    dim: int
    branching: int
    depth: int
    centroids: np.ndarray
    child_ptr: np.ndarray
    child_idx: np.ndarray
    word: np.ndarray
    idf: Optional[IdfTable] = None

    @property
    def n_words(self) -> int:
        return int((self.word >= 0).sum())

    def leaf_centroids(self) -> np.ndarray:
        """Centroids of the leaves, indexed by word id."""
        leaves = np.flatnonzero(self.word >= 0)
        out = np.empty((leaves.size, self.centroids.shape[1]))
        out[self.word[leaves]] = self.centroids[leaves]
        return out

    def with_idf(self, idf: IdfTable) -> "VocabularyTree":
        if idf.n_words != self.n_words:
            raise ValueError("idf table size does not match vocabulary")
        return replace(self, idf=idf)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.kind}:{self.dim}:{self.branching}:{self.depth}".encode())
        for a in (self.centroids, self.child_ptr, self.child_idx, self.word):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]

    def save(self, path) -> None:
        header = {
            "format": VOCAB_FORMAT,
            "version": VOCAB_VERSION,
            "kind": self.kind,
            "dim": self.dim,
            "branching": self.branching,
            "depth": self.depth,
            "n_words": self.n_words,
            "digest": self.digest(),
            "doc_count": self.idf.doc_count if self.idf is not None else None,
        }
        arrays = dict(
            centroids=self.centroids,
            child_ptr=self.child_ptr,
            child_idx=self.child_idx,
            word=self.word,
        )
        if self.idf is not None:
            arrays["idf"] = self.idf.weights
        with open(path, "wb") as f:
            np.savez(f, header=np.array(json.dumps(header, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path) -> "VocabularyTree":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("format") != VOCAB_FORMAT:
                raise ValueError(f"{path}: not a vocabulary file")
            if header["version"] > VOCAB_VERSION:
                raise ValueError(f"{path}: unsupported vocabulary version {header['version']}")
            idf = None
            if "idf" in z.files:
                idf = IdfTable(z["idf"], header["doc_count"])
            return cls(
                kind=header["kind"],
                dim=header["dim"],
                branching=header["branching"],
                depth=header["depth"],
                centroids=z["centroids"],
                child_ptr=z["child_ptr"],
                child_idx=z["child_idx"],
                word=z["word"],
                idf=idf,
            )


def build_vocab(descriptors, k_v: int = 10, L_v: int = 3, seed: int = 0, n_iter: int = 20) -> VocabularyTree:
    """Build a vocabulary tree by recursive k-means.

    Nodes holding fewer than ``k_v`` descriptors, or whose descriptors cannot
    be split, become leaves early.
    """
    if k_v < 2:
        raise ConfigError("branching factor k_v must be >= 2")
    if L_v < 1:
        raise ConfigError("depth L_v must be >= 1")
    x, kind = _as_descriptors(descriptors)
    xu = _unpack(x, kind)
    rng = np.random.default_rng(seed)

    centroids = [_centroids(xu, np.zeros(len(xu), np.int64), 1, kind)[0]]
    children: list[list[int]] = [[]]
    # breadth-first keeps node numbering independent of recursion details
    queue = [(0, np.arange(len(xu)), 0)]
    head = 0
    while head < len(queue):
        node, members, level = queue[head]
        head += 1
        if level >= L_v or members.size < k_v:
            continue
        pts = xu[members]
        if np.all(pts == pts[0]):
            continue
        centers, labels = _kmeans(pts, k_v, kind, rng, n_iter)
        kids = []
        for j in range(k_v):
            sub = members[labels == j]
            if sub.size == 0:
                continue
            kids.append((centers[j], sub))
        if len(kids) < 2:
            continue
        for c, sub in kids:
            centroids.append(c)
            children.append([])
            cid = len(centroids) - 1
            children[node].append(cid)
            queue.append((cid, sub, level + 1))

    n_nodes = len(centroids)
    child_ptr = np.zeros(n_nodes + 1, np.int64)
    child_ptr[1:] = np.cumsum([len(c) for c in children])
    child_idx = np.array([c for cs in children for c in cs], dtype=np.int64)
    word = np.full(n_nodes, -1, np.int64)
    # words numbered in depth-first order of leaves
    next_word = 0
    stack = [0]
    while stack:
        node = stack.pop()
        if not children[node]:
            word[node] = next_word
            next_word += 1
        else:
            stack.extend(reversed(children[node]))
    return VocabularyTree(
        kind=kind,
        dim=int(x.shape[1] * (8 if kind == "binary" else 1)),
        branching=k_v,
        depth=L_v,
        centroids=np.array(centroids),
        child_ptr=child_ptr,
        child_idx=child_idx,
        word=word,
    )


def assign_words(descriptors, v: VocabularyTree) -> np.ndarray:
    """Word id of every descriptor by greedy nearest-centroid descent."""
    x, kind = _as_descriptors(descriptors, v.kind)
    xu = _unpack(x, kind)
    if xu.shape[1] != v.centroids.shape[1]:
        raise ValueError("descriptor length does not match vocabulary")
    node = np.zeros(len(xu), np.int64)
    while True:
        inner = v.word[node] < 0
        if not inner.any():
            break
        for parent in np.unique(node[inner]):
            rows = np.flatnonzero(node == parent)
            kids = v.child_idx[v.child_ptr[parent] : v.child_ptr[parent + 1]]
            # argmin returns the lowest index on ties
            best = np.argmin(_sqdist(xu[rows], v.centroids[kids]), axis=1)
            node[rows] = kids[best]
    return v.word[node]


def quantize(descriptors, v: VocabularyTree) -> SparseHistogram:
    """Raw-count histogram of one frame's descriptors."""
    if len(descriptors) == 0:
        raise ValueError("empty frame")
    return SparseHistogram.from_words(assign_words(descriptors, v))


def compute_idf(corpus: Sequence[SparseHistogram], n_words: int) -> IdfTable:
    """idf_i = ln(D / max(1, n_i)) with n_i the document frequency of word i."""
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    df = np.zeros(n_words, np.int64)
    for h in corpus:
        if len(h) == 0:
            raise ValueError("empty histogram in corpus")
        df[h.ids] += 1
    D = len(corpus)
    return IdfTable(np.log(D / np.maximum(df, 1)), D)
