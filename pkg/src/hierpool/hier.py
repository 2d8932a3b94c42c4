"""Hierarchical pooling index: one inverted index per layer, pruned top-down search."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .bow import NormState, PoolingMode, SparseHistogram, intersection, pool
from .flat import (
    ExcludeFn,
    GrowArray,
    LeafMap,
    MatchResult,
    NodeStore,
    apply_exclusion,
    rank,
    to_matches,
)

INDEX_FORMAT = "hierpool-index"
INDEX_VERSION = 1

_STRUCT_RE = re.compile(r"^d(\d+)b(\d+)-(mean|sum|max)$")


@dataclass(frozen=True)
class Topology:
    """Fixed tree shape: ``depth`` layers including leaves, ``branching`` children per parent.

    ``layer_scale`` multiplies the threshold per layer (leaves first) and
    defaults to 1.0 everywhere.
    """

    depth: int
    branching: int
    pooling: PoolingMode = PoolingMode.MEAN
    layer_scale: Optional[tuple] = None

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.branching < 2:
            raise ValueError("branching must be >= 2")
        object.__setattr__(self, "pooling", PoolingMode(self.pooling))
        scale = self.layer_scale
        if scale is None:
            scale = (1.0,) * self.depth
        scale = tuple(float(s) for s in scale)
        if len(scale) != self.depth:
            raise ValueError("layer_scale needs one entry per layer")
        object.__setattr__(self, "layer_scale", scale)

    @property
    def name(self) -> str:
        return f"d{self.depth}b{self.branching}-{self.pooling.value}"

    @classmethod
    def parse(cls, text: str) -> "Topology":
        """Parse the ``d<depth>b<branching>-<pooling>`` notation, e.g. ``d2b8-mean``."""
        m = _STRUCT_RE.match(text.strip())
        if not m:
            raise ValueError(f"bad structure {text!r}; expected e.g. d2b8-mean")
        return cls(int(m.group(1)), int(m.group(2)), PoolingMode(m.group(3)))


@dataclass(frozen=True, eq=False)
class Pose:
    t: int
    translation: np.ndarray
    rotation: Optional[np.ndarray] = None

    def __post_init__(self):
        tr = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "translation", tr)
        if self.rotation is not None:
            r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
            if not np.allclose(r @ r.T, np.eye(3), atol=1e-6):
                raise ValueError("rotation is not orthonormal")
            object.__setattr__(self, "rotation", r)


@dataclass
class LeafMeta:
    timestamp: Optional[int] = None
    pose: Optional[Pose] = None
    label: Optional[int] = None


@dataclass
class _Layer:
    store: NodeStore
    # children of this layer's nodes in the layer below (unused for leaves)
    child_ptr: GrowArray = field(default_factory=lambda: _ptr0())
    child_idx: GrowArray = field(default_factory=lambda: GrowArray(np.int64))
    # nodes [0, covered) already have a finalized parent
    covered: int = 0

    def __len__(self):
        return len(self.store)


def _ptr0() -> GrowArray:
    g = GrowArray(np.int64)
    g.append(0)
    return g


class HierIndex:
    """Layered pooling tree over a stream of leaf histograms.

    Leaves are inserted in increasing id order. Whenever ``branching``
    consecutive uncovered nodes exist at a layer they are pooled into a new
    parent one layer up; finalized nodes never change. Leaves (or inner
    nodes) still waiting for a complete window are scored directly at their
    own layer during search.
    """

    def __init__(self, n_words: int, topology: Topology, *, streaming: bool = True):
        self.n_words = n_words
        self.topology = topology
        self.streaming = streaming
        self.layers = [_Layer(NodeStore(n_words)) for _ in range(topology.depth)]
        self.leaves = LeafMap()
        self.meta: list[LeafMeta] = []
        self.vocab_digest: Optional[str] = None

    @property
    def size(self) -> int:
        return len(self.leaves)

    @property
    def pooling(self) -> PoolingMode:
        return self.topology.pooling

    def layer_sizes(self) -> list[int]:
        """Node count per layer, leaves first."""
        return [len(layer) for layer in self.layers]

    def frontier(self, layer: int = 0) -> np.ndarray:
        """Ids of nodes at ``layer`` without a finalized parent (leaf ids for layer 0)."""
        lay = self.layers[layer]
        nodes = np.arange(lay.covered, len(lay))
        if layer == 0:
            return self.leaves.ids.view[nodes].copy()
        return nodes

    def node_histogram(self, layer: int, node: int) -> SparseHistogram:
        return self.layers[layer].store.histogram(node)

    def children(self, layer: int, node: int) -> np.ndarray:
        lay = self.layers[layer]
        ptr = lay.child_ptr.view
        return lay.child_idx.view[ptr[node] : ptr[node + 1]].copy()

    def histogram(self, leaf_id: int) -> SparseHistogram:
        return self.layers[0].store.histogram(self.leaves.position(leaf_id))

    # construction

    def insert(self, leaf_id: int, h: SparseHistogram, meta: Optional[LeafMeta] = None) -> None:
        if not self.streaming:
            raise ValueError("grouped index does not accept streaming inserts")
        if self.size and leaf_id <= self.leaves.ids.view[-1]:
            raise ValueError(f"out-of-order leaf id {leaf_id}")
        self._add_leaf(leaf_id, h, meta)
        b = self.topology.branching
        for lvl in range(self.topology.depth - 1):
            lay = self.layers[lvl]
            if len(lay) - lay.covered < b:
                break
            kids = np.arange(lay.covered, lay.covered + b)
            self._add_parent(lvl + 1, kids)
            lay.covered += b

    def _add_leaf(self, leaf_id, h, meta):
        self.leaves.add(leaf_id)
        self.layers[0].store.add(h)
        self.meta.append(meta if meta is not None else LeafMeta(timestamp=int(leaf_id)))

    def _add_parent(self, lvl: int, kids: np.ndarray) -> int:
        below = self.layers[lvl - 1].store
        parent = pool([below.histogram(int(k)) for k in kids], self.pooling)
        lay = self.layers[lvl]
        node = lay.store.add(parent)
        lay.child_idx.extend(kids)
        lay.child_ptr.append(lay.child_idx.n)
        return node

    # search

    def _top(self) -> int:
        for lvl in range(len(self.layers) - 1, -1, -1):
            if len(self.layers[lvl]):
                return lvl
        return 0

    def _candidates(self, lvl: int, parents: np.ndarray) -> np.ndarray:
        """Children of ``parents`` (at lvl+1) plus uncovered nodes at ``lvl``."""
        up = self.layers[lvl + 1]
        lay = self.layers[lvl]
        return _kernels.gather_children(parents, up.child_ptr.view, up.child_idx.view,
                                        lay.covered, len(lay))

    def search(self, q: SparseHistogram, tau: float, exclude: Optional[ExcludeFn] = None):
        """Greedy breadth-first threshold search; returns ranked (leaf ids, scores)."""
        if tau < 0:
            raise ValueError("tau must be >= 0")
        scale = self.topology.layer_scale
        top = self._top()
        nodes, scores = self.layers[top].store.score_all(q, tau * scale[top])
        for lvl in range(top - 1, -1, -1):
            cand = self._candidates(lvl, nodes)
            nodes, scores = self.layers[lvl].store.score_candidates(q, cand, tau * scale[lvl])
        ids = self.leaves.ids.view[nodes]
        ids, scores = apply_exclusion(ids, scores, exclude)
        return rank(ids, scores)

    def query(self, q: SparseHistogram, tau: float, exclude: Optional[ExcludeFn] = None) -> list[MatchResult]:
        return to_matches(*self.search(q, tau, exclude))

    def search_topk(self, q: SparseHistogram, k_keep: int = 10, k_return: int = 10,
                    exclude: Optional[ExcludeFn] = None):
        """Descend only into the ``k_keep`` best nodes per layer; return the best leaves."""
        if k_keep < 1 or k_return < 1:
            raise ValueError("k_keep and k_return must be >= 1")
        top = self._top()
        nodes, scores = self.layers[top].store.score_all(q)
        for lvl in range(top - 1, -1, -1):
            nodes, scores = rank(nodes, scores)
            cand = self._candidates(lvl, nodes[:k_keep])
            nodes, scores = self.layers[lvl].store.score_candidates(q, cand)
        ids = self.leaves.ids.view[nodes]
        ids, scores = apply_exclusion(ids, scores, exclude)
        ids, scores = rank(ids, scores)
        return ids[:k_return], scores[:k_return]

    def query_topk(self, q: SparseHistogram, k_keep: int = 10, k_return: int = 10,
                   exclude: Optional[ExcludeFn] = None) -> list[MatchResult]:
        return to_matches(*self.search_topk(q, k_keep, k_return, exclude))

    # persistence

    def save(self, path) -> None:
        header = {
            "format": INDEX_FORMAT,
            "version": INDEX_VERSION,
            "n_words": self.n_words,
            "depth": self.topology.depth,
            "branching": self.topology.branching,
            "pooling": self.pooling.value,
            "layer_scale": list(self.topology.layer_scale),
            "streaming": self.streaming,
            "vocab_digest": self.vocab_digest,
            "covered": [lay.covered for lay in self.layers],
            "states": [[s.value for s in lay.store.states] for lay in self.layers],
        }
        arrays = {"leaf_ids": self.leaves.ids.view}
        for i, lay in enumerate(self.layers):
            st = lay.store
            arrays[f"l{i}_indptr"] = st.indptr.view
            arrays[f"l{i}_words"] = st.words.view
            arrays[f"l{i}_weights"] = st.weights.view
            arrays[f"l{i}_child_ptr"] = lay.child_ptr.view
            arrays[f"l{i}_child_idx"] = lay.child_idx.view
        ts, lab, tr, rot = [], [], [], []
        for m in self.meta:
            ts.append(-1 if m.timestamp is None else m.timestamp)
            lab.append(-1 if m.label is None else m.label)
            if m.pose is None:
                tr.append(np.full(3, np.nan))
                rot.append(np.full((3, 3), np.nan))
            else:
                tr.append(m.pose.translation)
                rot.append(np.full((3, 3), np.nan) if m.pose.rotation is None else m.pose.rotation)
        arrays["meta_timestamp"] = np.array(ts, np.int64)
        arrays["meta_label"] = np.array(lab, np.int64)
        arrays["meta_translation"] = np.array(tr, np.float64).reshape(-1, 3)
        arrays["meta_rotation"] = np.array(rot, np.float64).reshape(-1, 3, 3)
        with open(path, "wb") as f:
            np.savez(f, header=np.array(json.dumps(header, sort_keys=True)), **arrays)

    @classmethod
    def load(cls, path) -> "HierIndex":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            if header.get("format") != INDEX_FORMAT:
                raise ValueError(f"{path}: not an index file")
            if header["version"] > INDEX_VERSION:
                raise ValueError(f"{path}: unsupported index version {header['version']}")
            topo = Topology(header["depth"], header["branching"], header["pooling"],
                            tuple(header["layer_scale"]))
            idx = cls(header["n_words"], topo, streaming=header["streaming"])
            idx.vocab_digest = header["vocab_digest"]
            for i, lay in enumerate(idx.layers):
                ip, wd, wt = z[f"l{i}_indptr"], z[f"l{i}_words"], z[f"l{i}_weights"]
                states = header["states"][i]
                for n in range(len(states)):
                    lay.store.add(SparseHistogram(wd[ip[n]:ip[n + 1]], wt[ip[n]:ip[n + 1]], states[n]))
                lay.child_ptr = _ptr0()
                lay.child_ptr.extend(z[f"l{i}_child_ptr"][1:])
                lay.child_idx.extend(z[f"l{i}_child_idx"])
                lay.covered = header["covered"][i]
            tr, rot = z["meta_translation"], z["meta_rotation"]
            for j, leaf in enumerate(z["leaf_ids"]):
                idx.leaves.add(int(leaf))
                ts, lab = int(z["meta_timestamp"][j]), int(z["meta_label"][j])
                pose = None
                if not np.isnan(tr[j]).any():
                    r = None if np.isnan(rot[j]).any() else rot[j]
                    pose = Pose(ts, tr[j], r)
                idx.meta.append(LeafMeta(None if ts < 0 else ts, pose, None if lab < 0 else lab))
        return idx


def build_grouped(
    leaves: Sequence[tuple],
    n_words: int,
    strategy: str = "label-random",
    group_size: int = 16,
    pooling: PoolingMode | str = PoolingMode.MEAN,
    seed: int = 0,
) -> HierIndex:
    """Three-layer index: leaves, one pooled node per label, groups of label nodes.

    ``leaves`` holds (leaf_id, histogram, label) triples. Top-layer grouping
    is either ``label-random`` (seeded shuffle, consecutive blocks) or
    ``label-affinity`` (greedy: lowest unassigned node plus its most
    intersecting unassigned neighbours).
    """
    if group_size < 2:
        raise ValueError("group size must be >= 2")
    if strategy not in ("label-random", "label-affinity"):
        raise ValueError(f"unknown grouping strategy {strategy!r}")
    if any(lab is None for _, _, lab in leaves):
        raise ValueError("missing labels")
    pooling = PoolingMode(pooling)
    idx = HierIndex(n_words, Topology(3, group_size, pooling), streaming=False)
    for leaf_id, h, lab in leaves:
        idx._add_leaf(leaf_id, h, LeafMeta(timestamp=int(leaf_id), label=int(lab)))

    labels = np.array([int(lab) for _, _, lab in leaves], dtype=np.int64)
    for lab in np.unique(labels):
        idx._add_parent(1, np.flatnonzero(labels == lab))
    idx.layers[0].covered = len(idx.layers[0])

    n_groups = len(idx.layers[1])
    if strategy == "label-random":
        order = np.random.default_rng(seed).permutation(n_groups)
        blocks = [np.sort(order[i : i + group_size]) for i in range(0, n_groups, group_size)]
    else:
        blocks = _affinity_blocks(idx.layers[1].store, group_size)
    for blk in blocks:
        idx._add_parent(2, np.asarray(blk, dtype=np.int64))
    idx.layers[1].covered = n_groups
    return idx


def _affinity_blocks(store: NodeStore, group_size: int) -> list[np.ndarray]:
    n = len(store)
    affinity = np.zeros((n, n))
    for i in range(n):
        nodes, scores = store.score_all(store.histogram(i))
        affinity[i, nodes] = scores
    assigned = np.zeros(n, dtype=bool)
    blocks = []
    for seed_node in range(n):
        if assigned[seed_node]:
            continue
        assigned[seed_node] = True
        free = np.flatnonzero(~assigned)
        # stable sort on -affinity keeps lowest id first among ties
        best = free[np.argsort(-affinity[seed_node, free], kind="stable")[: group_size - 1]]
        assigned[best] = True
        blocks.append(np.sort(np.concatenate([[seed_node], best])))
    return blocks


def pairwise_affinity(hists: Sequence[SparseHistogram]) -> np.ndarray:
    """Dense intersection matrix; slow reference used for checking groupings."""
    n = len(hists)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = intersection(hists[i], hists[j])
    return out


def island_arrays(ids: np.ndarray, scores: np.ndarray, gap: int):
    """Island id per match; islands are runs of leaf ids chained by steps <= gap.

    Island ids follow ascending leaf id.
    """
    if gap < 1:
        raise ValueError("gap must be >= 1")
    if ids.size == 0:
        return np.zeros(0, np.int64)
    order = np.argsort(ids, kind="stable")
    sid = ids[order]
    new = np.empty(sid.size, dtype=bool)
    new[0] = True
    new[1:] = np.diff(sid) > gap
    island_sorted = np.cumsum(new) - 1
    out = np.empty(ids.size, np.int64)
    out[order] = island_sorted
    return out


def island_representatives(ids: np.ndarray, scores: np.ndarray, gap: int):
    """Best-scoring member of each island as ranked (ids, scores)."""
    isl = island_arrays(ids, scores, gap)
    if isl.size == 0:
        return ids, scores
    order = np.lexsort((ids, -scores, isl))
    first = np.ones(order.size, dtype=bool)
    first[1:] = isl[order][1:] != isl[order][:-1]
    rep = order[first]
    return rank(ids[rep], scores[rep])


def group_islands(results: Sequence[MatchResult], gap: int) -> list[MatchResult]:
    """Tag every match with the id of its temporal island."""
    if not results:
        if gap < 1:
            raise ValueError("gap must be >= 1")
        return []
    ids = np.array([r.leaf_id for r in results], np.int64)
    scores = np.array([r.score for r in results])
    isl = island_arrays(ids, scores, gap)
    return [MatchResult(r.leaf_id, r.score, int(i)) for r, i in zip(results, isl)]


def islands_to_representatives(results: Sequence[MatchResult]) -> list[MatchResult]:
    """One match per island: the best member, carrying the island's max score."""
    best: dict[int, MatchResult] = {}
    for r in results:
        cur = best.get(r.island_id)
        if cur is None or (r.score, -r.leaf_id) > (cur.score, -cur.leaf_id):
            best[r.island_id] = r
    return sorted(best.values(), key=lambda r: (-r.score, r.leaf_id))


def make_index(structure: str | Topology | None, n_words: int):
    """``"flat"``/None gives a FlatIndex; anything else a streaming HierIndex."""
    from .flat import FlatIndex

    if structure is None or structure == "flat":
        return FlatIndex(n_words)
    topo = structure if isinstance(structure, Topology) else Topology.parse(structure)
    return HierIndex(n_words, topo)
