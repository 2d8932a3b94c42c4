"""Loop-closure and retrieval evaluation protocols and metrics."""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .bow import IdfTable, SparseHistogram, tfidf_normalize
from .flat import FlatIndex
from .hier import HierIndex, LeafMeta, Topology, build_grouped, island_representatives, make_index


@dataclass(frozen=True)
class LoopClosureProtocolConfig:
    correct_radius_m: float = 15.0
    min_temporal_gap: int = 100
    # None: time queries at the calibrated threshold of the run's own PR curve
    tau: Optional[float] = None
    threshold_sweep: tuple = tuple(np.round(np.arange(0.02, 0.62, 0.02), 4))
    island_gap: int = 3
    timing_repeats: int = 3

    def __post_init__(self):
        if self.correct_radius_m <= 0:
            raise ValueError("correct_radius_m must be > 0")
        if self.min_temporal_gap < 1:
            raise ValueError("min_temporal_gap must be >= 1")
        if self.island_gap < 1:
            raise ValueError("island_gap must be >= 1")
        if self.tau is not None and self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.timing_repeats < 1:
            raise ValueError("timing_repeats must be >= 1")
        sweep = tuple(sorted(float(t) for t in self.threshold_sweep))
        if not sweep or sweep[0] < 0:
            raise ValueError("threshold sweep must be nonempty and nonnegative")
        object.__setattr__(self, "threshold_sweep", sweep)


@dataclass(frozen=True)
class PRPoint:
    tau: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tau: float, tp: int, fp: int, fn: int) -> "PRPoint":
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / (tp + fn) if tp + fn else 1.0
        return cls(float(tau), float(precision), float(recall), int(tp), int(fp), int(fn))


def time_cost_rate(db_sizes, seconds) -> float:
    """Least-squares slope of query time against database size, in ms per 1k images."""
    x = np.asarray(db_sizes, dtype=np.float64)
    y = np.asarray(seconds, dtype=np.float64)
    if x.size != y.size:
        raise ValueError("sizes and times differ in length")
    if x.size < 2 or np.all(x == x[0]):
        raise ValueError("need at least two distinct database sizes")
    xc = x - x.mean()
    slope = float((xc * (y - y.mean())).sum() / (xc * xc).sum())
    rate = slope * 1e6
    if rate < 0:
        warnings.warn(f"negative time-cost rate {rate:.4g} clamped to 0", RuntimeWarning, stacklevel=2)
        rate = 0.0
    return rate


@dataclass
class TimingRecord:
    db_sizes: np.ndarray
    seconds: np.ndarray

    @property
    def rate(self) -> float:
        """ms of extra query time per 1000 stored images."""
        return time_cost_rate(self.db_sizes, self.seconds)

    @property
    def mean_seconds(self) -> float:
        return float(np.mean(self.seconds)) if self.seconds.size else 0.0

    def speedup_over(self, baseline: "TimingRecord") -> float:
        r = self.rate
        return baseline.rate / r if r > 0 else float("inf")

    @classmethod
    def concat(cls, records: Sequence["TimingRecord"]) -> "TimingRecord":
        return cls(np.concatenate([r.db_sizes for r in records]),
                   np.concatenate([r.seconds for r in records]))


def calibrate_threshold(pr: Sequence[PRPoint]) -> float:
    """Smallest swept threshold with zero false alarms (largest one if none qualifies)."""
    if not pr:
        raise ValueError("empty PR table")
    pts = sorted(pr, key=lambda p: p.tau)
    for p in pts:
        if p.fp == 0:
            return p.tau
    warnings.warn("no threshold in the sweep yields zero false alarms; using the largest",
                  RuntimeWarning, stacklevel=2)
    return pts[-1].tau


def _unpack_stream(stream):
    out = []
    for item in stream:
        if isinstance(item, tuple):
            fid, h, pose = item
        else:
            fid, h, pose = item.id, item.hist, item.pose
        if pose is None:
            raise ValueError(f"missing pose for frame {fid}")
        out.append((int(fid), h, pose))
    return out


def normalize_stream(frames, idf: IdfTable):
    """Replace raw counts by TF-IDF weights in (id, hist, pose) items."""
    out = []
    for item in frames:
        if isinstance(item, tuple):
            fid, h, pose = item
        else:
            fid, h, pose = item.id, item.hist, item.pose
        out.append((fid, tfidf_normalize(h, idf), pose))
    return out


def ground_truth(ids: np.ndarray, xyz: np.ndarray, cfg: LoopClosureProtocolConfig) -> np.ndarray:
    """True where an earlier, non-adjacent frame lies within the correctness radius."""
    tree = cKDTree(xyz)
    out = np.zeros(ids.size, dtype=bool)
    for row, near in enumerate(tree.query_ball_point(xyz, cfg.correct_radius_m)):
        near = np.asarray(near, dtype=np.int64)
        out[row] = bool(np.any(ids[near] < ids[row] - cfg.min_temporal_gap))
    return out


def _exclude_near(t: int, gap: int):
    return lambda ids: np.abs(ids - t) <= gap


def _is_exact(structure) -> bool:
    if structure is None or structure == "flat":
        return True
    topo = structure if isinstance(structure, Topology) else Topology.parse(structure)
    return topo.pooling.is_upper_bound or topo.depth == 1


@dataclass
class LoopBenchmarkResult:
    structure: str
    pr: list
    timing: TimingRecord
    tau: float
    # per-query (leaf ids, scores) at the operating threshold
    matches: list = field(default_factory=list)


def _structure_name(structure) -> str:
    if structure is None or structure == "flat":
        return "flat"
    return structure.name if isinstance(structure, Topology) else str(structure)


def run_loop_benchmark(stream, structure, config: LoopClosureProtocolConfig, n_words: int) -> LoopBenchmarkResult:
    """Insert-and-query loop-closure protocol.

    Every frame first queries the database of earlier frames (temporally
    adjacent ones excluded), then is inserted. Matches are lumped into
    temporal islands; an island is a true positive when its best frame lies
    within ``correct_radius_m`` of the query. PR points for exact structures
    come from one pass at the lowest threshold; mean pooling prunes
    differently per threshold, so it is re-run for each one. Timing is a
    separate pass at ``config.tau`` (the calibrated threshold when unset)
    that only wraps the search call.
    """
    frames = _unpack_stream(stream)
    ids = np.array([f[0] for f in frames], dtype=np.int64)
    xyz = np.array([f[2].translation for f in frames])
    row_of = {fid: i for i, fid in enumerate(ids.tolist())}
    gt = ground_truth(ids, xyz, config)
    sweep = config.threshold_sweep
    gap = config.min_temporal_gap

    def outcome(row, hit_ids, hit_scores):
        rep_ids, _ = island_representatives(hit_ids, hit_scores, config.island_gap)
        if rep_ids.size == 0:
            return 0, 0
        rows = np.fromiter((row_of[int(i)] for i in rep_ids), np.int64, rep_ids.size)
        d = np.linalg.norm(xyz[rows] - xyz[row], axis=1)
        tp = int((d <= config.correct_radius_m).sum())
        return tp, rep_ids.size - tp

    counts = np.zeros((len(sweep), 3), np.int64)
    if _is_exact(structure):
        index = make_index(structure, n_words)
        for row, (fid, h, pose) in enumerate(frames):
            hit_ids, hit_scores = index.search(h, sweep[0], _exclude_near(fid, gap))
            for k, tau in enumerate(sweep):
                keep = hit_scores >= tau
                tp, fp = outcome(row, hit_ids[keep], hit_scores[keep])
                counts[k] += (tp, fp, int(gt[row] and tp == 0))
            index.insert(fid, h, LeafMeta(fid, pose))
    else:
        for k, tau in enumerate(sweep):
            index = make_index(structure, n_words)
            for row, (fid, h, pose) in enumerate(frames):
                hit_ids, hit_scores = index.search(h, tau, _exclude_near(fid, gap))
                tp, fp = outcome(row, hit_ids, hit_scores)
                counts[k] += (tp, fp, int(gt[row] and tp == 0))
                index.insert(fid, h, LeafMeta(fid, pose))
    pr = [PRPoint.from_counts(tau, *c) for tau, c in zip(sweep, counts)]
    tau_op = calibrate_threshold(pr) if config.tau is None else float(config.tau)

    sizes = np.zeros(len(frames), np.int64)
    runs = np.zeros((config.timing_repeats, len(frames)))
    matches = []
    for rep in range(config.timing_repeats):
        index = make_index(structure, n_words)
        for row, (fid, h, pose) in enumerate(frames):
            excl = _exclude_near(fid, gap)
            t0 = time.perf_counter()
            res = index.search(h, tau_op, excl)
            runs[rep, row] = time.perf_counter() - t0
            sizes[row] = index.size
            if rep == 0:
                matches.append(res)
            index.insert(fid, h, LeafMeta(fid, pose))
    timing = TimingRecord(sizes, np.median(runs, axis=0))
    return LoopBenchmarkResult(_structure_name(structure), pr, timing, tau_op, matches)


@dataclass
class SyntheticQueryReport:
    structure: str
    timing: dict
    detections: dict

    def speedups(self, baseline: "SyntheticQueryReport") -> dict:
        return {k: self.timing[k].speedup_over(baseline.timing[k]) for k in self.timing}

    def mean_time_ratio(self, baseline: "SyntheticQueryReport", cls: str = "overall") -> float:
        return baseline.timing[cls].mean_seconds / self.timing[cls].mean_seconds


def run_synthetic_queries(db_stream, positives, negatives, structure, tau: float, n_words: int,
                          checkpoints: int = 5, repeats: int = 3) -> SyntheticQueryReport:
    """Time positive and negative query sets against a growing database.

    The database is inserted incrementally; at ``checkpoints`` evenly spaced
    sizes every query is timed ``repeats`` times (median kept). Query
    histograms are expected to be normalized already.
    """
    db = [(item[0], item[1]) if isinstance(item, tuple) else (item.id, item.hist) for item in db_stream]
    pos = [q if isinstance(q, SparseHistogram) else q.hist for q in positives]
    neg = [q if isinstance(q, SparseHistogram) else q.hist for q in negatives]
    marks = sorted(set(np.linspace(len(db) / checkpoints, len(db), checkpoints).round().astype(int).tolist()))
    index = make_index(structure, n_words)
    rec = {"positive": ([], []), "negative": ([], [])}
    hits = {"positive": 0, "negative": 0}
    inserted = 0
    for mark in marks:
        while inserted < mark:
            fid, h = db[inserted]
            index.insert(fid, h)
            inserted += 1
        for cls, qs in (("positive", pos), ("negative", neg)):
            for q in qs:
                best = np.inf
                times = []
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    res_ids, _ = index.search(q, tau)
                    times.append(time.perf_counter() - t0)
                best = float(np.median(times))
                rec[cls][0].append(index.size)
                rec[cls][1].append(best)
                if mark == marks[-1] and res_ids.size:
                    hits[cls] += 1
    timing = {cls: TimingRecord(np.array(s, np.int64), np.array(t)) for cls, (s, t) in rec.items()}
    timing["overall"] = TimingRecord.concat([timing["positive"], timing["negative"]])
    return SyntheticQueryReport(_structure_name(structure), timing, hits)


def average_precision(relevant_flags: np.ndarray, n_relevant: int) -> float:
    """AP of one ranked list given per-rank relevance flags."""
    if n_relevant == 0:
        return 1.0
    flags = np.asarray(relevant_flags, dtype=bool)
    if not flags.any():
        return 0.0
    ranks = np.flatnonzero(flags) + 1
    precision_at_hit = np.arange(1, ranks.size + 1) / ranks
    return float(precision_at_hit.sum() / n_relevant)


@dataclass
class RetrievalReport:
    structure: str
    mean_score: float
    mean_query_s: float
    mean_ap: float


def run_retrieval(items, index, k_keep: int = 10, k_return: int = 4, exclude_self: bool = False,
                  repeats: int = 3) -> RetrievalReport:
    """Query every image against ``index``; score = same-label images among the top ``k_return``.

    ``items`` are (image_id, normalized histogram, label). With
    ``exclude_self`` the query image is removed from its own ranking.
    """
    label_of = {int(i): int(lab) for i, _, lab in items}
    group_size: dict[int, int] = {}
    for lab in label_of.values():
        group_size[lab] = group_size.get(lab, 0) + 1
    flat = isinstance(index, FlatIndex)
    name = "flat" if flat else f"grouped-{index.pooling.value}"
    per_pass = []
    scores, aps = [], []
    for rep in range(repeats):
        total = 0.0
        for img, h, lab in items:
            excl = (lambda ids, s=int(img): ids == s) if exclude_self else None
            t0 = time.perf_counter()
            if flat:
                res, _ = index.search_topk(h, k_return, excl)
            else:
                res, _ = index.search_topk(h, k_keep, k_return, excl)
            total += time.perf_counter() - t0
            if rep == 0:
                rel = np.array([label_of[int(r)] == lab for r in res], dtype=bool)
                scores.append(int(rel.sum()))
                n_rel = group_size[lab] - (1 if exclude_self else 0)
                aps.append(average_precision(rel, n_rel))
        per_pass.append(total / max(len(items), 1))
    return RetrievalReport(name, float(np.mean(scores)), float(np.median(per_pass)), float(np.mean(aps)))


def build_retrieval_indices(items, n_words: int, strategy: str, group_size: int, pooling, seed: int = 0):
    """Flat baseline and grouped hierarchy over the same (id, hist, label) items."""
    flat = FlatIndex(n_words)
    for img, h, _ in items:
        flat.insert(img, h)
    hier = build_grouped(items, n_words, strategy, group_size, pooling, seed)
    return flat, hier
