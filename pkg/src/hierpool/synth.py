"""Synthetic loop-closure and grouped-retrieval datasets.

Word ids are split into three ranges: words shared by every scene
(``[0, n_common)``), place words of the database sequence, and place words
of the independent negative sequence. A location is a weighted word set
(mostly place words, some common words) that drifts slowly along the route.
A frame re-detects each location word with probability ``detect_prob``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .bow import SparseHistogram
from .hier import Pose


@dataclass(frozen=True)
class SynthConfig:
    vocab_size: int = 2000
    seq_len: int = 2000
    words_per_frame: int = 50
    loop_schedule: tuple = ()
    rho: float = 0.1
    seed: int = 0
    detect_prob: float = 0.8
    common_share: float = 0.3
    drift: float = 0.05
    common_fraction: float = 0.1
    negative_fraction: float = 0.2
    step_m: float = 0.5
    jitter_m: float = 1.0
    n_positive: int = 20
    n_negative: int = 20

    def __post_init__(self):
        if self.seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        if self.words_per_frame < 1:
            raise ValueError("words_per_frame must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must be in [0, 1]")
        if not 0.0 <= self.drift <= 1.0:
            raise ValueError("drift must be in [0, 1]")
        if not 0.0 < self.detect_prob <= 1.0:
            raise ValueError("detect_prob must be in (0, 1]")
        if not 0.0 <= self.common_share < 1.0:
            raise ValueError("common_share must be in [0, 1)")
        if self.n_common < 1 or self.n_negative_words < 1 or self.n_place_words < self.location_size:
            raise ValueError("vocab_size too small for the word ranges")
        sched = tuple((int(r), int(o)) for r, o in self.loop_schedule)
        for r, o in sched:
            if not 0 <= o < r < self.seq_len:
                raise ValueError(f"loop ({r}, {o}): original must precede revisit inside the sequence")
        object.__setattr__(self, "loop_schedule", sched)

    @property
    def location_size(self) -> int:
        return max(1, int(round(self.words_per_frame / self.detect_prob)))

    @property
    def n_location_common(self) -> int:
        return int(round(self.location_size * self.common_share))

    @property
    def n_common(self) -> int:
        return int(self.vocab_size * self.common_fraction)

    @property
    def n_negative_words(self) -> int:
        return int(self.vocab_size * self.negative_fraction)

    @property
    def n_place_words(self) -> int:
        return self.vocab_size - self.n_common - self.n_negative_words

    @property
    def place_range(self) -> tuple[int, int]:
        return self.n_common, self.n_common + self.n_place_words

    @property
    def negative_range(self) -> tuple[int, int]:
        return self.n_common + self.n_place_words, self.vocab_size


@dataclass(frozen=True)
class Frame:
    id: int
    hist: SparseHistogram
    pose: Optional[Pose] = None


@dataclass(frozen=True)
class SynthQuery:
    id: int
    hist: SparseHistogram
    target: Optional[int] = None
    pose: Optional[Pose] = None


@dataclass
class SynthDataset:
    config: SynthConfig
    frames: list = field(default_factory=list)
    positives: list = field(default_factory=list)
    negatives: list = field(default_factory=list)
    # location word set of each database frame (before sampling)
    location_words: list = field(default_factory=list)


def make_loop_schedule(seq_len: int, n_loops: int, loop_len: int, min_separation: int,
                       seed: int = 0) -> tuple:
    """Per-frame (revisit, original) pairs for ``n_loops`` revisited segments.

    Revisit segments sit in the second half of the sequence and replay an
    original segment at least ``min_separation`` frames earlier. Segments do
    not overlap each other.
    """
    if n_loops == 0:
        return ()
    rng = np.random.default_rng(seed)
    half = seq_len // 2
    slots = (seq_len - half) // n_loops
    if slots < loop_len or half < loop_len:
        raise ValueError("sequence too short for the requested loops")
    pairs = []
    used = np.zeros(seq_len, dtype=bool)
    for i in range(n_loops):
        r0 = half + i * slots + int(rng.integers(0, slots - loop_len + 1))
        hi = r0 - min_separation - loop_len
        if hi < 0:
            raise ValueError("min_separation too large for sequence")
        for _ in range(100):
            o0 = int(rng.integers(0, hi + 1))
            if not used[o0 : o0 + loop_len].any() and not used[r0 : r0 + loop_len].any():
                break
        else:
            raise ValueError("could not place loop segments")
        used[o0 : o0 + loop_len] = True
        used[r0 : r0 + loop_len] = True
        pairs.extend((r0 + k, o0 + k) for k in range(loop_len))
    return tuple(sorted(pairs))


class _Route:
    """Chain of drifting locations; each step re-draws a ``drift`` fraction of words."""

    def __init__(self, cfg: SynthConfig, place_lo: int, place_hi: int, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        n_common = cfg.n_location_common
        n_place = cfg.location_size - n_common
        self.lo = np.r_[np.full(n_place, place_lo), np.zeros(n_common, np.int64)]
        self.hi = np.r_[np.full(n_place, place_hi), np.full(n_common, cfg.n_common)]
        self.ids = rng.integers(self.lo, self.hi)
        self.w = rng.exponential(size=self.ids.size)

    def step(self):
        swap = self.rng.random(self.ids.size) < self.cfg.drift
        self.ids[swap] = self.rng.integers(self.lo[swap], self.hi[swap])
        self.w[swap] = self.rng.exponential(size=int(swap.sum()))

    def location(self):
        return self.ids.copy(), self.w / self.w.sum()


def sample_frame(location, m: int, rho: float, noise_range: tuple[int, int],
                 rng: np.random.Generator, detect_prob: float = 0.8) -> SparseHistogram:
    """One view of a location.

    Each location word is detected with probability ``detect_prob`` and
    counted 1 + Poisson(m * weight) times; each detected word is replaced by
    a uniform word from ``noise_range`` with probability ``rho``.
    """
    ids, p = location
    seen = rng.random(ids.size) < detect_prob
    if not seen.any():
        seen[int(np.argmax(p))] = True
    words = ids[seen].copy()
    counts = 1 + rng.poisson(m * p[seen])
    noisy = rng.random(words.size) < rho
    words[noisy] = rng.integers(noise_range[0], noise_range[1], int(noisy.sum()))
    return SparseHistogram.from_words(np.repeat(words, counts))


def _pose(t: int, x: float, y: float = 0.0) -> Pose:
    return Pose(t, np.array([x, y, 0.0]), np.eye(3))


def synth_generate(cfg: SynthConfig) -> SynthDataset:
    """Database stream with poses plus positive and negative query sets.

    Database frame ``t`` lies at x = t * step_m unless it revisits an earlier
    frame, in which case it reuses that frame's location multinomial and is
    placed within ``jitter_m`` of its position. Positives are fresh samples
    of revisited locations (of random frames when there are no loops);
    negatives come from an independent route over the negative word range.
    """
    rng = np.random.default_rng(cfg.seed)
    m = cfg.words_per_frame
    revisit = dict(cfg.loop_schedule)
    route = _Route(cfg, *cfg.place_range, rng)
    locations = []
    ds = SynthDataset(cfg)
    for t in range(cfg.seq_len):
        if t:
            route.step()
        locations.append(route.location())
    for t in range(cfg.seq_len):
        if t in revisit:
            o = revisit[t]
            loc = locations[o]
            ang = rng.uniform(0, 2 * np.pi)
            rad = cfg.jitter_m * np.sqrt(rng.random())
            pose = _pose(t, o * cfg.step_m + rad * np.cos(ang), rad * np.sin(ang))
            h = sample_frame(loc, m, cfg.rho, cfg.place_range, rng, cfg.detect_prob)
        else:
            loc = locations[t]
            pose = _pose(t, t * cfg.step_m)
            h = sample_frame(loc, m, 0.0, cfg.place_range, rng, cfg.detect_prob)
        ds.location_words.append(np.unique(loc[0]))
        ds.frames.append(Frame(t, h, pose))

    originals = sorted(set(revisit.values()))
    pool_src = np.array(originals) if originals else np.arange(cfg.seq_len)
    base = cfg.seq_len
    for i in range(cfg.n_positive):
        o = int(pool_src[rng.integers(pool_src.size)])
        h = sample_frame(locations[o], m, cfg.rho, cfg.place_range, rng, cfg.detect_prob)
        ds.positives.append(SynthQuery(base + i, h, o, ds.frames[o].pose))

    neg_rng = np.random.default_rng([cfg.seed, 1])
    neg_route = _Route(cfg, *cfg.negative_range, neg_rng)
    n_neg_steps = max(cfg.n_negative * 10, 1)
    pick = set(np.sort(neg_rng.choice(n_neg_steps, size=min(cfg.n_negative, n_neg_steps), replace=False)).tolist())
    base = cfg.seq_len + cfg.n_positive
    for s in range(n_neg_steps):
        if s:
            neg_route.step()
        if s in pick:
            h = sample_frame(neg_route.location(), m, 0.0, cfg.negative_range, neg_rng, cfg.detect_prob)
            ds.negatives.append(SynthQuery(base + len(ds.negatives), h))
    return ds


def synth_grouped(n_groups: int = 500, variants: int = 4, vocab_size: int = 5000,
                  words_per_frame: int = 100, place_words: int = 60, common_words: int = 500,
                  common_mass: float = 0.3, rho: float = 0.65, seed: int = 0):
    """Grouped retrieval data: ``variants`` noisy images of each of ``n_groups`` objects.

    Returns a list of (image_id, raw-count histogram, label); image ids are
    consecutive, labels are group indices.
    """
    rng = np.random.default_rng(seed)
    out = []
    n_common = min(common_words, vocab_size // 2)
    for g in range(n_groups):
        place = rng.integers(n_common, vocab_size, place_words)
        common = rng.integers(0, n_common, max(1, place_words // 3))
        pw, cw = rng.exponential(size=place.size), rng.exponential(size=common.size)
        loc = (np.concatenate([place, common]),
               np.concatenate([pw / pw.sum() * (1 - common_mass), cw / cw.sum() * common_mass]))
        for _ in range(variants):
            h = sample_frame(loc, words_per_frame, rho, (0, vocab_size), rng)
            out.append((len(out), h, g))
    return out


def random_ungrouped(n_images: int, vocab_size: int, words_per_frame: int, variants: int = 4,
                     seed: int = 0):
    """Images with independent random words and arbitrary labels in blocks of ``variants``."""
    rng = np.random.default_rng(seed)
    return [(i, SparseHistogram.from_words(rng.integers(0, vocab_size, words_per_frame)), i // variants)
            for i in range(n_images)]
