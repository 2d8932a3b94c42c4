import numpy as np
import pytest

from datagen import synth_tfidf
from hierpool.bench import LoopClosureProtocolConfig, calibrate_threshold, run_loop_benchmark
from hierpool.bow import intersection
from hierpool.flat import FlatIndex
from hierpool.synth import SynthConfig, make_loop_schedule, synth_generate, synth_grouped


def test_deterministic():
    cfg = SynthConfig(seq_len=300, loop_schedule=make_loop_schedule(300, 1, 30, 100), seed=4)
    a, b = synth_generate(cfg), synth_generate(cfg)
    assert all(x.hist == y.hist for x, y in zip(a.frames, b.frames))
    assert all(x.hist == y.hist for x, y in zip(a.negatives, b.negatives))
    c = synth_generate(SynthConfig(seq_len=300, seed=5))
    assert any(x.hist != y.hist for x, y in zip(a.frames, c.frames))


def test_config_errors():
    with pytest.raises(ValueError):
        SynthConfig(seq_len=0)
    with pytest.raises(ValueError):
        SynthConfig(rho=1.5)
    with pytest.raises(ValueError):
        SynthConfig(seq_len=10, loop_schedule=((3, 5),))


def test_word_ranges_disjoint():
    ds = synth_generate(SynthConfig(seq_len=200, n_negative=30))
    cfg = ds.config
    lo, hi = cfg.negative_range
    for f in ds.frames:
        assert not np.any((f.hist.ids >= lo) & (f.hist.ids < hi))
    for q in ds.negatives:
        assert np.all((q.hist.ids < cfg.n_common) | (q.hist.ids >= lo))


def test_rho_zero_support_in_location():
    sched = make_loop_schedule(400, 2, 20, 100, seed=1)
    ds = synth_generate(SynthConfig(seq_len=400, loop_schedule=sched, rho=0.0))
    for q in ds.positives:
        assert set(q.hist.ids.tolist()) <= set(ds.location_words[q.target].tolist())
    for r, o in sched:
        assert set(ds.frames[r].hist.ids.tolist()) <= set(ds.location_words[o].tolist())


def test_rho_one_is_chance_level():
    sched = make_loop_schedule(1000, 2, 50, 200, seed=2)
    kw = dict(seq_len=1000, vocab_size=2000, loop_schedule=sched, n_positive=100, n_negative=0)
    ds, db, pos, _ = synth_tfidf(rho=1.0, **kw)
    ds0, db0, pos0, _ = synth_tfidf(rho=0.0, **kw)
    rng = np.random.default_rng(0)
    # Monte-Carlo chance level: the same queries against random database frames
    chance = np.mean([intersection(q, db[int(rng.integers(len(db)))]) for q in pos for _ in range(20)])
    noisy = np.mean([intersection(q, db[s.target]) for q, s in zip(pos, ds.positives)])
    clean = np.mean([intersection(q, db0[s.target]) for q, s in zip(pos0, ds0.positives)])
    assert abs(noisy - chance) < 0.03
    assert clean > 5 * noisy


def test_poses():
    sched = make_loop_schedule(2000, 3, 50, 100, seed=3)
    ds = synth_generate(SynthConfig(seq_len=2000, loop_schedule=sched))
    xyz = np.array([f.pose.translation for f in ds.frames])
    for r, o in sched:
        assert np.linalg.norm(xyz[r] - xyz[o]) <= 15.0
    revisit = {r for r, _ in sched}
    plain = np.array([t for t in range(2000) if t not in revisit])
    # frames on fresh road more than the default temporal gap apart are >= 3 radii apart
    x = xyz[plain, 0]
    far = np.abs(plain[:, None] - plain[None, :]) > 100
    assert np.abs(x[:, None] - x[None, :])[far].min() >= 45.0


def test_negatives_below_calibrated_threshold():
    sched = make_loop_schedule(2000, 4, 60, 300, seed=0)
    ds, db, _, neg = synth_tfidf(seq_len=2000, vocab_size=2000, loop_schedule=sched, n_negative=300)
    stream = [(f.id, h, f.pose) for f, h in zip(ds.frames, db)]
    res = run_loop_benchmark(stream, "flat", LoopClosureProtocolConfig(timing_repeats=1), 2000)
    tau = calibrate_threshold(res.pr)
    idx = FlatIndex(2000)
    for i, h in enumerate(db):
        idx.insert(i, h)
    top = np.array([(idx.search_topk(q, 1)[1][:1].tolist() or [0.0])[0] for q in neg])
    assert np.mean(top < tau) >= 0.99


def test_grouped_generator():
    items = synth_grouped(n_groups=5, variants=4, vocab_size=1000, seed=1)
    assert len(items) == 20
    assert [lab for _, _, lab in items] == [g for g in range(5) for _ in range(4)]
    assert [i for i, _, _ in items] == list(range(20))
