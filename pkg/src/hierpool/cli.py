"""Command-line entry points.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .bench import (LoopClosureProtocolConfig, build_retrieval_indices, normalize_stream,
                    run_loop_benchmark, run_retrieval, run_synthetic_queries)
from .bow import tfidf_normalize
from .hier import Topology
from .synth import SynthConfig, make_loop_schedule, synth_generate, synth_grouped
from .vocab import ConfigError, VocabularyTree, build_vocab, compute_idf, quantize


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_sweep(text: str) -> tuple:
    """``a:b:step`` -> thresholds a, a+step, ... up to and including b."""
    try:
        a, b, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"bad --tau-sweep {text!r}; expected a:b:step") from None
    if step <= 0 or b < a or a < 0:
        raise ConfigError("--tau-sweep needs 0 <= a <= b and step > 0")
    n = int(np.floor((b - a) / step + 1e-9)) + 1
    return tuple(float(v) for v in np.round(a + step * np.arange(n), 10))


def structures(args) -> list[str]:
    """'flat' followed by the requested hierarchical configurations, without repeats."""
    out = ["flat"]
    for p in args.pooling or []:
        out.append(Topology(args.depth, args.branching, p).name)
    for s in args.structure or []:
        out.append("flat" if s == "flat" else Topology.parse(s).name)
    return list(dict.fromkeys(out))


def _pooling_of(name: str) -> str:
    return "none" if name == "flat" else Topology.parse(name).pooling.value


def run_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


# commands

def cmd_vocab_build(args) -> int:
    desc = io.read_descriptors(args.descriptors)
    vocab = build_vocab(desc, args.k_v, args.l_v, args.seed)
    vocab.save(args.out)
    print(f"{vocab.n_words} words -> {args.out}")
    return 0


def cmd_quantize(args) -> int:
    vocab = VocabularyTree.load(_existing(args.vocab))
    frames = []
    for i, path in enumerate(args.descriptors):
        frames.append((i, quantize(io.read_descriptors(path), vocab)))
    io.write_bow(args.out, frames)
    print(f"{len(frames)} frames -> {args.out}")
    return 0


def _existing(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"file not found: {p}")
    return p


def _loop_config(args) -> LoopClosureProtocolConfig:
    return LoopClosureProtocolConfig(
        correct_radius_m=args.radius_m,
        min_temporal_gap=args.min_gap,
        tau=args.tau,
        threshold_sweep=parse_sweep(args.tau_sweep),
        timing_repeats=args.repeats,
    )


def cmd_bench_loop(args) -> int:
    try:
        cfg = _loop_config(args)
        names = structures(args)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    frames = io.read_bow(args.bow)
    poses = io.read_poses(args.poses)
    if len(frames) != len(poses):
        raise io.DataError(f"frame count mismatch: {len(frames)} BoW frames, {len(poses)} poses")
    n_words = 1 + max(int(h.ids[-1]) for _, h in frames)
    idf = compute_idf([h for _, h in frames], n_words)
    try:
        stream = normalize_stream([(fid, h, p) for (fid, h), p in zip(frames, poses)], idf)
    except ValueError as e:
        raise io.DataError(str(e)) from None

    results = {}
    for name in names:
        # without --tau every structure is timed at flat's calibrated threshold
        run_cfg = cfg if cfg.tau is not None or name == "flat" else \
            LoopClosureProtocolConfig(**{**asdict(cfg), "tau": results["flat"].tau})
        results[name] = run_loop_benchmark(stream, name, run_cfg, n_words)
        print(f"{name}: tau {results[name].tau:.3f}", file=sys.stderr)
    write_loop_reports(Path(args.out), results, run_config(args))
    return 0


def write_loop_reports(out: Path, results: dict, config: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    pr_rows, timing_rows, summary = [], [], []
    base_rate = results["flat"].timing.rate
    for name, r in results.items():
        pooling = _pooling_of(name)
        for p in r.pr:
            pr_rows.append((name, pooling, p.tau, p.precision, p.recall, p.tp, p.fp, p.fn))
        for size, sec in zip(r.timing.db_sizes, r.timing.seconds):
            timing_rows.append((name, pooling, size, sec))
        op = min(r.pr, key=lambda p: abs(p.tau - r.tau))
        rate = r.timing.rate
        speedup = base_rate / rate if rate > 0 else float("inf")
        summary.append((name, pooling, rate, speedup, r.tau, op.precision, op.recall))
    io.write_report(out / "pr_curve.csv",
                    ("structure", "pooling", "tau", "precision", "recall", "tp", "fp", "fn"), pr_rows, config)
    io.write_report(out / "timing.csv", ("structure", "pooling", "db_size", "seconds"), timing_rows, config)
    io.write_report(out / "summary.csv",
                    ("structure", "pooling", "rate_ms_per_1k", "speedup", "tau", "precision", "recall"),
                    summary, config)


def _synth_config(args, **extra) -> SynthConfig:
    try:
        sched = ()
        if args.loops:
            sched = make_loop_schedule(args.frames, args.loops, args.loop_len, args.min_gap, args.seed)
        return SynthConfig(vocab_size=args.vocab_size, seq_len=args.frames, words_per_frame=args.words_per_frame,
                           loop_schedule=sched, rho=args.rho, seed=args.seed, **extra)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def cmd_bench_synth(args) -> int:
    try:
        names = structures(args)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    cfg = _synth_config(args, n_positive=args.n_positive, n_negative=args.n_negative)
    ds = synth_generate(cfg)
    idf = compute_idf([f.hist for f in ds.frames], cfg.vocab_size)
    db = [(f.id, tfidf_normalize(f.hist, idf)) for f in ds.frames]
    pos = [tfidf_normalize(q.hist, idf) for q in ds.positives]
    neg = [tfidf_normalize(q.hist, idf) for q in ds.negatives]
    tau = 0.2 if args.tau is None else args.tau
    reports = {n: run_synthetic_queries(db, pos, neg, n, tau, cfg.vocab_size, args.checkpoints, args.repeats)
               for n in names}
    base = reports["flat"]
    timing_rows, summary = [], []
    for name, r in reports.items():
        pooling = _pooling_of(name)
        speed = r.speedups(base)
        for cls in ("positive", "negative"):
            t = r.timing[cls]
            timing_rows.extend((name, pooling, cls, s, sec) for s, sec in zip(t.db_sizes, t.seconds))
        hits = dict(r.detections, overall=sum(r.detections.values()))
        for cls in ("positive", "negative", "overall"):
            t = r.timing[cls]
            summary.append((name, pooling, cls, t.rate, speed[cls], t.mean_seconds * 1e3,
                            r.mean_time_ratio(base, cls), hits[cls]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = run_config(args)
    io.write_report(out / "timing.csv", ("structure", "pooling", "query_class", "db_size", "seconds"),
                    timing_rows, config)
    io.write_report(out / "summary.csv",
                    ("structure", "pooling", "query_class", "rate_ms_per_1k", "speedup", "mean_query_ms",
                     "mean_time_ratio", "detections"), summary, config)
    return 0


def cmd_retrieval(args) -> int:
    frames = io.read_bow(args.bow)
    labels = io.read_labels(args.labels)
    missing = [fid for fid, _ in frames if fid not in labels]
    if missing:
        raise io.DataError(f"missing labels for {len(missing)} frames (first: {missing[0]})")
    n_words = 1 + max(int(h.ids[-1]) for _, h in frames)
    idf = compute_idf([h for _, h in frames], n_words)
    try:
        items = [(fid, tfidf_normalize(h, idf), labels[fid]) for fid, h in frames]
    except ValueError as e:
        raise io.DataError(str(e)) from None
    pooling = (args.pooling or ["mean"])[0]
    flat, hier = build_retrieval_indices(items, n_words, args.group_strategy, args.group_size, pooling, args.seed)
    rows = []
    base = None
    for index in (flat, hier):
        r = run_retrieval(items, index, args.topk_keep, args.topk_return, args.exclude_self, args.repeats)
        base = base or r
        row = [r.structure, "none" if index is flat else pooling, r.mean_score, r.mean_query_s * 1e3,
               base.mean_query_s / r.mean_query_s]
        if args.map:
            row.append(r.mean_ap)
        rows.append(row)
        print(f"{r.structure}: score {r.mean_score:.3f}", file=sys.stderr)
    cols = ["structure", "pooling", "score", "mean_query_ms", "speedup"] + (["mAP"] if args.map else [])
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    io.write_report(args.out, cols, rows, run_config(args))
    return 0


def cmd_synth_gen(args) -> int:
    out = Path(args.out)
    if args.kind == "grouped":
        if args.groups < 1 or args.variants < 1:
            raise ConfigError("--groups and --variants must be >= 1")
        try:
            items = synth_grouped(args.groups, args.variants, args.vocab_size, args.words_per_frame,
                                  rho=args.rho, seed=args.seed)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        out.mkdir(parents=True, exist_ok=True)
        io.write_bow(out / "bow.txt", [(i, h) for i, h, _ in items])
        io.write_labels(out / "labels.txt", [(i, g) for i, _, g in items])
        return 0
    cfg = _synth_config(args, n_positive=args.n_positive, n_negative=args.n_negative)
    ds = synth_generate(cfg)
    out.mkdir(parents=True, exist_ok=True)
    io.write_bow(out / "bow.txt", [(f.id, f.hist) for f in ds.frames])
    io.write_poses(out / "poses.txt", [f.pose for f in ds.frames])
    io.write_bow(out / "positives.txt", [(q.id, q.hist) for q in ds.positives])
    io.write_bow(out / "negatives.txt", [(q.id, q.hist) for q in ds.negatives])
    with open(out / "config.json", "w") as f:
        json.dump(asdict(cfg), f, sort_keys=True, indent=1)
        f.write("\n")
    return 0


# parser

def _add_structure_flags(p):
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--branching", type=int, default=8)
    p.add_argument("--pooling", nargs="+", choices=["mean", "sum", "max"], default=None,
                   help="one hierarchical run per pooling mode (default: mean)")
    p.add_argument("--structure", action="append", help="extra structure like d3b4-max (repeatable)")


def _add_synth_flags(p):
    p.add_argument("--frames", type=int, default=2000)
    p.add_argument("--vocab-size", type=int, default=2000)
    p.add_argument("--words-per-frame", type=int, default=50)
    p.add_argument("--rho", type=float, default=0.1)
    p.add_argument("--loops", type=int, default=4)
    p.add_argument("--loop-len", type=int, default=100)
    p.add_argument("--min-gap", type=int, default=100)
    p.add_argument("--n-positive", type=int, default=20)
    p.add_argument("--n-negative", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hierpool", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("vocab-build", help="hierarchical k-means vocabulary from a descriptor file")
    p.add_argument("descriptors")
    p.add_argument("--k-v", type=int, default=10, help="branching factor")
    p.add_argument("--l-v", type=int, default=3, help="depth")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vocab_build)

    p = sub.add_parser("quantize", help="descriptor files (one per frame) to a BoW file")
    p.add_argument("descriptors", nargs="+")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("bench-loop", help="incremental loop-closure benchmark")
    p.add_argument("bow")
    p.add_argument("poses")
    _add_structure_flags(p)
    p.add_argument("--tau", type=float, default=None, help="timing threshold (default: flat's calibrated one)")
    p.add_argument("--tau-sweep", default="0.02:0.6:0.02")
    p.add_argument("--min-gap", type=int, default=100)
    p.add_argument("--radius-m", type=float, default=15.0)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0, help="recorded in reports")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_bench_loop)

    p = sub.add_parser("bench-synth", help="synthetic positive/negative query timing")
    _add_structure_flags(p)
    _add_synth_flags(p)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--checkpoints", type=int, default=5)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_synth)

    p = sub.add_parser("retrieval", help="grouped top-k retrieval benchmark")
    p.add_argument("bow")
    p.add_argument("labels")
    p.add_argument("--pooling", nargs="+", choices=["mean", "sum", "max"], default=None)
    p.add_argument("--group-strategy", choices=["label-random", "label-affinity"], default="label-random")
    p.add_argument("--group-size", type=int, default=16)
    p.add_argument("--topk-keep", type=int, default=10)
    p.add_argument("--topk-return", type=int, default=4)
    p.add_argument("--exclude-self", action="store_true")
    p.add_argument("--map", action="store_true", help="also report mean average precision")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="report CSV path")
    p.set_defaults(func=cmd_retrieval)

    p = sub.add_parser("synth-gen", help="write a synthetic dataset")
    p.add_argument("--kind", choices=["loop", "grouped"], default="loop")
    _add_synth_flags(p)
    p.add_argument("--groups", type=int, default=500)
    p.add_argument("--variants", type=int, default=4)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth_gen)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "pooling", None) is None and args.command in ("bench-loop", "bench-synth") \
                and not args.structure:
            args.pooling = ["mean"]
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        msg = str(e) if str(e).startswith("file not found") else f"file not found: {e.filename}"
        print(msg, file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
