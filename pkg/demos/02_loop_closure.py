# Loop closure on a synthetic route: flat search against pooled hierarchies.
# Run: python demos/02_loop_closure.py   (about a minute)

from hierpool.bench import LoopClosureProtocolConfig, calibrate_threshold, normalize_stream, run_loop_benchmark
from hierpool.synth import SynthConfig, make_loop_schedule, synth_generate
from hierpool.vocab import compute_idf

V = 2000
sched = make_loop_schedule(3000, n_loops=4, loop_len=100, min_separation=400, seed=0)
ds = synth_generate(SynthConfig(vocab_size=V, seq_len=3000, loop_schedule=sched, seed=0))
idf = compute_idf([f.hist for f in ds.frames], V)
stream = normalize_stream(ds.frames, idf)
print(len(stream), "frames,", len(sched), "revisited")

cfg = LoopClosureProtocolConfig(timing_repeats=1)
flat = run_loop_benchmark(stream, "flat", cfg, V)
tau = calibrate_threshold(flat.pr)
print("zero false alarm threshold:", tau)

for name in ("flat", "d2b8-sum", "d2b4-mean", "d2b8-mean"):
    res = flat if name == "flat" else run_loop_benchmark(stream, name, LoopClosureProtocolConfig(tau=tau, timing_repeats=1), V)
    p = next(p for p in res.pr if p.tau == tau)
    print(f"{name:10s} precision {p.precision:.3f} recall {p.recall:.3f} "
          f"tp {p.tp:4d} fp {p.fp}  rate {res.timing.rate:.4f} ms/1k")
