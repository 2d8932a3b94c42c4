# Query time against a growing database, positive and negative queries.
# Run: python demos/03_query_speed.py [n_frames]

import sys

from hierpool.bench import run_synthetic_queries
from hierpool.bow import tfidf_normalize
from hierpool.synth import SynthConfig, synth_generate
from hierpool.vocab import compute_idf

T = int(sys.argv[1]) if len(sys.argv) > 1 else 20000
V = 2000
ds = synth_generate(SynthConfig(vocab_size=V, seq_len=T, n_positive=5, n_negative=495))
idf = compute_idf([f.hist for f in ds.frames], V)
db = [(f.id, tfidf_normalize(f.hist, idf)) for f in ds.frames]
pos = [tfidf_normalize(q.hist, idf) for q in ds.positives]
neg = [tfidf_normalize(q.hist, idf) for q in ds.negatives]

tau = 0.3
reports = {s: run_synthetic_queries(db, pos, neg, s, tau, V) for s in ("flat", "d2b8-mean", "d2b8-max", "d3b8-mean")}
base = reports["flat"]
print(f"{'structure':10s} {'class':9s} {'ms/1k':>8s} {'speedup':>8s} {'mean us':>8s}")
for name, r in reports.items():
    sp = r.speedups(base)
    for cls in ("positive", "negative", "overall"):
        t = r.timing[cls]
        print(f"{name:10s} {cls:9s} {t.rate:8.4f} {sp[cls]:8.2f} {t.mean_seconds * 1e6:8.1f}")
