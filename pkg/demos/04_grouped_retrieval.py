# Object retrieval with a label-grouped three-layer index and top-k descent.
# Run: python demos/04_grouped_retrieval.py

from hierpool.bench import build_retrieval_indices, run_retrieval
from hierpool.bow import tfidf_normalize
from hierpool.synth import synth_grouped
from hierpool.vocab import compute_idf

V = 5000
items = synth_grouped(n_groups=500, variants=4, vocab_size=V, seed=0)
idf = compute_idf([h for _, h, _ in items], V)
items = [(i, tfidf_normalize(h, idf), lab) for i, h, lab in items]

for strategy in ("label-random", "label-affinity"):
    flat, grouped = build_retrieval_indices(items, V, strategy, group_size=16, pooling="mean")
    rf = run_retrieval(items, flat)
    rg = run_retrieval(items, grouped)
    print(f"{strategy:15s} flat {rf.mean_score:.3f} ({rf.mean_query_s * 1e3:.3f} ms)  "
          f"grouped {rg.mean_score:.3f} ({rg.mean_query_s * 1e3:.3f} ms)  "
          f"speedup {rf.mean_query_s / rg.mean_query_s:.2f}")
