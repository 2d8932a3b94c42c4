# Pooling and the intersection kernel on tiny histograms.
# Run: python demos/01_pooling_basics.py

import numpy as np

from hierpool import SparseHistogram, intersection, pool

a = SparseHistogram.from_pairs([(0, 0.5), (3, 0.5)])
b = SparseHistogram.from_pairs([(3, 0.25), (7, 0.75)])
q = SparseHistogram.from_pairs([(3, 0.6), (7, 0.4)])

print("I(q, a) =", intersection(q, a))
print("I(q, b) =", intersection(q, b))

# sum and max parents score at least as high as any child; mean may not
for mode in ("sum", "max", "mean"):
    parent = pool([a, b], mode)
    print(f"{mode:4s} parent {parent}  I(q, parent) = {intersection(q, parent):.3f}")

# a random check of the bound
rng = np.random.default_rng(0)
worst = {"sum": 0.0, "max": 0.0, "mean": 0.0}
for _ in range(2000):
    kids = [SparseHistogram.from_dense(rng.random(20) * (rng.random(20) < 0.3)) for _ in range(4)]
    kids = [k for k in kids if len(k)] or [SparseHistogram.from_pairs([(0, 1.0)])]
    qq = SparseHistogram.from_dense(rng.random(20) * (rng.random(20) < 0.3) + 1e-3)
    best_child = max(intersection(qq, k) for k in kids)
    for mode in worst:
        worst[mode] = min(worst[mode], intersection(qq, pool(kids, mode)) - best_child)
print("smallest (parent - best child) score gap:", worst)
