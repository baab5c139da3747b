"""
Counting attention work
=======================

Batch statistics explain how much a batch gains from packing.
"""

from prepack import batch_stats, cost_for_lengths, cost_prepacked, ffd_pack, predicted_speedup
from prepack.bench import Strategy, make_batches, uniform_workload
from prepack.cost import fit_linear_regression

lengths = [1000] + [1] * 9
plan = ffd_pack(lengths)
full, packed = cost_for_lengths(lengths), cost_prepacked(plan)
print(f"entries: {full.attention_entries} padded, {packed.attention_entries} packed")

stats = batch_stats(lengths, plan)
print(f"max abs deviation {float(stats.max_abs_deviation):.1f}")
print(f"batch size reduction {stats.batch_size_reduction}, predicted speedup {predicted_speedup(stats)}")

# Equal lengths leave nothing to pack.
same = [64] * 8
print("equal lengths:", cost_prepacked(ffd_pack(same)) == cost_for_lengths(same))

# Over many batches the predicted speedup is exactly 1 / BSR, so the fit is perfect;
# MAD tracks it only loosely.
batches = make_batches(uniform_workload(2000), 16, Strategy.BATCH_PREPACKING)
rows = [batch_stats(b.lengths, ffd_pack(b.lengths)) for b in batches if len(b.prompts) == 16]
ys = [predicted_speedup(s) for s in rows]
print("vs 1/BSR:", fit_linear_regression([1 / s.batch_size_reduction for s in rows], ys))
print("vs MAD:  ", fit_linear_regression([s.max_abs_deviation for s in rows], ys))
