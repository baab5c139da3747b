"""
Batches are not free
====================

Latency of a dense (k, 128) prefill as k grows. On a CPU the curve is close
to linear in k, which is why cutting rows pays off.
"""

from prepack import ModelConfig, init_model
from prepack.bench import Strategy, batch_parallelism_probe, largest_feasible_batch, mixture_workload
from prepack.cost import cost_full_batching

weights = init_model(ModelConfig())
rows = batch_parallelism_probe(weights, [1, 2, 4, 8, 16, 32], m=128, runs=20)
for r in rows:
    print(f"k={r.k:3d}  {r.latency_ms_mean:8.2f} ms  ({r.latency_ms_mean / r.k:.2f} ms per row)")

# Under a fixed activation budget, packing fits bigger batches.
cfg = weights.config
dims = dict(layers=cfg.n_layers, heads=cfg.n_heads, d_model=cfg.d_model)
budget = cost_full_batching(16, 512, **dims).peak_activation_elements
workload = mixture_workload(2000)
for s in (Strategy.FULL_BATCHING, Strategy.BATCH_PREPACKING):
    print(s.value, largest_feasible_batch(workload, s, [2**i for i in range(9)], budget, **dims))
