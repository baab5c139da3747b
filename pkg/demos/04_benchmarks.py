"""
Timing the four batching strategies
===================================

A small sweep over batch sizes, then a regression of measured speedup on
batch statistics. Takes around half a minute.
"""

import sys

from prepack import ModelConfig, init_model
from prepack.bench import (
    Strategy,
    mixture_workload,
    regression_experiment,
    sweep_batch_size,
    uniform_workload,
    write_csv,
)

weights = init_model(ModelConfig())

# Mostly one-token prompts with the odd 512-token one.
# Every cell covers the whole workload, so per-prompt times are comparable.
workload = mixture_workload(64, short=1, long=512, p_long=0.1)
cells = sweep_batch_size(weights, workload, [8, 16], list(Strategy), repetitions=3, warmup=1)
write_csv(cells, sys.stdout)

# Per-batch speedup against Batch Size Reduction on uniform lengths.
result = regression_experiment(weights, uniform_workload(400), 8, mode="measured", n_batches=40)
print(result.fits_csv())
