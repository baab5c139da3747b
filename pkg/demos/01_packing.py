"""
Packing prompts into rows
=========================

First-Fit Decreasing places prompts into bins as long as the longest prompt,
then the attention layout keeps each prompt blind to its neighbours.
"""

import numpy as np

from prepack import build_layout, dumps_plan, ffd_pack, full_batch_padding, plan_padding

# One long prompt and nine one-token prompts.
lengths = [1000] + [1] * 9
plan = ffd_pack(lengths)
print(f"k={plan.k} prompts -> r={plan.r} rows of {plan.capacity} slots")
print(f"pad tokens: packed {plan_padding(plan)}, padded batch {full_batch_padding(lengths)}")

# A smaller batch is easier to look at.
plan = ffd_pack([5, 3, 2, 4, 1])
print(dumps_plan(plan))

# Row 1 holds the 4- and 1-token prompts side by side. Each block on the
# diagonal is causal and nothing crosses between blocks.
layout = build_layout(plan)
print(layout.mask[1].astype(int))

# Positions restart at zero for every prompt, and pads sit at zero.
print(layout.positions)
print("slots in use per row:", layout.valid.sum(axis=1), "of", plan.capacity)
assert np.array_equal(layout.mask.sum(-1)[layout.valid], layout.positions[layout.valid] + 1)
