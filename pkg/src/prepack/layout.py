"""Independent masks, restart positions and unpack bookkeeping for packed bins."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from prepack.packing import PackingPlan


class UnpackEntry(NamedTuple):
    bin: int
    start: int
    length: int


@dataclass(frozen=True)
class AttentionLayout:
    """Per-bin attention structure of a packed ``r x m`` batch.

    Attributes:
        mask: ``(r, m, m)`` bool, ``mask[b, i, j]`` means slot ``i`` may attend to ``j``.
        positions: ``(r, m)`` int64 position IDs, restarting at 0 for every segment.
        valid: ``(r, m)`` bool, False on pad slots.
    """

    mask: np.ndarray
    positions: np.ndarray
    valid: np.ndarray


def build_independent_mask(plan: PackingPlan) -> np.ndarray:
    """Block-diagonal causal mask: each segment attends causally within itself only."""
    m = plan.capacity
    mask = np.zeros((plan.r, m, m), dtype=bool)
    tril_cache: dict[int, np.ndarray] = {}
    for b, segs in enumerate(plan.bins):
        for s in segs:
            tri = tril_cache.get(s.length)
            if tri is None:
                tri = tril_cache[s.length] = np.tri(s.length, dtype=bool)
            mask[b, s.start : s.end, s.start : s.end] = tri
    return mask


def build_causal_mask(plan: PackingPlan) -> np.ndarray:
    """Plain causal mask over each bin's filled prefix, ignoring segment boundaries.

    This is what a packed batch would get without independent masking. It is
    kept as a negative control for the exactness checks.
    """
    m = plan.capacity
    mask = np.zeros((plan.r, m, m), dtype=bool)
    for b in range(plan.r):
        n = plan.fill(b)
        mask[b, :n, :n] = np.tri(n, dtype=bool)
    return mask


def build_restart_positions(plan: PackingPlan) -> np.ndarray:
    positions = np.zeros((plan.r, plan.capacity), dtype=np.int64)
    for b, segs in enumerate(plan.bins):
        for s in segs:
            positions[b, s.start : s.end] = np.arange(s.length)
    return positions


def build_valid(plan: PackingPlan) -> np.ndarray:
    valid = np.zeros((plan.r, plan.capacity), dtype=bool)
    for b in range(plan.r):
        valid[b, : plan.fill(b)] = True
    return valid


def build_unpack_index(plan: PackingPlan) -> list[UnpackEntry]:
    """Where each prompt lives in the packed batch, ordered by original index."""
    index: list[UnpackEntry | None] = [None] * plan.k
    for b, segs in enumerate(plan.bins):
        for s in segs:
            index[s.prompt_original_index] = UnpackEntry(b, s.start, s.length)
    if any(e is None for e in index):
        raise ValueError("plan does not place every prompt")
    return index  # type: ignore[return-value]


def build_layout(plan: PackingPlan) -> AttentionLayout:
    return AttentionLayout(
        mask=build_independent_mask(plan),
        positions=build_restart_positions(plan),
        valid=build_valid(plan),
    )
