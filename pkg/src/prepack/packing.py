"""First-Fit Decreasing packing of prompts into fixed-capacity bins."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from prepack.errors import CapacityTooSmall, EmptyInput, InvalidPrompt


@dataclass(frozen=True)
class PromptRecord:
    """A prompt's token IDs together with its position in the input batch."""

    original_index: int
    tokens: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.original_index < 0:
            raise InvalidPrompt(f"original_index must be >= 0, got {self.original_index}")
        if len(self.tokens) < 1:
            raise InvalidPrompt(f"prompt {self.original_index} is empty")
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Segment:
    prompt_original_index: int
    start: int
    length: int

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class PackingPlan:
    """Assignment of ``k`` prompts to ``r`` bins of a shared capacity.

    ``bins[b]`` lists the segments of bin ``b`` in layout order, contiguous
    from offset 0. Padding, if any, sits after the last segment.
    """

    capacity: int
    bins: tuple[tuple[Segment, ...], ...]
    k: int = field(default=-1)

    def __post_init__(self) -> None:
        if self.k < 0:
            object.__setattr__(self, "k", sum(len(b) for b in self.bins))

    @property
    def r(self) -> int:
        return len(self.bins)

    @property
    def total_length(self) -> int:
        return sum(s.length for b in self.bins for s in b)

    def fill(self, b: int) -> int:
        return sum(s.length for s in self.bins[b])

    def lengths(self) -> list[int]:
        """Prompt lengths in original order."""
        out = [0] * self.k
        for b in self.bins:
            for s in b:
                out[s.prompt_original_index] = s.length
        return out

    def validate(self) -> None:
        """Raise ``ValueError`` if any plan invariant is violated."""
        seen: set[int] = set()
        for bi, b in enumerate(self.bins):
            offset = 0
            for s in b:
                if s.start != offset:
                    raise ValueError(f"bin {bi}: segment at {s.start}, expected {offset}")
                if s.length < 1:
                    raise ValueError(f"bin {bi}: empty segment")
                if s.prompt_original_index in seen:
                    raise ValueError(f"prompt {s.prompt_original_index} placed twice")
                seen.add(s.prompt_original_index)
                offset = s.end
            if offset > self.capacity:
                raise ValueError(f"bin {bi} holds {offset} tokens, capacity {self.capacity}")
        if seen != set(range(self.k)):
            raise ValueError("plan does not cover every prompt exactly once")


def _check_lengths(lengths: Sequence[int]) -> list[int]:
    lengths = [int(x) for x in lengths]
    if not lengths:
        raise EmptyInput("no prompt lengths given")
    bad = [i for i, x in enumerate(lengths) if x < 1]
    if bad:
        raise InvalidPrompt(f"prompt {bad[0]} has length {lengths[bad[0]]}; lengths must be >= 1")
    return lengths


def default_capacity(lengths: Sequence[int]) -> int:
    """Bin capacity used for a batch: its longest prompt."""
    return max(_check_lengths(lengths))


def ffd_pack(lengths: Sequence[int], capacity: int | None = None) -> PackingPlan:
    """Pack prompt lengths into bins with First-Fit Decreasing.

    Items are visited by length descending, ties by ascending index, and each
    goes into the first open bin with enough room or else a new bin.

    Args:
        lengths: Prompt lengths; item ``i`` becomes ``Segment(i, ...)``.
        capacity: Bin size. Defaults to ``max(lengths)``.

    Raises:
        EmptyInput: ``lengths`` is empty.
        CapacityTooSmall: some prompt is longer than ``capacity``.
    """
    lengths = _check_lengths(lengths)
    if capacity is None:
        capacity = max(lengths)
    longest = max(lengths)
    if longest > capacity:
        raise CapacityTooSmall(f"prompt of length {longest} exceeds bin capacity {capacity}")

    order = sorted(range(len(lengths)), key=lambda i: (-lengths[i], i))
    bins: list[list[Segment]] = []
    fills: list[int] = []
    for i in order:
        n = lengths[i]
        for b, used in enumerate(fills):
            if used + n <= capacity:
                bins[b].append(Segment(i, used, n))
                fills[b] = used + n
                break
        else:
            bins.append([Segment(i, 0, n)])
            fills.append(n)
    return PackingPlan(capacity, tuple(tuple(b) for b in bins), len(lengths))


def plan_padding(plan: PackingPlan) -> int:
    """Number of pad slots in the packed ``r x capacity`` batch."""
    return plan.r * plan.capacity - plan.total_length


def full_batch_padding(lengths: Sequence[int]) -> int:
    lengths = _check_lengths(lengths)
    return len(lengths) * max(lengths) - sum(lengths)


def restrict_plan(plan: PackingPlan, bin_ids: Iterable[int]) -> tuple[PackingPlan, list[int]]:
    """Sub-plan over a subset of bins with prompt indices renumbered from 0.

    Returns the sub-plan and the original index of each renumbered prompt.
    """
    members: list[int] = []
    new_bins = []
    for b in bin_ids:
        segs = []
        for s in plan.bins[b]:
            segs.append(Segment(len(members), s.start, s.length))
            members.append(s.prompt_original_index)
        new_bins.append(tuple(segs))
    return PackingPlan(plan.capacity, tuple(new_bins), len(members)), members


# Serialization: JSON Lines, one record per bin.

def plan_to_records(plan: PackingPlan) -> list[dict]:
    return [
        {
            "bin": b,
            "capacity": plan.capacity,
            "segments": [[s.prompt_original_index, s.start, s.length] for s in segs],
        }
        for b, segs in enumerate(plan.bins)
    ]


def dumps_plan(plan: PackingPlan) -> str:
    return "".join(json.dumps(rec) + "\n" for rec in plan_to_records(plan))


def loads_plan(text: str) -> PackingPlan:
    records = [json.loads(line) for line in text.splitlines() if line.strip()]
    if not records:
        raise EmptyInput("plan file has no bins")
    capacities = {rec["capacity"] for rec in records}
    if len(capacities) != 1:
        raise ValueError(f"bins disagree on capacity: {sorted(capacities)}")
    records.sort(key=lambda rec: rec["bin"])
    bins = tuple(tuple(Segment(*map(int, seg)) for seg in rec["segments"]) for rec in records)
    plan = PackingPlan(capacities.pop(), bins)
    plan.validate()
    return plan


def write_plan(plan: PackingPlan, path: str | Path) -> None:
    Path(path).write_text(dumps_plan(plan))


def read_plan(path: str | Path) -> PackingPlan:
    return loads_plan(Path(path).read_text())
