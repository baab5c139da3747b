"""Analytic prefill cost, batch statistics and least-squares fitting."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

from prepack.errors import DegenerateInput
from prepack.model import FFN_MULT
from prepack.packing import PackingPlan, plan_padding


@dataclass(frozen=True)
class CostReport:
    """Element counts for one prefill call.

    ``attention_entries`` counts score-matrix entries summed over layers and
    heads, ``token_count`` the slots in the input tensor (pads included), and
    ``peak_activation_elements`` the live elements of the largest per-layer
    intermediates of the toy model: the batch-wide ``rows x m x m`` additive
    mask, one row's ``heads x m x m`` score block and, when ``d_model`` is
    known, the ``rows x m x 4*d_model`` feed-forward hidden tensor.
    """

    rows: int
    seq_len: int
    attention_entries: int
    token_count: int
    pad_tokens: int
    peak_activation_elements: int

    def __add__(self, other: CostReport) -> CostReport:
        return CostReport(
            rows=self.rows + other.rows,
            seq_len=max(self.seq_len, other.seq_len),
            attention_entries=self.attention_entries + other.attention_entries,
            token_count=self.token_count + other.token_count,
            pad_tokens=self.pad_tokens + other.pad_tokens,
            peak_activation_elements=max(self.peak_activation_elements, other.peak_activation_elements),
        )


def _report(rows: int, m: int, layers: int, heads: int, d_model: int, pad_tokens: int) -> CostReport:
    if rows < 1 or m < 1:
        raise ValueError(f"rows and seq_len must be >= 1, got {rows}, {m}")
    return CostReport(
        rows=rows,
        seq_len=m,
        attention_entries=layers * heads * rows * m * m,
        token_count=rows * m,
        pad_tokens=pad_tokens,
        peak_activation_elements=rows * m * m + heads * m * m + rows * m * FFN_MULT * d_model,
    )


def cost_full_batching(
    k: int,
    m: int,
    layers: int = 1,
    heads: int = 1,
    *,
    d_model: int = 0,
    total_length: int | None = None,
) -> CostReport:
    """Cost of ``k`` prompts right-padded to length ``m``.

    ``pad_tokens`` is ``k*m - total_length`` when the total is given, else 0.
    """
    pads = 0 if total_length is None else k * m - total_length
    return _report(k, m, layers, heads, d_model, pads)


def cost_prepacked(plan: PackingPlan, layers: int = 1, heads: int = 1, *, d_model: int = 0) -> CostReport:
    return _report(plan.r, plan.capacity, layers, heads, d_model, plan_padding(plan))


def cost_for_lengths(lengths: Sequence[int], layers: int = 1, heads: int = 1, *, d_model: int = 0) -> CostReport:
    """Full-batching cost of a concrete batch."""
    return cost_full_batching(
        len(lengths), max(lengths), layers, heads, d_model=d_model, total_length=sum(lengths)
    )


@dataclass(frozen=True)
class BatchStats:
    k: int
    m: int
    total_length: int
    r: int

    @property
    def mean_length(self) -> Fraction:
        return Fraction(self.total_length, self.k)

    @property
    def max_abs_deviation(self) -> Fraction:
        """Longest prompt minus the mean length."""
        return self.m - self.mean_length

    @property
    def batch_size_reduction(self) -> Fraction:
        """Bins after packing over prompts before."""
        return Fraction(self.r, self.k)


def batch_stats(lengths: Sequence[int], plan: PackingPlan) -> BatchStats:
    if plan.k != len(lengths) or plan.total_length != sum(lengths):
        raise ValueError("plan was not built from these lengths")
    return BatchStats(k=len(lengths), m=max(lengths), total_length=sum(lengths), r=plan.r)


def predicted_speedup(stats: BatchStats) -> Fraction:
    """Quadratic-term speedup of prepacking over full batching, ``k / r``."""
    return 1 / stats.batch_size_reduction


class LinearFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float


def fit_linear_regression(xs: Sequence[float], ys: Sequence[float]) -> LinearFit:
    """Ordinary least squares ``y ~ slope * x + intercept``.

    Sums are accumulated in exact rational arithmetic (floats convert to
    ``Fraction`` losslessly), so data lying exactly on a line gives
    ``r_squared == 1.0`` exactly. When ``ys`` has zero variance ``r_squared``
    is defined as 0.

    Raises:
        DegenerateInput: fewer than two points, or all ``xs`` equal.
    """
    if len(xs) != len(ys):
        raise ValueError(f"{len(xs)} xs but {len(ys)} ys")
    if len(xs) < 2:
        raise DegenerateInput("need at least two points")
    fx = [Fraction(x) for x in xs]
    fy = [Fraction(y) for y in ys]
    n = len(fx)
    mx, my = sum(fx) / n, sum(fy) / n
    sxx = sum((x - mx) ** 2 for x in fx)
    if sxx == 0:
        raise DegenerateInput("all x values are equal")
    sxy = sum((x - mx) * (y - my) for x, y in zip(fx, fy))
    syy = sum((y - my) ** 2 for y in fy)
    slope = sxy / sxx
    intercept = my - slope * mx
    r2 = Fraction(0) if syy == 0 else (sxy * sxy) / (sxx * syy)
    return LinearFit(float(slope), float(intercept), float(min(max(r2, Fraction(0)), Fraction(1))))
