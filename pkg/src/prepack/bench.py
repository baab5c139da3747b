"""Benchmark harness: workloads, batching strategies, timed trials and sweeps."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import statistics
import time
import tracemalloc
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence, TextIO

import numpy as np

from prepack.cost import (
    BatchStats,
    CostReport,
    LinearFit,
    cost_full_batching,
    cost_prepacked,
    fit_linear_regression,
)
from prepack.errors import DegenerateInput, EmptyInput, InvalidPrompt
from prepack.layout import build_layout
from prepack.model import (
    Weights,
    decode_step,
    forward,
    identity_plan,
    tensorize,
    unpack,
)
from prepack.packing import PackingPlan, PromptRecord, ffd_pack, restrict_plan

WARMUP = 3
REPETITIONS = 10


class Strategy(str, enum.Enum):
    FULL_BATCHING = "full_batching"
    LENGTH_ORDERED = "length_ordered"
    BATCH_PREPACKING = "batch_prepacking"
    DATASET_PREPACKING = "dataset_prepacking"

    @property
    def needs_whole_workload(self) -> bool:
        return self in (Strategy.LENGTH_ORDERED, Strategy.DATASET_PREPACKING)

    @property
    def packs(self) -> bool:
        return self in (Strategy.BATCH_PREPACKING, Strategy.DATASET_PREPACKING)

    @classmethod
    def parse(cls, text: str) -> list[Strategy]:
        """Comma-separated names; ``all`` selects every strategy."""
        names = [t.strip() for t in text.split(",") if t.strip()]
        if names == ["all"]:
            return list(cls)
        return [cls(n) for n in names]


# ---------------------------------------------------------------------------
# workloads


@dataclass
class Workload:
    prompts: list[PromptRecord]
    source: str
    seed: int = 0
    ids: list[int] | None = None

    def __post_init__(self) -> None:
        if not self.prompts:
            raise EmptyInput("workload has no prompts")

    @property
    def lengths(self) -> list[int]:
        return [p.length for p in self.prompts]

    def __len__(self) -> int:
        return len(self.prompts)


def workload_from_lengths(
    lengths: Sequence[int], seed: int = 0, vocab_size: int = 256, source: str = "lengths"
) -> Workload:
    """Attach deterministic random tokens to a list of lengths."""
    rng = np.random.default_rng(seed)
    prompts = []
    for i, n in enumerate(lengths):
        if n < 1:
            raise InvalidPrompt(f"prompt {i} has length {n}; lengths must be >= 1")
        prompts.append(PromptRecord(i, tuple(rng.integers(0, vocab_size, int(n)).tolist())))
    return Workload(prompts, source, seed)


def uniform_workload(n: int, low: int = 1, high: int = 512, seed: int = 0, vocab_size: int = 256) -> Workload:
    """``n`` prompts with lengths uniform on ``[low, high]`` inclusive."""
    lengths = np.random.default_rng([seed, 1]).integers(low, high + 1, n)
    return workload_from_lengths(lengths.tolist(), seed, vocab_size, f"uniform({low},{high})")


def mixture_workload(
    n: int,
    short: int = 1,
    long: int = 512,
    p_long: float = 0.1,
    seed: int = 0,
    vocab_size: int = 256,
) -> Workload:
    """Two-point length mixture: ``long`` with probability ``p_long``, else ``short``."""
    draws = np.random.default_rng([seed, 2]).random(n) < p_long
    lengths = np.where(draws, long, short)
    return workload_from_lengths(lengths.tolist(), seed, vocab_size, f"mixture({short},{long},{p_long})")


def empirical_workload(
    n: int, pool: Sequence[int] | str | Path, seed: int = 0, vocab_size: int = 256
) -> Workload:
    """Resample ``n`` lengths with replacement from an observed length profile.

    ``pool`` is a list of lengths or a text file with one length per line.
    """
    if isinstance(pool, (str, Path)):
        source = f"empirical({pool})"
        pool = [int(line) for line in Path(pool).read_text().split() if line.strip()]
    else:
        source = "empirical"
    pool = [int(x) for x in pool]
    if not pool:
        raise EmptyInput("empty length profile")
    lengths = np.random.default_rng([seed, 3]).choice(np.asarray(pool), size=n, replace=True)
    return workload_from_lengths(lengths.tolist(), seed, vocab_size, source)


def synthetic_workload(spec: str, n: int, seed: int = 0, vocab_size: int = 256) -> Workload:
    """Build a workload from a compact spec string.

    ``uniform:LOW:HIGH``, ``mixture:SHORT:LONG:P_LONG`` or ``empirical:PATH``.
    """
    kind, *args = spec.split(":")
    if kind == "uniform":
        low, high = (int(a) for a in args) if args else (1, 512)
        return uniform_workload(n, low, high, seed, vocab_size)
    if kind == "mixture":
        short, long = (int(a) for a in args[:2]) if args else (1, 512)
        p_long = float(args[2]) if len(args) > 2 else 0.1
        return mixture_workload(n, short, long, p_long, seed, vocab_size)
    if kind == "empirical":
        return empirical_workload(n, ":".join(args), seed, vocab_size)
    raise ValueError(f"unknown workload kind {kind!r}")


def load_workload(path: str | Path, seed: int = 0, vocab_size: int = 256) -> Workload:
    """Read a line-delimited JSON workload.

    Each line holds ``id`` and either ``tokens`` or ``length``. Length-only
    records get tokens drawn from ``seed`` in file order.
    """
    rng = np.random.default_rng(seed)
    prompts, ids = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InvalidPrompt(f"{path}:{lineno}: {exc}") from None
            if not isinstance(rec, dict) or "id" not in rec:
                raise InvalidPrompt(f"{path}:{lineno}: record needs an 'id'")
            if "tokens" in rec:
                tokens = [int(t) for t in rec["tokens"]]
            elif "length" in rec:
                n = int(rec["length"])
                if n < 1:
                    raise InvalidPrompt(f"{path}:{lineno}: length must be >= 1, got {n}")
                tokens = rng.integers(0, vocab_size, n).tolist()
            else:
                raise InvalidPrompt(f"{path}:{lineno}: record needs 'tokens' or 'length'")
            if not tokens:
                raise InvalidPrompt(f"{path}:{lineno}: empty prompt")
            if min(tokens) < 0 or max(tokens) >= vocab_size:
                raise InvalidPrompt(f"{path}:{lineno}: token outside [0, {vocab_size})")
            prompts.append(PromptRecord(len(prompts), tuple(tokens)))
            ids.append(int(rec["id"]))
    if not prompts:
        raise EmptyInput(f"{path}: no records")
    return Workload(prompts, str(path), seed, ids)


def save_workload(workload: Workload, path: str | Path, lengths_only: bool = False) -> None:
    ids = workload.ids or list(range(len(workload)))
    with open(path, "w") as fh:
        for pid, p in zip(ids, workload.prompts):
            rec = {"id": pid, "length": p.length} if lengths_only else {"id": pid, "tokens": list(p.tokens)}
            fh.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    """Prompts prefilled together. ``plan`` is fixed up front only for dataset prepacking."""

    prompts: list[PromptRecord]
    plan: PackingPlan | None = None

    @property
    def lengths(self) -> list[int]:
        return [p.length for p in self.prompts]

    @property
    def indices(self) -> list[int]:
        return [p.original_index for p in self.prompts]


def _chunks(items: list, size: int) -> list[list]:
    return [items[i : i + size] for i in range(0, len(items), size)]


def make_batches(workload: Workload, batch_size: int, strategy: Strategy, seed: int = 0) -> list[Batch]:
    """Split a workload into batches the way ``strategy`` would see them.

    Full batching and batch prepacking chunk a seeded shuffle. Length-ordered
    batching chunks the workload sorted by length (ties by index), so the
    last batch may be short. Dataset prepacking packs the whole workload
    against its longest prompt and groups ``batch_size`` bins per batch.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    prompts = workload.prompts
    if strategy in (Strategy.FULL_BATCHING, Strategy.BATCH_PREPACKING):
        order = np.random.default_rng(seed).permutation(len(prompts)).tolist()
        return [Batch([prompts[i] for i in chunk]) for chunk in _chunks(order, batch_size)]
    if strategy is Strategy.LENGTH_ORDERED:
        order = sorted(range(len(prompts)), key=lambda i: (prompts[i].length, i))
        return [Batch([prompts[i] for i in chunk]) for chunk in _chunks(order, batch_size)]
    if strategy is Strategy.DATASET_PREPACKING:
        plan = ffd_pack(workload.lengths)
        batches = []
        for bin_ids in _chunks(list(range(plan.r)), batch_size):
            sub, members = restrict_plan(plan, bin_ids)
            batches.append(Batch([prompts[i] for i in members], sub))
        return batches
    raise ValueError(f"unknown strategy {strategy!r}")


def batch_plan(batch: Batch, strategy: Strategy) -> PackingPlan:
    """The row layout ``strategy`` prefills for ``batch``."""
    if strategy is Strategy.DATASET_PREPACKING and batch.plan is not None:
        return batch.plan
    if strategy.packs:
        return ffd_pack(batch.lengths)
    return identity_plan(batch.lengths)


def batch_cost(batch: Batch, strategy: Strategy, layers: int, heads: int, d_model: int = 0) -> CostReport:
    plan = batch_plan(batch, strategy)
    if strategy.packs:
        return cost_prepacked(plan, layers, heads, d_model=d_model)
    lengths = batch.lengths
    return cost_full_batching(len(lengths), max(lengths), layers, heads, d_model=d_model, total_length=sum(lengths))


# ---------------------------------------------------------------------------
# trials


@dataclass
class TrialResult:
    strategy: Strategy
    batch_size: int
    stats: BatchStats
    cost: CostReport
    repetitions: int
    prefill_ms: list[float] = field(default_factory=list)
    unpack_ms: list[float] = field(default_factory=list)
    ttft_ms: list[float] = field(default_factory=list)
    first_tokens: dict[int, int] = field(default_factory=dict)
    status: str = "ok"
    peak_traced_bytes: int | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def prefill_ms_mean(self) -> float:
        return statistics.fmean(self.prefill_ms) if self.prefill_ms else math.nan

    @property
    def prefill_ms_std(self) -> float:
        return statistics.pstdev(self.prefill_ms) if self.prefill_ms else math.nan

    @property
    def ttft_ms_mean(self) -> float:
        return statistics.fmean(self.ttft_ms) if self.ttft_ms else math.nan

    @property
    def ttft_ms_std(self) -> float:
        return statistics.pstdev(self.ttft_ms) if self.ttft_ms else math.nan

    @property
    def unpack_ms_mean(self) -> float:
        return statistics.fmean(self.unpack_ms) if self.unpack_ms else math.nan


def _prefill_forward(weights: Weights, batch: Batch, strategy: Strategy):
    """Everything up to and including the forward pass; returns (plan, output)."""
    plan = batch_plan(batch, strategy)
    packed = tensorize(batch.prompts, plan, build_layout(plan))
    return plan, forward(weights, packed.tokens, packed.positions, packed.mask)


def _stats_for(batch: Batch, strategy: Strategy, plan: PackingPlan) -> BatchStats:
    lengths = batch.lengths
    return BatchStats(k=len(lengths), m=max(lengths), total_length=sum(lengths), r=plan.r)


def run_trial(
    weights: Weights,
    batch: Batch,
    strategy: Strategy,
    repetitions: int = REPETITIONS,
    warmup: int = WARMUP,
    *,
    element_budget: int | None = None,
    measure_memory: bool = False,
    batch_size: int | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> TrialResult:
    """Time prefill, unpack and one greedy decode step for one batch.

    Each repetition records prefill (packing, tensor layout and the forward
    pass), unpack (slicing per-prompt caches and first-token logits) and TTFT
    (prefill + unpack + one decode step). ``warmup`` untimed runs come first.
    A batch whose modelled peak activations exceed ``element_budget``, or
    that raises ``MemoryError``, is recorded with ``status="oom"``.
    """
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    cfg = weights.config
    plan = batch_plan(batch, strategy)
    cost = batch_cost(batch, strategy, cfg.n_layers, cfg.n_heads, cfg.d_model)
    result = TrialResult(
        strategy=strategy,
        batch_size=batch_size if batch_size is not None else len(batch.prompts),
        stats=_stats_for(batch, strategy, plan),
        cost=cost,
        repetitions=repetitions,
    )
    if element_budget is not None and cost.peak_activation_elements > element_budget:
        result.status = "oom"
        return result

    def once():
        t0 = clock()
        plan, out = _prefill_forward(weights, batch, strategy)
        t1 = clock()
        pre = unpack(weights, out, plan)
        t2 = clock()
        decode_step(weights, pre.caches, pre.first_tokens())
        t3 = clock()
        return pre, (t1 - t0) * 1e3, (t2 - t1) * 1e3, (t3 - t0) * 1e3

    try:
        for _ in range(warmup):
            once()
        for _ in range(repetitions):
            pre, p_ms, u_ms, t_ms = once()
            result.prefill_ms.append(p_ms)
            result.unpack_ms.append(u_ms)
            result.ttft_ms.append(t_ms)
        if measure_memory:
            tracemalloc.start()
            try:
                _prefill_forward(weights, batch, strategy)
                result.peak_traced_bytes = tracemalloc.get_traced_memory()[1]
            finally:
                tracemalloc.stop()
    except MemoryError:
        result.status = "oom"
        result.prefill_ms.clear()
        result.unpack_ms.clear()
        result.ttft_ms.clear()
        return result
    result.first_tokens = dict(zip(batch.indices, pre.first_tokens().tolist()))
    return result


def time_prefill(
    weights: Weights,
    batch: Batch,
    strategy: Strategy,
    repetitions: int = REPETITIONS,
    warmup: int = WARMUP,
    clock: Callable[[], float] = time.perf_counter,
) -> list[float]:
    """Prefill-only wall times in milliseconds."""
    for _ in range(warmup):
        _prefill_forward(weights, batch, strategy)
    times = []
    for _ in range(repetitions):
        t0 = clock()
        _prefill_forward(weights, batch, strategy)
        times.append((clock() - t0) * 1e3)
    return times


def measure_speedup(
    weights: Weights,
    batch: Batch,
    repetitions: int = REPETITIONS,
    warmup: int = 1,
    clock: Callable[[], float] = time.perf_counter,
) -> float:
    """Full-batching over batch-prepacking prefill time for one batch.

    Repetitions alternate the two paths and the median per-pair ratio is
    returned, so slow drift in host speed cancels out of the ratio.
    """
    for _ in range(warmup):
        _prefill_forward(weights, batch, Strategy.FULL_BATCHING)
        _prefill_forward(weights, batch, Strategy.BATCH_PREPACKING)
    ratios = []
    for _ in range(repetitions):
        t0 = clock()
        _prefill_forward(weights, batch, Strategy.FULL_BATCHING)
        t1 = clock()
        _prefill_forward(weights, batch, Strategy.BATCH_PREPACKING)
        t2 = clock()
        ratios.append((t1 - t0) / (t2 - t1))
    return statistics.median(ratios)


# ---------------------------------------------------------------------------
# sweeps

CSV_HEADER = (
    "strategy,batch_size,k,m,L,r,mad,bsr,prefill_ms_mean,prefill_ms_std,ttft_ms_mean,"
    "ttft_ms_std,unpack_ms_mean,attention_entries,pad_tokens,speedup_vs_full"
).split(",")


@dataclass
class CellResult:
    """One (strategy, batch size) cell aggregated over its batches.

    ``r`` counts prefilled rows summed over batches, so ``bsr = r / k`` is
    pooled. ``speedup_vs_full`` compares per-prompt prefill time against the
    full-batching cell of the same batch size; ``speedup_per_batch_mean``
    averages per-batch ratios and exists only where batches coincide with
    full batching's (batch prepacking).
    """

    strategy: Strategy
    batch_size: int
    trials: list[TrialResult]
    speedup_vs_full: float | None = None
    speedup_per_batch_mean: float | None = None

    @property
    def ok(self) -> bool:
        return all(t.ok for t in self.trials)

    @property
    def k(self) -> int:
        return sum(t.stats.k for t in self.trials)

    @property
    def m(self) -> int:
        return max(t.stats.m for t in self.trials)

    @property
    def total_length(self) -> int:
        return sum(t.stats.total_length for t in self.trials)

    @property
    def r(self) -> int:
        return sum(t.cost.rows for t in self.trials)

    @property
    def mad(self) -> float:
        return float(statistics.fmean(float(t.stats.max_abs_deviation) for t in self.trials))

    @property
    def bsr(self) -> float:
        return self.r / self.k

    @property
    def attention_entries(self) -> int:
        return sum(t.cost.attention_entries for t in self.trials)

    @property
    def pad_tokens(self) -> int:
        return sum(t.cost.pad_tokens for t in self.trials)

    @property
    def token_count(self) -> int:
        return sum(t.cost.token_count for t in self.trials)

    def _pool(self, attr: str) -> list[float]:
        return [x for t in self.trials for x in getattr(t, attr)]

    def _mean_of_means(self, attr: str) -> float:
        return statistics.fmean(getattr(t, attr) for t in self.trials)

    @property
    def prefill_ms_mean(self) -> float:
        return self._mean_of_means("prefill_ms_mean")

    @property
    def prefill_ms_std(self) -> float:
        return statistics.pstdev(self._pool("prefill_ms"))

    @property
    def ttft_ms_mean(self) -> float:
        return self._mean_of_means("ttft_ms_mean")

    @property
    def ttft_ms_std(self) -> float:
        return statistics.pstdev(self._pool("ttft_ms"))

    @property
    def unpack_ms_mean(self) -> float:
        return self._mean_of_means("unpack_ms_mean")

    @property
    def prefill_ms_per_prompt(self) -> float:
        return sum(t.prefill_ms_mean for t in self.trials) / self.k

    def row(self) -> dict[str, object]:
        def ms(value: Callable[[], float]) -> object:
            return f"{value():.4f}" if self.ok else "oom"

        def opt(x: float | None) -> object:
            return "" if x is None else f"{x:.4f}"

        return {
            "strategy": self.strategy.value,
            "batch_size": self.batch_size,
            "k": self.k,
            "m": self.m,
            "L": self.total_length,
            "r": self.r,
            "mad": f"{self.mad:.4f}",
            "bsr": f"{self.bsr:.6f}",
            "prefill_ms_mean": ms(lambda: self.prefill_ms_mean),
            "prefill_ms_std": ms(lambda: self.prefill_ms_std),
            "ttft_ms_mean": ms(lambda: self.ttft_ms_mean),
            "ttft_ms_std": ms(lambda: self.ttft_ms_std),
            "unpack_ms_mean": ms(lambda: self.unpack_ms_mean),
            "attention_entries": self.attention_entries,
            "pad_tokens": self.pad_tokens,
            "speedup_vs_full": opt(self.speedup_vs_full) if self.ok else "oom",
        }


def sweep_batch_size(
    weights: Weights,
    workload: Workload,
    sizes: Sequence[int],
    strategies: Sequence[Strategy],
    *,
    seed: int = 0,
    repetitions: int = REPETITIONS,
    warmup: int = WARMUP,
    max_batches: int | None = None,
    element_budget: int | None = None,
) -> list[CellResult]:
    """Run every (strategy, batch size) cell; cells are ordered by size then strategy.

    ``max_batches`` caps how many batches each cell runs; strategies then see
    different prompts, so speedups are only comparable without it. When full batching
    is among ``strategies`` each cell also gets speedup columns against it.
    """
    if not sizes:
        raise ValueError("no batch sizes given")
    cells = []
    for size in sizes:
        row_cells = {}
        for strategy in strategies:
            batches = make_batches(workload, size, strategy, seed)[:max_batches]
            trials = [
                run_trial(
                    weights,
                    b,
                    strategy,
                    repetitions,
                    warmup,
                    element_budget=element_budget,
                    batch_size=size,
                )
                for b in batches
            ]
            row_cells[strategy] = CellResult(strategy, size, trials)
        full = row_cells.get(Strategy.FULL_BATCHING)
        if full is not None and full.ok:
            for strategy, cell in row_cells.items():
                if not cell.ok:
                    continue
                cell.speedup_vs_full = full.prefill_ms_per_prompt / cell.prefill_ms_per_prompt
                if strategy in (Strategy.FULL_BATCHING, Strategy.BATCH_PREPACKING):
                    cell.speedup_per_batch_mean = statistics.fmean(
                        f.prefill_ms_mean / c.prefill_ms_mean for f, c in zip(full.trials, cell.trials)
                    )
        cells.extend(row_cells.values())
    return cells


def write_csv(cells: Iterable[CellResult], out: TextIO | str | Path) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            write_csv(cells, fh)
        return
    writer = csv.DictWriter(out, fieldnames=CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    for cell in cells:
        writer.writerow(cell.row())


def csv_text(cells: Iterable[CellResult]) -> str:
    buf = io.StringIO()
    write_csv(cells, buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# regression on batch statistics


@dataclass
class RegressionRow:
    batch: int
    stats: BatchStats
    speedup: float

    @property
    def mad(self) -> float:
        return float(self.stats.max_abs_deviation)

    @property
    def bsr(self) -> Fraction:
        return self.stats.batch_size_reduction


@dataclass
class RegressionResult:
    mode: str
    rows: list[RegressionRow]
    fit_mad: LinearFit
    fit_bsr: LinearFit
    fit_inverse_bsr: LinearFit

    def scatter_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["batch", "k", "m", "L", "r", "mad", "bsr", "speedup"])
        for row in self.rows:
            s = row.stats
            w.writerow([row.batch, s.k, s.m, s.total_length, s.r, f"{row.mad:.4f}", f"{float(row.bsr):.6f}", f"{row.speedup:.6f}"])
        return buf.getvalue()

    def fits_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["regressor", "slope", "intercept", "r_squared"])
        for name, fit in (("mad", self.fit_mad), ("bsr", self.fit_bsr), ("inverse_bsr", self.fit_inverse_bsr)):
            w.writerow([name, f"{fit.slope:.6f}", f"{fit.intercept:.6f}", f"{fit.r_squared:.6f}"])
        return buf.getvalue()


def regression_experiment(
    weights: Weights | None,
    workload: Workload,
    batch_size: int,
    seed: int = 0,
    *,
    mode: str = "measured",
    n_batches: int | None = None,
    repetitions: int = 3,
    warmup: int = 1,
) -> RegressionResult:
    """Relate prepacking speedup over full batching to per-batch length statistics.

    Batches are randomly sampled full batches (the final short batch is
    dropped). In ``"cost"`` mode the speedup is the modelled ``k / r``; in
    ``"measured"`` mode it comes from :func:`measure_speedup`. Lines are
    fitted against Max Absolute Deviation, Batch Size Reduction and its
    inverse.

    Raises:
        DegenerateInput: the regressors do not vary across batches.
    """
    if mode not in ("measured", "cost"):
        raise ValueError(f"mode must be 'measured' or 'cost', got {mode!r}")
    if mode == "measured" and weights is None:
        raise ValueError("measured mode needs model weights")
    batches = [b for b in make_batches(workload, batch_size, Strategy.FULL_BATCHING, seed) if len(b.prompts) == batch_size]
    batches = batches[:n_batches]
    rows = []
    for i, batch in enumerate(batches):
        plan = ffd_pack(batch.lengths)
        stats = _stats_for(batch, Strategy.BATCH_PREPACKING, plan)
        if mode == "cost":
            speedup = float(Fraction(stats.k, stats.r))
        else:
            speedup = measure_speedup(weights, batch, repetitions, warmup)
        rows.append(RegressionRow(i, stats, speedup))
    if mode == "cost":
        ys = [Fraction(r.stats.k, r.stats.r) for r in rows]
    else:
        ys = [r.speedup for r in rows]
    try:
        fits = [
            fit_linear_regression([r.stats.max_abs_deviation for r in rows], ys),
            fit_linear_regression([r.bsr for r in rows], ys),
            fit_linear_regression([1 / r.bsr for r in rows], ys),
        ]
    except DegenerateInput as exc:
        raise DegenerateInput(f"batch statistics do not vary across {len(rows)} batches: {exc}") from None
    return RegressionResult(mode, rows, *fits)


# ---------------------------------------------------------------------------
# batch parallelism and feasible batch size


@dataclass
class ProbeRow:
    k: int
    m: int
    runs: int
    latency_ms_mean: float
    latency_ms_std: float
    status: str = "ok"


def batch_parallelism_probe(
    weights: Weights,
    ks: Sequence[int],
    m: int,
    runs: int = 100,
    warmup: int = WARMUP,
    *,
    seed: int = 0,
    element_budget: int | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> list[ProbeRow]:
    """Prefill latency of a dense ``(k, m)`` causal batch for each ``k``."""
    if not ks:
        raise ValueError("no batch sizes given")
    cfg = weights.config
    rng = np.random.default_rng(seed)
    rows = []
    for k in ks:
        cost = cost_full_batching(k, m, cfg.n_layers, cfg.n_heads, d_model=cfg.d_model)
        if element_budget is not None and cost.peak_activation_elements > element_budget:
            rows.append(ProbeRow(k, m, 0, math.nan, math.nan, "oom"))
            continue
        tokens = rng.integers(0, cfg.vocab_size, (k, m))
        positions = np.broadcast_to(np.arange(m), (k, m))
        mask = np.broadcast_to(np.tri(m, dtype=bool), (k, m, m))
        try:
            for _ in range(warmup):
                forward(weights, tokens, positions, mask)
            times = []
            for _ in range(runs):
                t0 = clock()
                forward(weights, tokens, positions, mask)
                times.append((clock() - t0) * 1e3)
        except MemoryError:
            rows.append(ProbeRow(k, m, 0, math.nan, math.nan, "oom"))
            continue
        rows.append(ProbeRow(k, m, runs, statistics.fmean(times), statistics.pstdev(times)))
    return rows


def probe_csv(rows: Iterable[ProbeRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "m", "runs", "latency_ms_mean", "latency_ms_std", "status"])
    for r in rows:
        w.writerow([r.k, r.m, r.runs, f"{r.latency_ms_mean:.4f}", f"{r.latency_ms_std:.4f}", r.status])
    return buf.getvalue()


def largest_feasible_batch(
    workload: Workload,
    strategy: Strategy,
    sizes: Sequence[int],
    element_budget: int,
    *,
    layers: int,
    heads: int,
    d_model: int = 0,
    seed: int = 0,
) -> int:
    """Largest batch size in ``sizes`` for which every batch fits ``element_budget``.

    Feasibility uses the modelled peak activation elements. Returns 0 when no
    size fits.
    """
    best = 0
    for size in sorted(sizes):
        batches = make_batches(workload, size, strategy, seed)
        peak = max(batch_cost(b, strategy, layers, heads, d_model).peak_activation_elements for b in batches)
        if peak <= element_budget:
            best = size
    return best
