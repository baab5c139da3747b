"""One test per primary acceptance criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary,
then asserts. Tolerances and sample sizes are the criteria's own.
"""

import math
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from prepack.bench import (
    Strategy,
    batch_cost,
    batch_parallelism_probe,
    empirical_workload,
    largest_feasible_batch,
    make_batches,
    mixture_workload,
    regression_experiment,
    sweep_batch_size,
    uniform_workload,
)
from prepack.cost import (
    batch_stats,
    cost_for_lengths,
    cost_full_batching,
    cost_prepacked,
    predicted_speedup,
)
from prepack.model import AttentionCounter, prefill_full_batch, prefill_prepacked
from prepack.packing import PromptRecord, ffd_pack, full_batch_padding, plan_padding
from prepack.verify import random_prompts, verify_equivalence
from tests.conftest import CRITERIA
from tests.oracles import optimal_bin_count

PROFILE = Path(__file__).parent / "data" / "length_profile.txt"
N_PROMPTS = 5000


def record(name, ok, detail):
    CRITERIA.append((name, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def workloads():
    return {
        "uniform": uniform_workload(N_PROMPTS, 1, 512, seed=0),
        "mixture": mixture_workload(N_PROMPTS, 1, 512, 0.1, seed=0),
        "empirical": empirical_workload(N_PROMPTS, PROFILE, seed=0),
    }


def test_exactness(toy_weights):
    t0 = time.perf_counter()
    report = verify_equivalence(toy_weights, trials=100, seed=0, batch_size=8, max_len=64, tolerance=1e-4)
    elapsed = time.perf_counter() - t0
    ok = report.max_deviation <= 1e-4 and report.argmax_mismatches == 0 and report.trials == 100 and elapsed < 60
    record(
        "exactness",
        ok,
        f"trials={report.trials} max_dev={report.max_deviation:.2e} argmax_mismatches={report.argmax_mismatches} "
        f"decode_mismatches={report.decode_mismatches} seconds={elapsed:.1f}",
    )


def test_isolation(toy_weights):
    rng = np.random.default_rng(11)
    vocab = toy_weights.config.vocab_size
    trials = broken = 0
    while trials < 50:
        prompts = random_prompts(rng, 8, 64, vocab)
        plan = ffd_pack([p.length for p in prompts])
        shared = [b for b in plan.bins if len(b) > 1]
        if not shared:
            continue
        segs = shared[int(rng.integers(len(shared)))]
        victim = segs[int(rng.integers(len(segs)))].prompt_original_index
        tokens = rng.integers(0, vocab, prompts[victim].length).tolist()
        mutated = list(prompts)
        mutated[victim] = PromptRecord(victim, tokens)
        a = prefill_prepacked(toy_weights, prompts, plan)
        b = prefill_prepacked(toy_weights, mutated, plan)
        for i in range(len(prompts)):
            if i == victim:
                continue
            ca, cb = a.caches[i], b.caches[i]
            if not all(np.array_equal(x, y) for x, y in zip(ca.keys + ca.values, cb.keys + cb.values)):
                broken += 1
        trials += 1
    record("isolation", broken == 0, f"trials={trials} non_identical_caches={broken}")


def test_packing_bounds():
    rng = np.random.default_rng(5)
    violations, brute_checked, brute_bad = 0, 0, 0
    for _ in range(1000):
        k = int(rng.integers(1, 41))
        lengths = rng.integers(1, int(rng.integers(2, 513)), k).tolist()
        plan = ffd_pack(lengths)
        placed = sorted(s.prompt_original_index for b in plan.bins for s in b)
        ok = (
            math.ceil(sum(lengths) / plan.capacity) <= plan.r <= k
            and placed == list(range(k))
            and all(sum(s.length for s in b) <= plan.capacity for b in plan.bins)
        )
        violations += not ok
    for _ in range(1000):
        k = int(rng.integers(1, 9))
        lengths = rng.integers(1, 30, k).tolist()
        brute_checked += 1
        brute_bad += ffd_pack(lengths).r > optimal_bin_count(lengths, max(lengths)) + 1
    record(
        "packing_bounds",
        violations == 0 and brute_bad == 0,
        f"instances=1000 violations={violations} brute_force_instances={brute_checked} over_opt_plus_1={brute_bad}",
    )


def test_toy_batch():
    lengths = [1000] + [1] * 9
    plan = ffd_pack(lengths, 1000)
    stats = batch_stats(lengths, plan)
    speedup = predicted_speedup(stats)
    pads, full_pads = plan_padding(plan), full_batch_padding(lengths)
    entries = cost_full_batching(10, 1000).attention_entries / cost_prepacked(plan).attention_entries
    ok = plan.r == 2 and speedup == 5 and entries == 5 and pads == 991 and full_pads == 8991
    record("toy_batch", ok, f"r={plan.r} speedup={speedup} pads={pads} full_pads={full_pads}")


def test_cost_dominance():
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(10_000):
        k = int(rng.integers(1, 33))
        lengths = rng.integers(1, int(rng.integers(2, 513)), k).tolist()
        layers, heads = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        packed = cost_prepacked(ffd_pack(lengths), layers, heads).attention_entries
        bad += packed > cost_for_lengths(lengths, layers, heads).attention_entries
    equal_bad = 0
    for _ in range(1000):
        k, n = int(rng.integers(1, 33)), int(rng.integers(1, 513))
        equal_bad += cost_prepacked(ffd_pack([n] * k)) != cost_for_lengths([n] * k)
    record(
        "cost_dominance",
        bad == 0 and equal_bad == 0,
        f"instances=10000 dominance_violations={bad} equal_length_instances=1000 inequalities={equal_bad}",
    )


def test_instrumentation(toy_weights):
    cfg = toy_weights.config
    rng = np.random.default_rng(13)
    mismatches = 0
    for _ in range(100):
        prompts = random_prompts(rng, int(rng.integers(1, 13)), 64, cfg.vocab_size)
        lengths = [p.length for p in prompts]
        plan = ffd_pack(lengths)
        packed, full = AttentionCounter(), AttentionCounter()
        prefill_prepacked(toy_weights, prompts, plan, counter=packed)
        prefill_full_batch(toy_weights, prompts, counter=full)
        mismatches += packed.entries != cost_prepacked(plan, cfg.n_layers, cfg.n_heads).attention_entries
        mismatches += full.entries != cost_for_lengths(lengths, cfg.n_layers, cfg.n_heads).attention_entries
    record("instrumentation", mismatches == 0, f"batches=100 mismatches={mismatches}")


def test_batch_size_trend(toy_weights, workloads):
    sizes = [2, 4, 8, 16, 32]
    means = []
    for size in sizes:
        batches = make_batches(workloads["uniform"], size, Strategy.BATCH_PREPACKING, seed=0)
        means.append(statistics.fmean(float(predicted_speedup(batch_stats(b.lengths, ffd_pack(b.lengths)))) for b in batches))
    monotone = all(a <= b for a, b in zip(means, means[1:]))

    mixture = mixture_workload(512, 1, 512, 0.1, seed=0)
    cells = sweep_batch_size(
        toy_weights,
        mixture,
        [8, 16, 32],
        [Strategy.FULL_BATCHING, Strategy.BATCH_PREPACKING],
        repetitions=3,
        warmup=1,
        max_batches=6,
    )
    measured = {c.batch_size: c.speedup_vs_full for c in cells if c.strategy is Strategy.BATCH_PREPACKING}
    faster = all(s > 1 for s in measured.values())
    record(
        "batch_size_trend",
        monotone and faster,
        "mean_k_over_r=" + ",".join(f"{s}:{m:.3f}" for s, m in zip(sizes, means))
        + " measured_mixture=" + ",".join(f"{s}:{v:.2f}" for s, v in measured.items()),
    )


@pytest.mark.slow
def test_regression(toy_weights, workloads):
    measured = regression_experiment(
        toy_weights, workloads["uniform"], 8, seed=0, mode="measured", n_batches=100, repetitions=3, warmup=1
    )
    cost = regression_experiment(None, workloads["uniform"], 8, seed=0, mode="cost")
    r2 = measured.fit_bsr.r_squared
    exact = cost.fit_inverse_bsr.r_squared
    ok = len(measured.rows) >= 100 and r2 >= 0.8 and exact == 1.0
    record(
        "regression",
        ok,
        f"batches={len(measured.rows)} measured_r2_bsr={r2:.3f} measured_r2_mad={measured.fit_mad.r_squared:.3f} "
        f"cost_r2_inverse_bsr={exact}",
    )


def test_strategy_ordering(workloads):
    cfg_layers, cfg_heads = 2, 4
    failures, details = [], []
    for name, w in workloads.items():
        for size in (8, 16, 32):
            pads, per_prompt = {}, {}
            for s in (Strategy.DATASET_PREPACKING, Strategy.LENGTH_ORDERED, Strategy.FULL_BATCHING):
                costs = [batch_cost(b, s, cfg_layers, cfg_heads) for b in make_batches(w, size, s, seed=0)]
                pads[s] = sum(c.pad_tokens for c in costs)
                per_prompt[s] = sum(c.attention_entries for c in costs) / len(w)
            d, lo, f = Strategy.DATASET_PREPACKING, Strategy.LENGTH_ORDERED, Strategy.FULL_BATCHING
            if not pads[d] <= pads[lo] <= pads[f]:
                failures.append(f"{name}/{size}:pads")
            if not per_prompt[d] <= per_prompt[lo] <= per_prompt[f]:
                failures.append(f"{name}/{size}:cost")
            details.append(f"{name}/{size} pads={pads[d]}<={pads[lo]}<={pads[f]} cost={per_prompt[d]:.0f}<={per_prompt[lo]:.0f}<={per_prompt[f]:.0f}")
    print("\n".join(details))
    record("strategy_ordering", not failures, "violations=" + (",".join(failures) or "none"))


def test_probe(toy_weights):
    ks = [1, 2, 4, 8, 16, 32, 64]
    rows = batch_parallelism_probe(toy_weights, ks, 128, runs=100, warmup=3)
    lat = [r.latency_ms_mean for r in rows]
    ok = all(r.runs >= 100 and r.status == "ok" for r in rows) and all(a < b for a, b in zip(lat, lat[1:]))
    record("probe", ok, "latency_ms=" + ",".join(f"{k}:{v:.2f}" for k, v in zip(ks, lat)))


def test_feasible_batch(toy_weights, workloads):
    cfg = toy_weights.config
    dims = dict(layers=cfg.n_layers, heads=cfg.n_heads, d_model=cfg.d_model)
    budget = cost_full_batching(16, 512, **dims).peak_activation_elements
    sizes = [2**i for i in range(10)]
    found = {}
    for name, w in workloads.items():
        found[name] = tuple(
            largest_feasible_batch(w, s, sizes, budget, **dims)
            for s in (Strategy.FULL_BATCHING, Strategy.BATCH_PREPACKING)
        )
    ok = all(p >= f for f, p in found.values()) and found["mixture"][1] > found["mixture"][0]
    record(
        "feasible_batch",
        ok,
        f"budget={budget} " + " ".join(f"{n}:full={f},prepacked={p}" for n, (f, p) in found.items()),
    )
