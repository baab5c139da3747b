"""Command-line interface: ``prepack {pack,verify,bench,predict,probe}``.

Exit codes: 0 success, 1 verification failure (or every bench cell failed),
2 usage or input error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from prepack.bench import (
    Strategy,
    Workload,
    batch_parallelism_probe,
    csv_text,
    load_workload,
    make_batches,
    probe_csv,
    regression_experiment,
    sweep_batch_size,
    synthetic_workload,
)
from prepack.cost import batch_stats, predicted_speedup
from prepack.errors import PrepackError
from prepack.model import ModelConfig, Weights, init_model, load_weights
from prepack.packing import dumps_plan, ffd_pack
from prepack.verify import verify_equivalence

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def _strategies(text: str) -> list[Strategy]:
    try:
        return Strategy.parse(text)
    except ValueError:
        names = ", ".join(s.value for s in Strategy)
        raise argparse.ArgumentTypeError(f"unknown strategy in {text!r}; choose from {names} or 'all'") from None


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--layers", type=int, default=2)
    g.add_argument("--d-model", type=int, default=64)
    g.add_argument("--heads", type=int, default=4)
    g.add_argument("--vocab", type=int, default=256)
    g.add_argument("--model-seed", type=int, default=0)
    g.add_argument("--weights", type=Path, help="load weights from a flat binary file instead")


def _add_workload_flags(p: argparse.ArgumentParser, required: bool = False) -> None:
    g = p.add_argument_group("workload")
    src = g.add_mutually_exclusive_group(required=required)
    src.add_argument("--input", type=Path, help="line-delimited JSON workload file")
    src.add_argument(
        "--workload",
        default=None,
        help="synthetic workload: uniform:LOW:HIGH, mixture:SHORT:LONG:P or empirical:PATH",
    )
    g.add_argument("--n-prompts", type=int, default=1000, help="size of a synthetic workload")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prepack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pack", help="bin-pack a workload and print batch statistics")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, help="plan file (default: INPUT with .plan.jsonl suffix)")
    p.add_argument("--capacity", type=int, help="bin capacity (default: longest prompt)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab", type=int, default=256)
    p.add_argument("--dry-run", action="store_true")

    p = sub.add_parser("verify", help="check prepacked prefill against full batching")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=8, help="prompts per trial")
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--corrupt-mask", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--dry-run", action="store_true")
    _add_model_flags(p)

    p = sub.add_parser("bench", help="time batching strategies across batch sizes")
    _add_workload_flags(p, required=True)
    p.add_argument("--output", type=Path, help="CSV path (default: stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=_int_list, default=[16], help="comma-separated sizes")
    p.add_argument("--strategies", type=_strategies, default=list(Strategy))
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--max-batches", type=int, help="cap on batches per cell")
    p.add_argument("--element-budget", type=int, help="simulated memory limit in elements")
    p.add_argument("--dry-run", action="store_true")
    _add_model_flags(p)

    p = sub.add_parser("predict", help="regress speedup on batch length statistics")
    _add_workload_flags(p, required=True)
    p.add_argument("--output", type=Path, help="scatter CSV path (default: stdout)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--mode", choices=("cost", "measured"), default="cost")
    p.add_argument("--n-batches", type=int, help="cap on batches")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--dry-run", action="store_true")
    _add_model_flags(p)

    p = sub.add_parser("probe", help="prefill latency of dense (k, m) batches")
    p.add_argument("--batch-size", type=_int_list, default=[1, 2, 4, 8, 16, 32, 64], help="values of k")
    p.add_argument("--capacity", type=int, default=128, help="sequence length m")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--element-budget", type=int)
    p.add_argument("--output", type=Path, help="CSV path (default: stdout)")
    p.add_argument("--dry-run", action="store_true")
    _add_model_flags(p)
    return parser


def _weights(args: argparse.Namespace) -> Weights:
    if args.weights is not None:
        return load_weights(args.weights)
    return init_model(ModelConfig(args.vocab, args.d_model, args.heads, args.layers, args.model_seed))


def _config_check(args: argparse.Namespace) -> None:
    if getattr(args, "weights", None) is None:
        ModelConfig(args.vocab, args.d_model, args.heads, args.layers, args.model_seed)
    elif not args.weights.exists():
        raise UsageError(f"weights file {args.weights} not found")


def _workload(args: argparse.Namespace) -> Workload:
    vocab = args.vocab
    if args.input is not None:
        if not args.input.exists():
            raise UsageError(f"workload file {args.input} not found")
        return load_workload(args.input, args.seed, vocab)
    if args.n_prompts < 1:
        raise UsageError("--n-prompts must be >= 1")
    return synthetic_workload(args.workload, args.n_prompts, args.seed, vocab)


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _workload_file(args: argparse.Namespace) -> Workload:
    if not args.input.exists():
        raise UsageError(f"workload file {args.input} not found")
    return load_workload(args.input, args.seed, args.vocab)


def cmd_pack(args: argparse.Namespace) -> int:
    workload = _workload_file(args)
    lengths = workload.lengths
    output = args.output or args.input.with_suffix(".plan.jsonl")
    if args.dry_run:
        print(f"would pack {len(lengths)} prompts (capacity {args.capacity or max(lengths)}) into {output}")
        return EXIT_OK
    plan = ffd_pack(lengths, args.capacity)
    output.write_text(dumps_plan(plan))
    stats = batch_stats(lengths, plan)
    print(f"k={stats.k}")
    print(f"m={stats.m}")
    print(f"capacity={plan.capacity}")
    print(f"L={stats.total_length}")
    print(f"r={stats.r}")
    print(f"mad={float(stats.max_abs_deviation):.4f}")
    print(f"bsr={float(stats.batch_size_reduction):.4f}")
    print(f"predicted_speedup={float(predicted_speedup(stats)):.4f}")
    print(f"plan={output}")
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    _config_check(args)
    if args.trials < 0 or args.batch_size < 1 or args.max_len < 1:
        raise UsageError("--trials must be >= 0; --batch-size and --max-len >= 1")
    if args.dry_run:
        print(f"would run {args.trials} trials of {args.batch_size} prompts (lengths 1..{args.max_len})")
        return EXIT_OK
    if args.trials == 0:
        print("warning: 0 trials requested; nothing was checked", file=sys.stderr)
        print("result=pass trials=0")
        return EXIT_OK
    report = verify_equivalence(
        _weights(args),
        args.trials,
        args.seed,
        batch_size=args.batch_size,
        max_len=args.max_len,
        tolerance=args.tolerance,
        corrupt_mask=args.corrupt_mask,
    )
    status = "pass" if report.passed else "fail"
    print(
        f"result={status} trials={report.trials} failed={len(report.failed_trials)} "
        f"max_deviation={report.max_deviation:.3e} tolerance={report.tolerance:.1e} "
        f"argmax_mismatches={report.argmax_mismatches} decode_mismatches={report.decode_mismatches}"
    )
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_bench(args: argparse.Namespace) -> int:
    _config_check(args)
    if args.reps < 1 or args.warmup < 0:
        raise UsageError("--reps must be >= 1 and --warmup >= 0")
    workload = _workload(args)
    if args.dry_run:
        for size in args.batch_size:
            for s in args.strategies:
                n = len(make_batches(workload, size, s, args.seed)[: args.max_batches])
                print(f"would run {s.value} batch_size={size}: {n} batches x {args.reps} reps")
        return EXIT_OK
    cells = sweep_batch_size(
        _weights(args),
        workload,
        args.batch_size,
        args.strategies,
        seed=args.seed,
        repetitions=args.reps,
        warmup=args.warmup,
        max_batches=args.max_batches,
        element_budget=args.element_budget,
    )
    _emit(csv_text(cells), args.output)
    failed = sum(not c.ok for c in cells)
    if failed:
        print(f"{failed} of {len(cells)} cells exceeded the element budget", file=sys.stderr)
    return EXIT_FAIL if failed == len(cells) else EXIT_OK


def cmd_predict(args: argparse.Namespace) -> int:
    _config_check(args)
    workload = _workload(args)
    if args.dry_run:
        print(f"would regress {args.mode} speedup over batches of {args.batch_size} from {len(workload)} prompts")
        return EXIT_OK
    weights = _weights(args) if args.mode == "measured" else None
    result = regression_experiment(
        weights,
        workload,
        args.batch_size,
        args.seed,
        mode=args.mode,
        n_batches=args.n_batches,
        repetitions=args.reps,
    )
    _emit(result.scatter_csv(), args.output)
    stream = sys.stderr if args.output is None else sys.stdout
    print(f"mode={result.mode} batches={len(result.rows)}", file=stream)
    for name, fit in (("mad", result.fit_mad), ("bsr", result.fit_bsr), ("inverse_bsr", result.fit_inverse_bsr)):
        print(f"fit_{name}: slope={fit.slope:.6f} intercept={fit.intercept:.6f} r_squared={fit.r_squared:.6f}", file=stream)
    return EXIT_OK


def cmd_probe(args: argparse.Namespace) -> int:
    _config_check(args)
    if args.capacity < 1 or args.reps < 1:
        raise UsageError("--capacity and --reps must be >= 1")
    if args.dry_run:
        print(f"would time k in {args.batch_size} at m={args.capacity}, {args.reps} runs each")
        return EXIT_OK
    rows = batch_parallelism_probe(
        _weights(args),
        args.batch_size,
        args.capacity,
        args.reps,
        args.warmup,
        seed=args.seed,
        element_budget=args.element_budget,
    )
    _emit(probe_csv(rows), args.output)
    return EXIT_OK


COMMANDS = {
    "pack": cmd_pack,
    "verify": cmd_verify,
    "bench": cmd_bench,
    "predict": cmd_predict,
    "probe": cmd_probe,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, PrepackError, ValueError, OSError) as exc:
        print(f"prepack {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
