import csv
import io
import json

import pytest

from prepack.bench import CSV_HEADER, save_workload, uniform_workload
from prepack.cli import main
from prepack.model import ModelConfig, init_model, save_weights
from prepack.packing import read_plan

SMALL = ["--layers", "1", "--d-model", "16", "--heads", "2"]
WALL_TIME = {"prefill_ms_mean", "prefill_ms_std", "ttft_ms_mean", "ttft_ms_std", "unpack_ms_mean", "speedup_vs_full"}


def write_lengths(path, lengths):
    path.write_text("".join(json.dumps({"id": i, "length": n}) + "\n" for i, n in enumerate(lengths)))
    return path


def stats(out):
    return dict(line.split("=", 1) for line in out.splitlines())


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestPack:
    def test_hand_example(self, tmp_path, capsys):
        src = write_lengths(tmp_path / "w.jsonl", [5, 3, 2])
        code, out, _ = run(capsys, "pack", "--input", str(src))
        assert code == 0
        s = stats(out)
        assert (s["k"], s["m"], s["L"], s["r"]) == ("3", "5", "10", "2")
        assert float(s["predicted_speedup"]) == 1.5
        assert float(s["bsr"]) == pytest.approx(2 / 3, abs=1e-4)
        plan = read_plan(s["plan"])
        assert plan.r == 2 and plan.lengths() == [5, 3, 2]

    def test_single_prompt(self, tmp_path, capsys):
        src = write_lengths(tmp_path / "w.jsonl", [7])
        code, out, _ = run(capsys, "pack", "--input", str(src), "--output", str(tmp_path / "p.jsonl"))
        s = stats(out)
        assert code == 0 and s["r"] == "1" and float(s["predicted_speedup"]) == 1.0
        assert (tmp_path / "p.jsonl").exists()

    def test_capacity_override(self, tmp_path, capsys):
        src = write_lengths(tmp_path / "w.jsonl", [5, 3, 2])
        _, out, _ = run(capsys, "pack", "--input", str(src), "--capacity", "10")
        assert stats(out)["r"] == "1"
        code, _, err = run(capsys, "pack", "--input", str(src), "--capacity", "4")
        assert code == 2 and "capacity" in err

    def test_zero_length_prompt(self, tmp_path, capsys):
        src = write_lengths(tmp_path / "w.jsonl", [3, 0])
        code, out, err = run(capsys, "pack", "--input", str(src))
        assert code == 2 and "length" in err and not out

    @pytest.mark.parametrize("text", ["garbage\n", ""])
    def test_malformed_file(self, tmp_path, capsys, text):
        src = tmp_path / "w.jsonl"
        src.write_text(text)
        assert run(capsys, "pack", "--input", str(src))[0] == 2

    def test_missing_file(self, tmp_path, capsys):
        assert run(capsys, "pack", "--input", str(tmp_path / "nope.jsonl"))[0] == 2


class TestVerify:
    def test_passes(self, capsys):
        code, out, _ = run(capsys, "verify", "--trials", "5", "--seed", "1")
        assert code == 0
        assert out.startswith("result=pass trials=5 failed=0")
        assert float(out.split("max_deviation=")[1].split()[0]) <= 1e-4

    def test_zero_trials_warns(self, capsys):
        code, out, err = run(capsys, "verify", "--trials", "0")
        assert code == 0 and "result=pass" in out and "warning" in err

    def test_corrupt_mask_fails(self, capsys):
        code, out, _ = run(capsys, "verify", "--trials", "3", "--corrupt-mask")
        assert code == 1 and out.startswith("result=fail")
        assert float(out.split("max_deviation=")[1].split()[0]) > 1e-4

    def test_saved_weights(self, tmp_path, capsys):
        path = tmp_path / "w.bin"
        save_weights(init_model(ModelConfig(32, 16, 2, 1, 5)), path)
        code, out, _ = run(capsys, "verify", "--trials", "2", "--weights", str(path))
        assert code == 0 and "result=pass" in out

    def test_bad_config(self, capsys):
        code, _, err = run(capsys, "verify", "--heads", "3")
        assert code == 2 and "error" in err


class TestBench:
    def test_single_cell(self, capsys):
        code, out, _ = run(
            capsys, "bench", "--workload", "uniform:1:32", "--n-prompts", "12", "--batch-size", "4",
            "--strategies", "batch_prepacking", "--reps", "1", "--warmup", "0", *SMALL,
        )
        rows = list(csv.DictReader(io.StringIO(out)))
        assert code == 0 and len(rows) == 1
        assert list(rows[0]) == CSV_HEADER
        assert rows[0]["strategy"] == "batch_prepacking" and rows[0]["k"] == "12"

    def test_pad_ordering_all_strategies(self, capsys):
        # Small workload for runtime; the acceptance suite checks the full-size one.
        code, out, _ = run(
            capsys, "bench", "--workload", "uniform:1:512", "--n-prompts", "32", "--batch-size", "8",
            "--strategies", "all", "--reps", "1", "--warmup", "0", *SMALL,
        )
        pads = {r["strategy"]: int(r["pad_tokens"]) for r in csv.DictReader(io.StringIO(out))}
        assert code == 0
        assert pads["dataset_prepacking"] <= pads["length_ordered"] <= pads["full_batching"]

    def test_low_budget_marks_oom(self, capsys):
        code, out, err = run(
            capsys, "bench", "--workload", "uniform:1:32", "--n-prompts", "8", "--batch-size", "2,8",
            "--strategies", "full_batching,batch_prepacking", "--reps", "1", "--warmup", "0",
            "--element-budget", "10000", *SMALL,
        )
        rows = list(csv.DictReader(io.StringIO(out)))
        assert code == 0
        assert {r["prefill_ms_mean"] == "oom" for r in rows} == {True, False}
        assert "exceeded" in err

    def test_all_cells_oom_exits_nonzero(self, capsys):
        code, out, _ = run(
            capsys, "bench", "--workload", "uniform:1:32", "--n-prompts", "8", "--batch-size", "8",
            "--reps", "1", "--warmup", "0", "--element-budget", "1", *SMALL,
        )
        assert code == 1 and all(r["ttft_ms_mean"] == "oom" for r in csv.DictReader(io.StringIO(out)))

    def test_deterministic_apart_from_wall_time(self, tmp_path, capsys):
        src = tmp_path / "w.jsonl"
        save_workload(uniform_workload(20, 1, 40, seed=9), src, lengths_only=True)
        outputs = []
        for name in ("a.csv", "b.csv"):
            argv = ["bench", "--input", str(src), "--batch-size", "4,8", "--reps", "1", "--warmup", "0",
                    "--seed", "3", "--output", str(tmp_path / name), *SMALL]
            assert run(capsys, *argv)[0] == 0
            rows = list(csv.DictReader((tmp_path / name).open()))
            outputs.append([{k: v for k, v in r.items() if k not in WALL_TIME} for r in rows])
        assert outputs[0] == outputs[1]
        assert len(outputs[0]) == 8

    def test_needs_workload(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["bench"])
        assert exc.value.code == 2


class TestPredict:
    def test_cost_mode(self, capsys):
        code, out, err = run(capsys, "predict", "--workload", "uniform:1:512", "--n-prompts", "320", "--batch-size", "8")
        assert code == 0
        assert len(out.splitlines()) == 1 + 40
        assert "fit_inverse_bsr: slope=1.000000 intercept=0.000000 r_squared=1.000000" in err

    def test_measured_mode(self, tmp_path, capsys):
        dest = tmp_path / "scatter.csv"
        code, out, _ = run(
            capsys, "predict", "--workload", "uniform:1:64", "--n-prompts", "48", "--batch-size", "8",
            "--mode", "measured", "--reps", "1", "--output", str(dest), *SMALL,
        )
        assert code == 0 and "r_squared=" in out
        assert len(dest.read_text().splitlines()) == 1 + 6

    def test_constant_lengths_degenerate(self, tmp_path, capsys):
        src = write_lengths(tmp_path / "w.jsonl", [16] * 64)
        code, _, err = run(capsys, "predict", "--input", str(src), "--batch-size", "8")
        assert code == 2 and "do not vary" in err


class TestProbe:
    def test_rows(self, capsys):
        code, out, _ = run(capsys, "probe", "--batch-size", "1,2", "--capacity", "8", "--reps", "2", "--warmup", "0", *SMALL)
        lines = out.splitlines()
        assert code == 0 and lines[0].startswith("k,m,runs")
        assert [line.split(",")[0] for line in lines[1:]] == ["1", "2"]


@pytest.mark.parametrize(
    "argv",
    [
        ["verify", "--trials", "1000"],
        ["bench", "--workload", "uniform:1:512", "--n-prompts", "5000", "--batch-size", "64"],
        ["predict", "--workload", "uniform:1:512", "--n-prompts", "5000", "--mode", "measured"],
        ["probe", "--reps", "100000"],
    ],
)
def test_dry_run_is_fast(capsys, argv):
    code, out, _ = run(capsys, *argv, "--dry-run")
    assert code == 0 and out.startswith("would")


def test_pack_dry_run_writes_nothing(tmp_path, capsys):
    src = write_lengths(tmp_path / "w.jsonl", [5, 3, 2])
    code, out, _ = run(capsys, "pack", "--input", str(src), "--dry-run")
    assert code == 0 and out.startswith("would")
    assert not (tmp_path / "w.plan.jsonl").exists()


def test_dry_run_still_validates(capsys):
    assert run(capsys, "verify", "--d-model", "30", "--heads", "4", "--dry-run")[0] == 2


@pytest.mark.parametrize("argv", [["pack", "--bogus"], ["frobnicate"], ["bench", "--workload", "x", "--strategies", "greedy"]])
def test_usage_errors_exit_2(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
