import csv
import io
import json
from unittest import mock

import pytest

from peng_cde import cli
from peng_cde.bench import BENCH_HEADER
from peng_cde.checks import CheckResult
from peng_cde.cli import call_command
from peng_cde.commands.base import BaseCommand, CommandError
from peng_cde.commands.gen import file_name, series_seed
from peng_cde.config import resolve_run_config
from peng_cde.errors import StepUnderflowError, TrainingDivergedError
from peng_cde.graphgen import load_series
from peng_cde.model import ModelConfig, ModelParams, Variant
from peng_cde.solvers import SolverConfig
from peng_cde.trainer import Checkpoint, save_checkpoint

HEAT = ["--task", "heat", "--graph", "community", "--seeds", "2"]
TINY = ["--n", "6", "--num-times", "12", "--num-changes", "2", "--t-end", "1.0"]
FAST_TRAIN = ["--epochs", "2", "--hidden", "2", "--solver", "rk4", "--num-steps", "4"]


def run(name, *args):
    stdout = io.StringIO()
    call_command(name, *args, stdout=stdout)
    return stdout.getvalue()


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    run("gen", *HEAT, "-o", str(out), *TINY)
    return out


@pytest.fixture(scope="module")
def run_dir(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    run("train", "-d", str(data_dir), "-o", str(out), "--seeds", "2", *FAST_TRAIN)
    return out


def test_gen_command_with_no_options():
    with pytest.raises(CommandError) as e_info:
        call_command("gen")

    assert "Error: the following arguments are required: -o/--out" in str(e_info.value)


def test_unknown_command():
    with pytest.raises(CommandError) as e_info:
        call_command("serve")

    assert "Unknown command 'serve'" in str(e_info.value)


def test_registry_builds_named_commands():
    for name, command_class in cli.COMMANDS.items():
        assert issubclass(command_class, BaseCommand)
        assert cli.get_command(name).name == name
    assert cli.COMMANDS["eval"].__module__ == "peng_cde.commands.evaluate"


def test_gen_writes_one_file_per_role_and_seed(data_dir):
    names = sorted(p.name for p in data_dir.glob("*.json"))
    assert names == [
        "heat-community-test-00.json",
        "heat-community-test-01.json",
        "heat-community-train-00.json",
        "heat-community-train-01.json",
        "heat-community-val-00.json",
        "heat-community-val-01.json",
    ]
    series = load_series(data_dir / "heat-community-val-01.json")
    assert series.n == 6
    assert series.meta["role"] == "val"
    assert series.meta["task"] == "heat"


def test_gen_is_reproducible(data_dir, tmp_path):
    run("gen", *HEAT, "-o", str(tmp_path), *TINY)
    for path in data_dir.glob("*.json"):
        assert (tmp_path / path.name).read_bytes() == path.read_bytes()


def test_gen_sir_covers_both_regimes(tmp_path):
    output = run("gen", "--task", "sir", "--seeds", "1", "-o", str(tmp_path), *TINY)
    assert "Wrote 6 series to" in output
    assert (tmp_path / "sir-grid-train-die-out-00.json").exists()
    labels = {
        load_series(p).meta["regime"]: load_series(p).labels
        for p in tmp_path.glob("sir-*-train-*.json")
    }
    assert labels == {"die-out": [0], "outbreak": [1]}


def test_gen_prints_the_resolved_config(tmp_path):
    output = run("gen", "--seeds", "1", "--seed", "3", "-o", str(tmp_path), *TINY)
    config = json.loads(output[: output.rindex("}") + 1])
    assert config["command"] == "gen"
    assert config["seeds"] == [3]
    assert config["settings"]["n"] == 6


def test_gen_rejects_bad_counts(tmp_path):
    with pytest.raises(CommandError) as e_info:
        call_command("gen", "--seeds", "0", "-o", str(tmp_path), stdout=io.StringIO())
    assert "--seeds must be >= 1" in str(e_info.value)

    with pytest.raises(CommandError) as e_info:
        call_command(
            "gen", "-o", str(tmp_path), "--num-times", "3", stdout=io.StringIO()
        )
    assert e_info.value.exit_code == 2


def test_series_seeds_and_file_names_differ_per_job():
    seeds = {
        series_seed(0, role, index, regime)
        for role in ("train", "val", "test")
        for index in range(3)
        for regime in (None, "outbreak", "die-out")
    }
    assert len(seeds) == 27
    run_config = resolve_run_config("gen", {"task": "sir"})
    name = file_name(run_config, "val", 3, "outbreak")
    assert name == "sir-grid-val-outbreak-03.json"


def test_train_writes_checkpoints_and_history(run_dir):
    assert (run_dir / "peng-seed0.json").exists()
    assert (run_dir / "peng-seed1.json").exists()
    with open(run_dir / "peng-seed1-history.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["epoch", "train", "interp_val", "extrap_val"]
    assert len(rows) == 3
    payload = json.loads((run_dir / "peng-seed1.json").read_text())
    assert payload["seed"] == 1
    assert payload["meta"]["task"] == "heat"
    assert payload["solver"]["method"] == "rk4"


def test_train_unknown_variant(data_dir, tmp_path):
    with pytest.raises(CommandError) as e_info:
        call_command(
            "train",
            "-d",
            str(data_dir),
            "-o",
            str(tmp_path),
            "--variant",
            "gat",
            stdout=io.StringIO(),
        )
    assert e_info.value.exit_code == 2
    assert "Unknown variant 'gat'" in str(e_info.value)


def test_train_divergence_exits_with_numerical_code(data_dir, tmp_path):
    def diverge(params, dataset, config):
        raise TrainingDivergedError(1, params, [])

    with mock.patch("peng_cde.commands.train.train", side_effect=diverge):
        with pytest.raises(CommandError) as e_info:
            call_command(
                "train", "-d", str(data_dir), "-o", str(tmp_path), *FAST_TRAIN,
                stdout=io.StringIO(),
            )
    assert e_info.value.exit_code == 3
    assert (tmp_path / "peng-seed0.json").exists()


def test_eval_writes_metrics_and_curves(data_dir, run_dir, tmp_path):
    out = tmp_path / "metrics.csv"
    output = run(
        "eval",
        "-c",
        str(run_dir / "peng-seed0.json"),
        str(run_dir / "peng-seed1.json"),
        "-d",
        str(data_dir),
        "-o",
        str(out),
    )
    with open(out, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == [
        "seed",
        "variant",
        "task",
        "graph_kind",
        "split",
        "value",
        "epochs_run",
        "wall_seconds",
    ]
    assert len(rows) == 1 + 2 * 3
    assert {row[4] for row in rows[1:]} == {"train", "interp", "extrap"}
    assert (tmp_path / "metrics-peng-seed1-per-snapshot.csv").exists()
    assert "peng interp:" in output
    assert "(runs=2)" in output
    assert "peng extrap_growth:" in output


def test_eval_reports_solver_failures(data_dir, run_dir, tmp_path):
    failure = StepUnderflowError(0.5, 1e-15, 1.0)
    with mock.patch("peng_cde.commands.evaluate.evaluate", side_effect=failure):
        with pytest.raises(CommandError) as e_info:
            call_command(
                "eval",
                "-c",
                str(run_dir / "peng-seed0.json"),
                "-d",
                str(data_dir),
                "-o",
                str(tmp_path / "metrics.csv"),
                stdout=io.StringIO(),
            )
    assert e_info.value.exit_code == 3
    assert "Step size underflow" in str(e_info.value)


@mock.patch("peng_cde.commands.check.run_suite")
def test_check_command_passes(run_suite):
    run_suite.return_value = [CheckResult("rk4 slope", 0.01, 0.2)]
    output = run("check", "solver-order", "--seed", "4")

    run_suite.assert_called_once_with("solver-order", 4)
    assert "[solver-order] PASS rk4 slope" in output
    assert output.rstrip().endswith("All 1 checks passed")


@mock.patch("peng_cde.commands.check.run_suite")
def test_check_command_reports_failures(run_suite):
    run_suite.return_value = [
        CheckResult("ok", 0.0, 1.0),
        CheckResult("broken", 2.0, 1.0, case={"n": 3}),
    ]
    stdout = io.StringIO()
    with pytest.raises(CommandError) as e_info:
        call_command("check", stdout=stdout)

    assert run_suite.call_count == 5
    assert e_info.value.exit_code == 1
    assert "5 of 10 checks failed" in str(e_info.value)
    assert '"case": {"n": 3}' in stdout.getvalue()


def test_check_command_rejects_unknown_suites():
    with pytest.raises(CommandError) as e_info:
        call_command("check", "speed")
    assert "invalid choice: 'speed'" in str(e_info.value)


@pytest.fixture
def peng_checkpoint(data_dir, tmp_path):
    series = load_series(data_dir / "heat-community-train-00.json")
    params = ModelParams.initialize(ModelConfig.for_series(Variant.PENG, series))
    path = tmp_path / "peng-seed0.json"
    save_checkpoint(path, Checkpoint(params, SolverConfig(), 0))
    return path


def test_ablate_prints_the_fusion_table(peng_checkpoint):
    output = run("ablate", "-c", str(peng_checkpoint))
    lines = output.splitlines()
    assert "Identity" + " " * 21 + "layer=1 A     1.0000*" in lines
    assert "Transpose" + " " * 20 + "layer=1 dA    0.0000 " in lines
    assert sum(line.endswith("*") for line in lines) == 2


def test_ablate_writes_csv(peng_checkpoint, tmp_path):
    out = tmp_path / "ablation.csv"
    output = run("ablate", "-c", str(peng_checkpoint), "-o", str(out))
    assert f"Wrote 30 rows to {out}" in output
    assert out.read_text().startswith("operation,layer,channel,weight,bold")


def test_ablate_needs_a_peng_checkpoint(data_dir, tmp_path):
    series = load_series(data_dir / "heat-community-train-00.json")
    params = ModelParams.initialize(ModelConfig.for_series(Variant.PREMULT, series))
    path = tmp_path / "premult-seed0.json"
    save_checkpoint(path, Checkpoint(params, SolverConfig(), 0))
    with pytest.raises(CommandError) as e_info:
        call_command("ablate", "-c", str(path), stdout=io.StringIO())
    assert "fusion ablation needs a peng model" in str(e_info.value)


def test_bench_command(tmp_path):
    out = tmp_path / "bench.csv"
    output = run("bench", "--sizes", "8", "12", "-o", str(out))
    assert "fusion_params=30" in output
    assert "fusion_params=288" in output
    with open(out, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == BENCH_HEADER
    assert [row[:2] for row in rows[1:]] == [
        ["peng", "8"],
        ["premult", "8"],
        ["peng", "12"],
        ["premult", "12"],
    ]

    with pytest.raises(CommandError):
        call_command("bench", "--sizes", "1", stdout=io.StringIO())


def test_main_without_a_command(capsys):
    assert cli.main(["peng-cde"]) == 2
    usage = capsys.readouterr().out
    assert usage.startswith("usage: peng-cde {gen,train,eval,check,ablate,bench}")
    assert cli.main(["peng-cde", "--help"]) == 0


def test_main_exit_codes(capsys):
    assert cli.main(["peng-cde", "serve"]) == 2
    assert cli.main(["peng-cde", "check", "--seed", "x"]) == 2
    with mock.patch(
        "peng_cde.commands.check.run_suite",
        return_value=[CheckResult("broken", 2.0, 1.0)],
    ):
        assert cli.main(["peng-cde", "check", "solver-order", "-v", "0"]) == 1
    with mock.patch(
        "peng_cde.commands.check.run_suite",
        return_value=[CheckResult("fine", 0.0, 1.0)],
    ):
        assert cli.main(["peng-cde", "check", "solver-order", "-v", "0"]) == 0
    assert "1 of 1 checks failed" in capsys.readouterr().err
