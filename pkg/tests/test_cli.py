"""Command-line layer: exit codes, file formats, and byte determinism.

Fast paths run in-process through main(); a few end-to-end checks go through
a subprocess to pin down the real exit status contract.
"""

import json
import subprocess
import sys

import numpy as np
import pytest

from memtax import cells as cl
from memtax import cli
from memtax import modelio
from memtax import training as tr

FAST_TRAIN = '{"episodes": 60, "eval_every": 20, "eval_episodes": 5, "confirm_episodes": 10}'
EASY_TRAIN = (
    '{"episodes": 60, "eval_every": 20, "eval_episodes": 5,'
    ' "confirm_episodes": 10, "threshold": 100.0}'
)


def run_cli(*argv):
    return cli.main(list(argv))


# ---------------------------------------------------------------------------
# model files


def small_cell():
    cfg = cl.RnnConfig(k_in=3, k_hidden=4, k_out=3)
    return cl.RnnCell(cfg, cl.init_params(cfg, seed=7))


def test_model_round_trip_is_byte_identical(tmp_path):
    path = tmp_path / "m.json"
    cell = small_cell()
    modelio.save_model(path, cell, init={"seed": 7, "scheme": "scaled"})
    loaded, doc = modelio.load_model(path)
    assert doc["format_version"] == modelio.FORMAT_VERSION
    for name, value in cell.params.items():
        assert loaded.params[name].tobytes() == value.tobytes()
    again = tmp_path / "m2.json"
    modelio.save_model(again, loaded, init=doc["init"])
    assert path.read_bytes() == again.read_bytes()
    assert not (tmp_path / "m.json.tmp").exists()


def test_model_file_rejects_unknown_arch_and_version(tmp_path):
    path = tmp_path / "m.json"
    cell = small_cell()
    modelio.save_model(path, cell)
    doc = json.loads(path.read_text())
    doc["arch"] = "transformer"
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="unknown architecture"):
        modelio.load_model(path)
    doc["arch"] = "rnn"
    doc["format_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="format version"):
        modelio.load_model(path)


# ---------------------------------------------------------------------------
# train


def test_train_writes_artifacts_and_signals_budget_exhaustion(tmp_path):
    model = tmp_path / "m.json"
    curve = tmp_path / "c.csv"
    code = run_cli(
        "train", "--arch", "rnn", "--task", "count", "--seed", "2",
        "--config", FAST_TRAIN, "--out-model", str(model), "--out-curve", str(curve),
    )
    assert code == cli.EX_BUDGET
    lines = curve.read_text().splitlines()
    assert lines[0] == "episode,loss,success"
    assert len(lines) == 4  # evals at 20, 40, 60
    cell, doc = modelio.load_model(model)
    assert doc["result"]["success"] is False
    assert doc["training"]["task"] == "count"
    assert doc["init"] == {"seed": 2, "scheme": "scaled"}


def test_train_exit_zero_when_threshold_reached(tmp_path):
    code = run_cli(
        "train", "--arch", "rnn", "--task", "count", "--seed", "1",
        "--config", EASY_TRAIN, "--out-model", str(tmp_path / "m.json"),
    )
    assert code == cli.EX_OK
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["result"]["success"] is True


@pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
@pytest.mark.filterwarnings("ignore:invalid value encountered:RuntimeWarning")
def test_train_divergence_exit_code(tmp_path, capsys):
    curve = tmp_path / "c.csv"
    code = run_cli(
        "train", "--arch", "rnn", "--task", "count", "--seed", "5",
        "--config", '{"episodes": 200, "lr": 1e9, "optimizer": "sgd", "clip_norm": 1e12}',
        "--out-curve", str(curve),
    )
    assert code == cli.EX_DIVERGED
    assert "diverged" in capsys.readouterr().err


def test_train_rejects_unknown_config_keys(capsys):
    code = run_cli(
        "train", "--arch", "rnn", "--task", "count", "--config", '{"bogus": 1}'
    )
    assert code == cli.EX_USAGE
    code = run_cli(
        "train", "--arch", "rnn", "--task", "count", "--config", "not json"
    )
    assert code == cli.EX_USAGE
    code = run_cli(
        "train", "--arch", "rnn", "--task", "count",
        "--config", '{"cell": {"bogus": 1}}',
    )
    assert code == cli.EX_USAGE
    capsys.readouterr()


def test_paper_init_flag_switches_scheme(tmp_path):
    model = tmp_path / "m.json"
    run_cli(
        "train", "--arch", "rnn", "--task", "count", "--paper-init",
        "--config", EASY_TRAIN, "--out-model", str(model),
    )
    doc = json.loads(model.read_text())
    assert doc["init"]["scheme"] == "raw"


def test_missing_required_flag_exits_64():
    with pytest.raises(SystemExit) as exc:
        run_cli("train", "--task", "count")
    assert exc.value.code == cli.EX_USAGE
    with pytest.raises(SystemExit) as exc:
        run_cli("reduce-verify", "--pair", "bogus")
    assert exc.value.code == cli.EX_USAGE


# ---------------------------------------------------------------------------
# trace


@pytest.fixture(scope="module")
def trained_model(tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "rnn-count.json"
    run_cli(
        "train", "--arch", "rnn", "--task", "count", "--seed", "2",
        "--config", FAST_TRAIN, "--out-model", str(path),
    )
    return path


def test_trace_long_format_and_determinism(tmp_path, trained_model):
    out1 = tmp_path / "t1.csv"
    out2 = tmp_path / "t2.csv"
    for out in (out1, out2):
        assert run_cli(
            "trace", "--model", str(trained_model),
            "--input", "bbacac", "--out", str(out),
        ) == cli.EX_OK
    assert out1.read_bytes() == out2.read_bytes()
    lines = out1.read_text().splitlines()
    assert lines[0] == "step,symbol,series,row,col,value"
    # rnn: hidden (4 rows) + output (3 rows) per step, 6 steps
    assert len(lines) == 1 + 6 * 7
    first = lines[1].split(",")
    assert first[:5] == ["0", "b", "hidden", "0", "0"]
    assert float(first[5]) == pytest.approx(float(first[5]))


def test_trace_unknown_symbol_exits_65(trained_model, capsys):
    code = run_cli("trace", "--model", str(trained_model), "--input", "abq")
    assert code == cli.EX_DATAERR
    assert "not valid" in capsys.readouterr().err


def test_trace_empty_input_header_only(trained_model, capsys):
    assert run_cli("trace", "--model", str(trained_model), "--input", "") == cli.EX_OK
    out = capsys.readouterr().out
    assert out == "step,symbol,series,row,col,value\n"


def test_trace_needs_task_when_metadata_missing(tmp_path, capsys):
    bare = tmp_path / "bare.json"
    modelio.save_model(bare, small_cell())
    assert run_cli("trace", "--model", str(bare), "--input", "ab") == cli.EX_USAGE
    capsys.readouterr()
    assert (
        run_cli("trace", "--model", str(bare), "--input", "ab", "--task", "count")
        == cli.EX_OK
    )
    out = capsys.readouterr().out
    assert out.startswith("step,symbol,series,row,col,value\n0,a,hidden,0,0,")


def test_trace_missing_model_exits_65(tmp_path, capsys):
    code = run_cli("trace", "--model", str(tmp_path / "nope.json"), "--input", "a")
    assert code == cli.EX_DATAERR
    capsys.readouterr()


# ---------------------------------------------------------------------------
# reduce-verify / grad-check


def test_reduce_verify_report_file(tmp_path):
    out = tmp_path / "r.json"
    code = run_cli(
        "reduce-verify", "--pair", "stack-lstm", "--len", "8", "--seeds", "3",
        "--out", str(out),
    )
    assert code == cli.EX_OK
    report = json.loads(out.read_text())
    assert report["verdict"] == "equivalent"
    assert len(report["seeds"]) == 3
    assert report["max_deviation"] < 1e-10


def test_reduce_verify_len_zero(capsys):
    assert run_cli("reduce-verify", "--pair", "chain", "--len", "0", "--seeds", "2") == 0
    report = json.loads(capsys.readouterr().out)
    assert report["max_deviation"] == 0.0


def test_grad_check_exit_zero(capsys):
    assert run_cli("grad-check", "--arch", "rnn", "--trials", "2") == cli.EX_OK
    out = capsys.readouterr().out
    assert "overall" in out
    assert run_cli("grad-check", "--arch", "rnn", "--trials", "0") == cli.EX_USAGE
    capsys.readouterr()


# ---------------------------------------------------------------------------
# matrix


def test_matrix_budget_scale_zero_all_fail(tmp_path, monkeypatch):
    monkeypatch.setenv("MEMTAX_THREADS", "1")
    out = tmp_path / "m.csv"
    code = run_cli("matrix", "--budget-scale", "0", "--seeds", "1", "--out", str(out))
    assert code == cli.EX_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "arch,task,success,seed_used,episodes,metric"
    assert len(lines) == 17
    for line in lines[1:]:
        arch, task, success, seed_used, episodes, metric = line.split(",")
        assert success == "0" and episodes == "0"
    # fixed row order: task-major, architectures in hierarchy order
    assert [l.split(",")[0] for l in lines[1:5]] == ["rnn", "lstm", "stack", "ram"]
    assert lines[1].split(",")[1] == "count"
    assert lines[5].split(",")[1] == "count-interf"


def test_matrix_negative_budget_rejected(capsys):
    assert run_cli("matrix", "--budget-scale", "-1") == cli.EX_USAGE
    capsys.readouterr()


def test_matrix_seed_count_defaults():
    assert cli.matrix_seed_count("ram", "repeat-copy", 0) == 5
    assert cli.matrix_seed_count("rnn", "count", 0) == 3
    assert cli.matrix_seed_count("ram", "repeat-copy", 2) == 2


# ---------------------------------------------------------------------------
# true subprocess checks (entry point + exit status)


def test_subprocess_exit_codes(tmp_path):
    base = [sys.executable, "-m", "memtax.cli"]
    done = subprocess.run(
        base + ["train", "--arch", "rnn", "--task", "count", "--seed", "1",
                "--config", EASY_TRAIN],
        capture_output=True, text=True,
    )
    assert done.returncode == 0, done.stderr
    done = subprocess.run(base + ["train", "--task", "count"], capture_output=True)
    assert done.returncode == cli.EX_USAGE
    done = subprocess.run(
        base + ["reduce-verify", "--pair", "lstm-rnn", "--len", "5", "--seeds", "2"],
        capture_output=True, text=True,
    )
    assert done.returncode == 0
    assert json.loads(done.stdout)["verdict"] == "equivalent"
