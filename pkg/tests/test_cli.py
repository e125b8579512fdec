"""Tests for the CLI commands."""

import json
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from factorizephys.checkpoint import save_checkpoint
from factorizephys.cli import build_parser, main
from factorizephys.config import TrainConfig, save_config
from factorizephys.datasets import generate_dataset
from factorizephys.formats import write_matrix_csv
from factorizephys.model import param_init
from tests.conftest import build_tiny_arch, tiny_synth_config


def last_json_line(text):
    return json.loads(text.strip().splitlines()[-1])


@pytest.fixture
def synth_data(tmp_path, capsys):
    config = save_config(tiny_synth_config(), tmp_path / "synth.yaml")
    assert main(["synth", "--config", str(config), "--out", str(tmp_path / "data"), "--labels-csv"]) == 0
    capsys.readouterr()
    return tmp_path / "data"


@pytest.fixture
def train_yaml(tmp_path, synth_data):
    cfg = TrainConfig(epochs=1, batch_size=2, arch=build_tiny_arch(frames=64).to_dict(), dataset=str(synth_data))
    return save_config(cfg, tmp_path / "train.yaml")


def test_parser_lists_commands():
    parser = build_parser()
    for command in ["synth", "train", "eval", "infer", "factorize", "attnmap", "summary", "sweep"]:
        assert parser.parse_args([command] + {
            "eval": ["ckpt", "--dataset", "d"],
            "infer": ["ckpt", "clip.fpv"],
            "factorize": ["m.csv"],
            "attnmap": ["ckpt", "clip.fpv", "clip.fpl"],
        }.get(command, [])).command == command


def test_no_command_prints_help(capsys):
    assert main([]) == 0
    assert "factorizephys" in capsys.readouterr().out


def test_synth_command(tmp_path, capsys):
    """Test synth writes the manifest, the clips and optional label CSVs."""
    config = save_config(replace(tiny_synth_config(), clips=2), tmp_path / "synth.yaml")
    assert main(["synth", "--config", str(config), "--out", str(tmp_path / "data"), "--labels-csv"]) == 0
    out = capsys.readouterr().out
    assert "✓ clip_000" in out
    assert (tmp_path / "data" / "dataset.json").exists()
    assert (tmp_path / "data" / "clip_000_labels.csv").exists()
    assert len(list((tmp_path / "data").glob("*.fpv"))) == 2


def test_train_eval_infer_attnmap(tmp_path, train_yaml, synth_data, capsys):
    """Test a full run: train, then evaluate, infer and export maps from its checkpoint."""
    run = tmp_path / "run"
    assert main(["train", "--config", str(train_yaml), "--out", str(run), "--seed", "100"]) == 0
    out = capsys.readouterr().out
    assert "epoch 1: loss" in out
    for name in ["checkpoint.fpck", "loss_log.csv", "metrics.json", "run_manifest.json", "train_config.yaml"]:
        assert (run / name).exists(), name
    checkpoint = str(run / "checkpoint.fpck")

    assert main(["eval", checkpoint, "--dataset", str(synth_data), "--no-fsam", "--out", str(tmp_path / "ev")]) == 0
    assert "Evaluated 4 chunks (fsam=False)" in capsys.readouterr().out
    assert json.loads((tmp_path / "ev" / "metrics.json").read_text())[0]["n_chunks"] == 4

    clip = synth_data / "clip_003.fpv"
    assert main(["infer", checkpoint, str(clip)]) == 0
    trace = pd.read_csv(synth_data / "clip_003.rppg.csv")
    assert list(trace.columns) == ["time_s", "chunk", "rppg"]
    assert len(trace) == 126

    maps = tmp_path / "maps"
    labels = synth_data / "clip_003.fpl"
    assert main(["attnmap", checkpoint, str(clip), str(labels), "--chunk", "1", "--out", str(maps)]) == 0
    assert "embedding: 4 tiles" in capsys.readouterr().out
    assert (maps / "embedding_mosaic.pgm").exists()
    assert (maps / "attended_ch03.pgm").exists()


def test_train_is_repeatable(tmp_path, train_yaml, capsys):
    """Test the same seed and data give byte-identical loss logs."""
    for name in ["a", "b"]:
        assert main(["train", "--config", str(train_yaml), "--out", str(tmp_path / name),
                     "--seed", "100", "--no-eval"]) == 0
    capsys.readouterr()
    assert (tmp_path / "a" / "loss_log.csv").read_bytes() == (tmp_path / "b" / "loss_log.csv").read_bytes()
    assert not (tmp_path / "a" / "metrics.json").exists()


def test_eval_mismatched_architecture(tmp_path, capsys):
    """Test a clip size the checkpoint cannot take fails with a JSON ShapeError."""
    cfg = tiny_synth_config()
    data = generate_dataset(replace(cfg, clip=replace(cfg.clip, frame_size=(24, 24))), tmp_path / "wide")
    arch = build_tiny_arch(frames=64)
    checkpoint = save_checkpoint(tmp_path / "m.fpck", param_init(arch, 0), arch)

    assert main(["eval", checkpoint, "--dataset", str(data.root)]) == 1
    error = last_json_line(capsys.readouterr().err)
    assert error["error"] == "ShapeError"
    assert "architecture expects" in error["message"]


def test_missing_checkpoint(tmp_path, capsys):
    assert main(["eval", str(tmp_path / "none.fpck"), "--dataset", str(tmp_path)]) == 1
    assert last_json_line(capsys.readouterr().err)["error"] in {"FileNotFoundError", "FormatError"}


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["train", "--bogus"])
    assert info.value.code == 2
    error = last_json_line(capsys.readouterr().err)
    assert error["error"] == "UsageError"
    assert "--bogus" in error["message"]


def test_factorize_rank_one(tmp_path, capsys):
    """Test an exact rank-1 matrix is reproduced."""
    V = np.outer([1.0, 2.0], [3.0, 4.0])
    matrix = write_matrix_csv(tmp_path / "V.csv", V)
    out = tmp_path / "nmf"
    assert main(["factorize", matrix, "--rank", "1", "--steps", "50", "--out", str(out)]) == 0
    assert "rank 1 in 50 steps" in capsys.readouterr().out

    result = json.loads((out / "factorize.json").read_text())
    assert result["shape"] == [2, 2]
    assert result["objective"] < 1e-8
    V_hat = np.loadtxt(out / "V_hat.csv", delimiter=",", ndmin=2)
    np.testing.assert_allclose(V_hat, V, atol=1e-3)
    assert np.loadtxt(out / "W.csv", delimiter=",", ndmin=2).shape == (2, 1)
    assert np.loadtxt(out / "H.csv", delimiter=",", ndmin=2).shape == (1, 2)


def test_factorize_negative_matrix(tmp_path, capsys):
    matrix = write_matrix_csv(tmp_path / "V.csv", np.array([[1.0, -1.0], [0.0, 2.0]]))
    assert main(["factorize", matrix, "--out", str(tmp_path)]) == 1
    assert last_json_line(capsys.readouterr().err)["error"] == "NmfError"


def test_summary_default(tmp_path, capsys):
    """Test the default architecture summary reports its parameter total."""
    assert main(["summary", "--out", str(tmp_path / "layers.csv")]) == 0
    out = capsys.readouterr().out
    assert "Total parameters: 27341" in out
    assert (tmp_path / "layers.csv").exists()


def test_summary_with_overrides(capsys):
    assert main(["summary", "--mapping", "kappa", "--rank", "2", "--no-residual"]) == 0
    assert "Architecture: default" in capsys.readouterr().out


def test_sweep_command(tmp_path, train_yaml, capsys):
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(train_yaml), "--out", str(out), "--mapping", "tau", "--rank", "1", "2"]) == 0
    assert "SWEEP SUMMARY" in capsys.readouterr().out
    summary = pd.read_csv(out / "sweep_summary.csv")
    assert summary["rank"].tolist() == [1, 2]
