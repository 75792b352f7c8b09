import csv
import json

import pytest

from pdtrace import data as sd
from pdtrace.cli import DEFAULT_CONFIG, main
from pdtrace.nn.gradcheck import LAYER_KINDS
from pdtrace.synth import SynthConfig, generate_sequence

SMALL_SYNTH = ["--set", "synth.n_hc=3", "--set", "synth.n_pd=3", "--set", "synth.samples_per_sequence=240",
               "--set", "synth.sequences_per_subject=2"]
TINY_MODEL = ["--window", "32", "--set", "model.conv1_channels=4", "--set", "model.conv2_channels=6",
              "--set", "model.fc_hidden=8", "--set", "train.batch_size=32"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--out", str(out), "--seed", "3"] + SMALL_SYNTH) == 0
    return out


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--data", str(corpus), "--out", str(out), "--epochs", "4"] + TINY_MODEL) == 0
    return out


def _history_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_synth_outputs_and_rerun_identical(corpus, tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--seed", "3"] + SMALL_SYNTH) == 0
    for name in ("train.jsonl", "test.jsonl", "manifest.json", "resolved-config.json"):
        assert (tmp_path / name).read_bytes() == (corpus / name).read_bytes()
    manifest = json.loads((corpus / "manifest.json").read_text())
    assert not set(manifest["subjects"]["train"]) & set(manifest["subjects"]["test"])


def test_synth_csv_format(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--set", "synth.format=csv"] + SMALL_SYNTH) == 0
    files = sorted((tmp_path / "train").glob("*.csv"))
    assert files and sd.read_sequences(files[0])[0].sequence_id == files[0].stem


def test_synth_default_scale(tmp_path):
    assert main(["synth", "--out", str(tmp_path), "--set", "synth.samples_per_sequence=50",
                 "--set", "synth.sequences_per_subject=1"]) == 0
    subjects = json.loads((tmp_path / "manifest.json").read_text())["subjects"]
    assert len(subjects["train"]) + len(subjects["test"]) == 49


def test_synth_too_few_subjects(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path), "--set", "synth.n_pd=1"]) == 2
    assert "synth" in capsys.readouterr().err


def test_train_outputs(trained):
    rows = _history_rows(trained / "history.csv")
    assert len(rows) == 4
    assert list(rows[0]) == ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]
    metrics = json.loads((trained / "metrics.json").read_text())
    assert 1 <= metrics["best_epoch"] <= 4
    assert metrics["validation"]["level"] == "P"
    cfg = json.loads((trained / "resolved-config.json").read_text())
    assert cfg["preprocess"]["window"] == 32
    assert cfg["train"]["epochs"] == 4


def test_resolved_config_defaults():
    assert DEFAULT_CONFIG["preprocess"]["window"] == 128
    assert DEFAULT_CONFIG["preprocess"]["channels"] == ["vx", "vy"]
    assert DEFAULT_CONFIG["train"]["lr"] == 0.001
    assert DEFAULT_CONFIG["train"]["batch_size"] == 64
    assert DEFAULT_CONFIG["train"]["epochs"] == 200
    assert DEFAULT_CONFIG["model"]["dropout"] == 0.5


def test_config_file_and_unknown_key(corpus, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train": {"epochs": 1}, "preprocess": {"window": 32},
                               "model": {"conv1_channels": 4, "conv2_channels": 6, "fc_hidden": 8}}))
    out = tmp_path / "run"
    assert main(["train", "--data", str(corpus), "--out", str(out), "--config", str(cfg)]) == 0
    assert len(_history_rows(out / "history.csv")) == 1
    assert main(["train", "--data", str(corpus), "--out", str(out), "--set", "train.epoch=3"]) == 2


def test_multiple_runs(corpus, tmp_path):
    assert main(["train", "--data", str(corpus), "--out", str(tmp_path), "--epochs", "2", "--runs", "3"]
                + TINY_MODEL) == 0
    for i in range(3):
        assert len(_history_rows(tmp_path / f"run_{i:02d}" / "history.csv")) == 2
    agg = _history_rows(tmp_path / "history_aggregate.csv")
    assert len(agg) == 2
    assert float(agg[0]["val_acc_min"]) <= float(agg[0]["val_acc_mean"]) <= float(agg[0]["val_acc_max"])
    seeds = {json.loads((tmp_path / f"run_{i:02d}" / "checkpoint.json").read_text())["metadata"]["seed"]
             for i in range(3)}
    assert seeds == {0, 1, 2}


def test_missing_data_dir(tmp_path, capsys):
    code = main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o"), "--epochs", "1"])
    assert code == 3
    assert "[load]" in capsys.readouterr().err


def test_eval_writes_metrics(trained, corpus, tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.json"), "--data", str(corpus),
                 "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "metrics.json").read_text())
    assert set(doc) == {"P", "S", "sequences"}
    assert "Accuracy (P/S)" in (tmp_path / "metrics.txt").read_text()
    assert "MCC (P/S)" in capsys.readouterr().out


def test_eval_window_mismatch(trained, corpus, tmp_path, capsys):
    code = main(["eval", "--checkpoint", str(trained / "checkpoint.json"), "--data", str(corpus),
                 "--out", str(tmp_path), "--window", "64"])
    assert code == 2
    assert "window" in capsys.readouterr().err


def test_eval_empty_test_dir(trained, tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code = main(["eval", "--checkpoint", str(trained / "checkpoint.json"), "--data", str(tmp_path / "empty"),
                 "--out", str(tmp_path / "o")])
    assert code == 3
    assert "0 sequences" in capsys.readouterr().err


def test_eval_corrupt_checkpoint(corpus, tmp_path):
    bad = tmp_path / "c.json"
    bad.write_text("{")
    assert main(["eval", "--checkpoint", str(bad), "--data", str(corpus), "--out", str(tmp_path)]) == 5


def _one_sequence_file(tmp_path, n, label="PD"):
    cfg = SynthConfig(samples_per_sequence=n, length_jitter=0.0)
    path = tmp_path / "one.jsonl"
    sd.write_sequences([generate_sequence(label, cfg, seed=1, sequence_id="one")], path, "jsonl")
    return path


def test_predict_single_patch(trained, tmp_path, capsys):
    path = _one_sequence_file(tmp_path, 33)
    assert main(["predict", "--checkpoint", str(trained / "checkpoint.json"), str(path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert sum(doc["patch_votes"].values()) == 1
    assert doc["verdict"] == ("PD" if doc["patch_p_pd"][0] > 0.5 else "HC")
    assert doc["mean_p_pd"] == doc["patch_p_pd"][0]


def test_predict_too_short(trained, tmp_path, capsys):
    path = _one_sequence_file(tmp_path, 32)
    assert main(["predict", "--checkpoint", str(trained / "checkpoint.json"), str(path)]) == 3
    assert "at least 33" in capsys.readouterr().err


def test_gradcheck_layer_scope(capsys):
    assert main(["gradcheck", "--scope", "layer", "--seeds", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()[1:]
    assert [ln.split()[0] for ln in lines] == list(LAYER_KINDS)
    assert all(ln.endswith("ok") for ln in lines)


def test_gradcheck_model_scope(capsys):
    assert main(["gradcheck", "--scope", "model", "--seeds", "2"]) == 0


def test_gradcheck_injected_fault():
    assert main(["gradcheck", "--seeds", "1", "--inject-fault"]) == 4
