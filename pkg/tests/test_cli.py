import csv
import json

import pytest

from mdpretrain import cli
from mdpretrain.errors import NumericalError

TINY = ["--layers", "1", "--hidden", "8", "--feature_dim", "4", "--prompt_dim", "4", "--dropout", "0"]


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    code = cli.main(["gen-synthetic", "--out", str(root / "data"), "--count", "6", "--n-frames", "12",
                     "--temperature", "0.3", "--seed", "2"] + TINY)
    assert code == 0
    return root


def test_gen_synthetic_index(data):
    rows = read_csv(data / "data" / "index.csv")
    assert [r["id"] for r in rows] == [f"complex_{i:04d}" for i in range(6)]
    assert (data / "data" / "complex_0000" / "frames.bin").exists()


def pretrain_args(data, out):
    return ["pretrain", "--data", str(data / "data"), "--out", str(out), "--epochs", "2",
            "--steps_per_epoch", "2", "--pretrain_batch", "4", "--order_samples", "1", "--seed", "1"] + TINY


def test_pretrain_outputs_and_determinism(data, tmp_path):
    assert cli.main(pretrain_args(data, tmp_path / "a")) == 0
    assert cli.main(pretrain_args(data, tmp_path / "b")) == 0
    for name in ("model.ckpt", "loss.csv", "config.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = read_csv(tmp_path / "a" / "loss.csv")
    assert list(rows[0]) == ["epoch", "L_gen", "L_ord", "total", "lr"] and len(rows) == 2


@pytest.mark.parametrize("mode", ["probe", "finetune"])
def test_downstream_commands(data, tmp_path, mode):
    assert cli.main(pretrain_args(data, tmp_path / "pre")) == 0
    args = [mode, "--data", str(data / "data"), "--out", str(tmp_path / mode),
            "--checkpoint", str(tmp_path / "pre" / "model.ckpt"), "--downstream_epochs", "2",
            "--downstream_batch", "4", "--split_fractions", "0.5,0.25,0.25", "--seed", "1"] + TINY
    assert cli.main(args) == 0
    row = read_csv(tmp_path / mode / "metrics.csv")[0]
    assert row["mode"] == mode and row["task"] == "affinity" and float(row["RMSE"]) > 0
    ckpt = tmp_path / mode / "model.ckpt"
    assert cli.main(["eval", "--data", str(data / "data"), "--out", str(tmp_path / "ev"),
                     "--checkpoint", str(ckpt), "--seed", "1"] + TINY) == 0
    assert read_csv(tmp_path / "ev" / "metrics.csv")[0]["mode"] == "eval"


def test_analyze(data, tmp_path):
    assert cli.main(pretrain_args(data, tmp_path / "pre")) == 0
    assert cli.main(["analyze", "--data", str(data / "data"), "--out", str(tmp_path / "an"),
                     "--checkpoint", str(tmp_path / "pre" / "model.ckpt"), "--seed", "1"] + TINY) == 0
    assert len(read_csv(tmp_path / "an" / "shift.csv")) == 6
    assert set(read_csv(tmp_path / "an" / "fit.csv")[0]) == {"slope", "intercept", "r2", "pearson", "spearman"}
    assert len(read_csv(tmp_path / "an" / "pca.csv")) == 6


def test_config_file_and_override(data, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"hidden": 8, "epochs": 1, "steps_per_epoch": 1}))
    args = ["pretrain", "--data", str(data / "data"), "--out", str(tmp_path / "o"), "--config",
            str(tmp_path / "c.json"), "--layers", "1", "--feature_dim", "4", "--prompt_dim", "4",
            "--no-ordering"]
    assert cli.main(args) == 0
    saved = json.loads((tmp_path / "o" / "config.json").read_text())
    assert saved["hidden"] == 8 and saved["ordering"] is False and saved["layers"] == 1


class TestExitCodes:
    def test_missing_data(self, tmp_path):
        assert cli.main(["pretrain", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == 2

    def test_bad_flag(self):
        assert cli.main(["pretrain", "--bogus"]) == 2

    def test_invalid_config_value(self, data, tmp_path):
        assert cli.main(pretrain_args(data, tmp_path) + ["--dropout", "1.5"]) == 2

    def test_feature_width_mismatch(self, data, tmp_path):
        args = ["pretrain", "--data", str(data / "data"), "--out", str(tmp_path), "--feature_dim", "7"]
        assert cli.main(args) == 2

    def test_unknown_config_key(self, data, tmp_path):
        (tmp_path / "c.json").write_text('{"hiden": 3}')
        assert cli.main(pretrain_args(data, tmp_path / "o") + ["--config", str(tmp_path / "c.json")]) == 2

    def test_numerical_failure(self, data, tmp_path, monkeypatch):
        def explode(*a, **k):
            raise NumericalError("loss became NaN")
        monkeypatch.setattr(cli, "pretrain", explode)
        assert cli.main(pretrain_args(data, tmp_path)) == 3

    def test_help(self):
        assert cli.main(["--help"]) == 0
