import re

import numpy as np
import pytest

from csipm.checkpoint import load_checkpoint
from csipm.cli import build_parser, main
from csipm.config import RunConfig, apply_overrides, dump_config, load_config, parse_config_text
from csipm.errors import ConfigError
from csipm.evaluation import AblationReport, evaluate_mse, read_constellation
from csipm.features import FeatureSet, make_windows
from csipm.lstm import TrainConfig, init_params, train
from csipm.pipeline import SimulationConfig, deserialize_dataset, split

SUBCOMMANDS = ("generate", "train", "eval", "ablate", "plot-export", "show-config")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small generated dataset and one trained checkpoint shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--range", "250", "--target-instances", "600", "--seed", "7",
                 "--out", str(root / "data")]) == 0
    ds = root / "data" / "dataset-250.txt"
    assert main(["train", "--dataset", str(ds), "--features", "pos", "--epochs", "3", "--seed", "7",
                 "--out", str(root / "m.ckpt")]) == 0
    return root, ds


def parse(text):
    return apply_overrides(RunConfig(), parse_config_text(text))


class TestConfig:
    def test_defaults_dump_round_trip(self, tmp_path):
        text = dump_config(RunConfig())
        path = tmp_path / "c.cfg"
        path.write_text(text)
        assert dump_config(load_config(path)) == text

    def test_parse(self):
        cfg = parse("# a comment\nscene.wall_reflectivity = 0.5\n\ntrain.epochs = 12\n"
                                "scene.gnb_position_m = 10.0, 100.0, 8.0\nseed = 9\n")
        assert cfg.scene.wall_reflectivity == 0.5
        assert cfg.train.epochs == 12
        assert cfg.scene.gnb_position_m == (10.0, 100.0, 8.0)
        assert cfg.seed == 9

    @pytest.mark.parametrize("text", ["scene.nope = 1\n", "bogus.key = 1\n", "scene.wall_reflectivity\n",
                                      "train.epochs = many\n", "train.epochs = 0\n",
                                      "dataset.ref_subcarrier = 240\n"])
    def test_rejects(self, text):
        with pytest.raises((ConfigError, ValueError)):
            parse(text)

    def test_cli_override_beats_file(self, tmp_path, capsys):
        path = tmp_path / "c.cfg"
        path.write_text("train.epochs = 5\n")
        assert main(["show-config", "--config", str(path), "--set", "train.epochs=9", "--seed", "3"]) == 0
        out = capsys.readouterr().out
        assert re.search(r"^train\.epochs = 9$", out, re.M)
        assert re.search(r"^seed = 3$", out, re.M)


class TestParser:
    @pytest.mark.parametrize("cmd", SUBCOMMANDS)
    def test_help_lists_every_flag(self, cmd, capsys):
        with pytest.raises(SystemExit) as exc:
            main([cmd, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        sub = next(a for a in build_parser()._actions if hasattr(a, "choices") and a.choices)
        for action in sub.choices[cmd]._actions:
            for flag in action.option_strings:
                assert flag in text

    @pytest.mark.parametrize("cmd", SUBCOMMANDS)
    def test_unknown_flag(self, cmd, capsys):
        required = {"train": ["--dataset", "d"], "eval": ["--checkpoint", "c", "--dataset", "d"],
                    "ablate": ["--dataset", "d"], "plot-export": ["--checkpoint", "c", "--dataset", "d"]}
        with pytest.raises(SystemExit) as exc:
            main([cmd, *required.get(cmd, []), "--definitely-not-a-flag"])
        assert exc.value.code == 2
        assert "unrecognized arguments" in capsys.readouterr().err

    def test_bad_feature_set(self, capsys):
        with pytest.raises(SystemExit):
            main(["train", "--dataset", "x", "--features", "csi2"])


class TestGenerate:
    def test_counts_and_range(self, workspace):
        _, ds_path = workspace
        ds = deserialize_dataset(ds_path)
        assert len(ds) >= 600
        scene = SimulationConfig().scene
        assert np.all(np.abs(scene.row_of(ds.position_m[:, 1]) - scene.gnb_row) <= 250)

    def test_deterministic(self, workspace, tmp_path):
        _, ds_path = workspace
        assert main(["generate", "--range", "250", "--target-instances", "600", "--seed", "7",
                     "--out", str(tmp_path)]) == 0
        assert (tmp_path / "dataset-250.txt").read_bytes() == ds_path.read_bytes()

    def test_failure_leaves_no_files(self, tmp_path, capsys):
        # the second range is invalid, so the run fails after the first dataset was built
        code = main(["generate", "--range", "250", "--range", "-1", "--target-instances", "20",
                     "--out", str(tmp_path)])
        assert code == 1
        assert "error:" in capsys.readouterr().err
        assert list(tmp_path.iterdir()) == []


class TestTrainEval:
    def test_history_rows(self, workspace):
        root, _ = workspace
        lines = (root / "m.ckpt.history.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_mse,test_mse"
        assert [ln.split(",")[0] for ln in lines[1:]] == ["1", "2", "3"]

    def test_rerun_identical(self, workspace, tmp_path):
        root, ds = workspace
        assert main(["train", "--dataset", str(ds), "--features", "pos", "--epochs", "3", "--seed", "7",
                     "--out", str(tmp_path / "m.ckpt")]) == 0
        assert (tmp_path / "m.ckpt").read_bytes() == (root / "m.ckpt").read_bytes()
        assert (tmp_path / "m.ckpt.history.csv").read_bytes() == (root / "m.ckpt.history.csv").read_bytes()

    def test_lr_zero_keeps_init(self, workspace, tmp_path):
        _, ds = workspace
        assert main(["train", "--dataset", str(ds), "--features", "acc+pos", "--epochs", "1", "--lr", "0",
                     "--seed", "7", "--out", str(tmp_path / "z.ckpt")]) == 0
        ck = load_checkpoint(tmp_path / "z.ckpt")
        init = init_params(3, 16, seed=7)
        for k, v in init.named().items():
            np.testing.assert_array_equal(ck.params.named()[k], v)

    def test_eval_matches_in_memory(self, workspace, capsys):
        root, ds_path = workspace
        assert main(["eval", "--checkpoint", str(root / "m.ckpt"), "--dataset", str(ds_path)]) == 0
        printed = float(capsys.readouterr().out.strip().split("=")[1])
        ds = deserialize_dataset(ds_path)
        tr, te = split(ds, 0.7, 7)
        fs = FeatureSet.parse("pos")
        w_tr = make_windows(tr, fs, 10)
        w_te = make_windows(te, fs, 10, w_tr.standardizer)
        res = train(w_tr.inputs, w_tr.targets, w_te.inputs, w_te.targets, TrainConfig(epochs=3, seed=7))
        assert printed == evaluate_mse(res.params, res.scaler, w_te)
        report = (root / "m.ckpt.eval.txt").read_text()
        assert f"test_mse={printed!r}" in report

    def test_oracle_hook(self, workspace, capsys):
        root, ds = workspace
        assert main(["eval", "--checkpoint", str(root / "m.ckpt"), "--dataset", str(ds), "--oracle",
                     "--out", str(root / "oracle.txt")]) == 0
        assert capsys.readouterr().out.strip() == "test_mse=0.0"

    def test_missing_checkpoint(self, workspace, tmp_path, capsys):
        _, ds = workspace
        assert main(["eval", "--checkpoint", str(tmp_path / "nope"), "--dataset", str(ds)]) == 1
        assert "checkpoint not found" in capsys.readouterr().err
        assert not (tmp_path / "nope.eval.txt").exists()

    def test_feature_mismatch(self, workspace, capsys):
        root, ds = workspace
        assert main(["eval", "--checkpoint", str(root / "m.ckpt"), "--dataset", str(ds),
                     "--features", "acc"]) == 1
        assert "does not match" in capsys.readouterr().err


class TestAblateAndExport:
    def test_restricted_columns_and_tables_agree(self, workspace, tmp_path):
        _, ds = workspace
        assert main(["ablate", "--dataset", str(ds), "--feature-sets", "pos,csi1+csi2+pos", "--epochs", "1",
                     "--seed", "7", "--out", str(tmp_path)]) == 0
        csv = AblationReport.from_csv((tmp_path / "ablation.csv").read_text())
        table = AblationReport.from_table((tmp_path / "ablation.txt").read_text())
        assert csv.feature_sets == ["pos", "csi1+csi2+pos"] and csv.datasets == ["250"]
        for key, value in csv.cells.items():
            assert table.cells[key] == pytest.approx(value, rel=5e-4)

    def test_plot_export(self, workspace, tmp_path, capsys):
        root, ds = workspace
        assert main(["plot-export", "--checkpoint", str(root / "m.ckpt"), "--dataset", str(ds),
                     "--instance", "0", "--instance", "2", "--out", str(tmp_path)]) == 0
        assert sorted(p.name for p in tmp_path.iterdir()) == ["constellation-0.csv", "constellation-2.csv"]
        series = read_constellation(tmp_path / "constellation-2.csv")
        assert len(series["true"]) == len(series["pred"]) == 16
        assert "agree=" in capsys.readouterr().out

    def test_plot_export_bad_instance_removes_partials(self, workspace, tmp_path):
        root, ds = workspace
        assert main(["plot-export", "--checkpoint", str(root / "m.ckpt"), "--dataset", str(ds),
                     "--instance", "0", "--instance", "999999", "--out", str(tmp_path)]) == 1
        assert list(tmp_path.iterdir()) == []
