"""Command-line interface: flag handling, exit codes, artifacts, determinism."""

import json
import os

import numpy as np
import pytest

from mhenet import cli
from mhenet.data import read_image
from mhenet.optim import lr_at_epoch

TINY = ["--size", "64x64", "--channels", "8"]


def run_cli(*argv):
    return cli.main(list(argv))


class TestParsing:
    def test_defaults_echo_training_schedule(self):
        parser = cli.build_parser()
        args = parser.parse_args(["train", "--synth", "4"])
        assert args.lr == 5e-5
        assert args.batch == 8
        assert args.epochs == 100
        assert args.lr_decay_every == 40

    def test_lr_decay_schedule(self):
        assert lr_at_epoch(5e-5, 40) == 5e-5
        assert abs(lr_at_epoch(5e-5, 41) - 5e-6) < 1e-20
        assert abs(lr_at_epoch(5e-5, 81) - 5e-7) < 1e-21

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("train", "--bogus-flag")
        assert exc.value.code == cli.USAGE_ERROR

    def test_unknown_config_key_is_usage_error(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"no_such_option": 1}))
        with pytest.raises(SystemExit) as exc:
            run_cli("train", "--synth", "2", "--config", str(cfg))
        assert exc.value.code == cli.USAGE_ERROR

    def test_config_file_supplies_defaults_flags_win(self, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"epochs": 7, "lr": 1e-3}))
        parser = cli.build_parser()
        args = parser.parse_args(["train", "--synth", "2", "--config", str(cfg),
                                  "--lr", "2e-3"])
        monkeypatch.setattr("sys.argv", ["mhenet", "train", "--synth", "2",
                                         "--config", str(cfg), "--lr", "2e-3"])
        args = cli._apply_config_file(args, parser)
        assert args.epochs == 7          # from file
        assert args.lr == 2e-3           # flag wins


class TestTrain:
    def test_synthetic_smoke_run(self, tmp_path):
        out = str(tmp_path / "run")
        rc = run_cli("train", "--synth", "4", *TINY, "--epochs", "1",
                     "--batch", "2", "--max-steps", "2", "--no-augment",
                     "--out", out, "--seed", "5")
        assert rc == 0
        assert os.path.exists(os.path.join(out, "loss_log.tsv"))
        assert os.path.exists(os.path.join(out, "ckpt_best.mhen"))
        cfg = json.load(open(os.path.join(out, "config.json")))
        assert cfg["settings"]["lr"] == 5e-5
        assert cfg["settings"]["batch"] == 2
        assert cfg["network"]["channels"] == 8
        log = open(os.path.join(out, "loss_log.tsv")).read().splitlines()
        assert log[0].startswith("step\tepoch\tlr")
        assert len(log) == 3             # header + 2 steps

    def test_missing_dataset_is_validation_error(self, tmp_path):
        rc = run_cli("train", "--data", str(tmp_path / "absent"), *TINY,
                     "--out", str(tmp_path / "o"))
        assert rc == cli.VALIDATION_ERROR

    def test_needs_data_or_synth(self, tmp_path):
        rc = run_cli("train", *TINY, "--out", str(tmp_path / "o"))
        assert rc == cli.USAGE_ERROR

    def test_reproducible_with_fixed_seed(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = str(tmp_path / name)
            rc = run_cli("train", "--synth", "4", *TINY, "--epochs", "2",
                         "--batch", "2", "--threads", "1", "--out", out,
                         "--seed", "9")
            assert rc == 0
            outs.append(out)
        log_a = open(os.path.join(outs[0], "loss_log.tsv"), "rb").read()
        log_b = open(os.path.join(outs[1], "loss_log.tsv"), "rb").read()
        assert log_a == log_b
        ck_a = open(os.path.join(outs[0], "ckpt_best.mhen"), "rb").read()
        ck_b = open(os.path.join(outs[1], "ckpt_best.mhen"), "rb").read()
        assert ck_a == ck_b


class TestPredictAndEval:
    @pytest.fixture()
    def trained(self, tmp_path):
        out = str(tmp_path / "run")
        rc = run_cli("train", "--synth", "4", *TINY, "--epochs", "1",
                     "--batch", "2", "--max-steps", "2", "--no-augment",
                     "--out", out, "--seed", "5")
        assert rc == 0
        data_root = os.path.join(out, "data")
        return os.path.join(out, "ckpt_best.mhen"), data_root

    def test_predict_writes_one_mask_per_input(self, trained, tmp_path):
        ckpt, data_root = trained
        out = str(tmp_path / "preds")
        rc = run_cli("predict", "--checkpoint", ckpt, "--data", data_root,
                     "--out", out)
        assert rc == 0
        names = sorted(os.listdir(out))
        assert names == sorted(os.listdir(os.path.join(data_root, "Imgs")))
        mask = read_image(os.path.join(out, names[0]))
        assert mask.dtype == np.uint8
        assert mask.shape == (64, 64)

    def test_predict_rerun_identical(self, trained, tmp_path):
        ckpt, data_root = trained
        a, b = str(tmp_path / "p1"), str(tmp_path / "p2")
        run_cli("predict", "--checkpoint", ckpt, "--data", data_root, "--out", a)
        run_cli("predict", "--checkpoint", ckpt, "--data", data_root, "--out", b)
        for name in os.listdir(a):
            assert (open(os.path.join(a, name), "rb").read()
                    == open(os.path.join(b, name), "rb").read())

    def test_predict_emits_extra_heads(self, trained, tmp_path):
        ckpt, data_root = trained
        out = str(tmp_path / "preds3")
        rc = run_cli("predict", "--checkpoint", ckpt, "--data", data_root,
                     "--out", out, "--emit", "m1,m2,m3")
        assert rc == 0
        names = os.listdir(out)
        assert any(n.endswith("_m1.png") for n in names)
        assert any(n.endswith("_m3.png") for n in names)

    def test_predict_channel_mismatch_rejected(self, trained, tmp_path):
        ckpt, data_root = trained
        rc = run_cli("predict", "--checkpoint", ckpt, "--data", data_root,
                     "--out", str(tmp_path / "x"), "--size", "64x64",
                     "--channels", "16")
        assert rc == cli.VALIDATION_ERROR

    def test_eval_perfect_directories(self, trained, tmp_path):
        _, data_root = trained
        gt_dir = os.path.join(data_root, "GT")
        rc = run_cli("eval", "--pred", gt_dir, "--gt", gt_dir,
                     "--report", str(tmp_path / "r.json"))
        assert rc == 0
        report = json.load(open(tmp_path / "r.json"))
        assert report["means"]["mae"] == 0.0
        assert abs(report["means"]["sm"] - 1.0) < 1e-6

    def test_eval_skipped_pair_is_validation_error(self, trained, tmp_path):
        _, data_root = trained
        gt_dir = os.path.join(data_root, "GT")
        pred_dir = str(tmp_path / "partial")
        os.makedirs(pred_dir)
        names = sorted(os.listdir(gt_dir))
        src = os.path.join(gt_dir, names[0])
        dst = os.path.join(pred_dir, names[0])
        open(dst, "wb").write(open(src, "rb").read())
        rc = run_cli("eval", "--pred", pred_dir, "--gt", gt_dir)
        assert rc == cli.VALIDATION_ERROR


class TestGradcheckCommand:
    def test_blocks_pass(self, capsys):
        rc = run_cli("gradcheck", "--skip-network")
        assert rc == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if "max rel err" in l]
        names = {l.split(":")[0] for l in lines}
        assert {"cbr", "lgconv", "texture_block", "semantic_block",
                "geometry_block", "channel_attention", "crc_gate",
                "adfm", "prediction_head", "bce_loss", "iou_loss"} <= names
        assert len(lines) == len(names)  # each block listed exactly once

    def test_corrupted_backward_fails(self, monkeypatch):
        import mhenet.tensor as T
        original = T.sigmoid

        def broken_sigmoid(x):
            y = original(x)
            if y.node is not None:
                rule = y.node.backward_rule
                y.node.backward_rule = lambda gy: tuple(
                    None if g is None else g * 1.02 for g in rule(gy))
            return y

        monkeypatch.setattr("mhenet.tensor.sigmoid", broken_sigmoid)
        monkeypatch.setattr("mhenet.blocks.sigmoid", broken_sigmoid)
        rc = run_cli("gradcheck", "--skip-network")
        assert rc == cli.VALIDATION_ERROR
