import csv
import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

from lowrank_ttn import checkpoint as ckpt_io
from lowrank_ttn import cli, runner
from lowrank_ttn.adam import AdamState
from lowrank_ttn.config import RunConfig, coerce, dump_config, load_config, parse_config_text
from lowrank_ttn.data import IDX_FILES, write_idx
from lowrank_ttn.errors import CheckpointError, ConfigError, DivergenceError
from lowrank_ttn.metrics import COLUMNS, read_metrics
from lowrank_ttn.topology import build_topology
from lowrank_ttn.training import initialize_model

DATA_ROOT = os.environ.get("TTN_DATA_ROOT", "/root/data")
HAVE_MNIST = (Path(DATA_ROOT) / "mnist").is_dir()


def synthetic_images(n, rng):
    """Class k lights up cell k of a 4x4 grid of 7x7 blocks."""
    labels = rng.integers(0, 10, n).astype(np.uint8)
    imgs = (rng.random((n, 28, 28)) * 60).astype(np.uint8)
    for i, k in enumerate(labels):
        y, x = divmod(int(k), 4)
        imgs[i, 7 * y:7 * y + 7, 7 * x:7 * x + 7] = 230
    return imgs, labels


@pytest.fixture(scope="module")
def data_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    d = root / "mnist"
    d.mkdir()
    rng = np.random.default_rng(0)
    for split, n in (("train", 150), ("test", 40)):
        imgs, labs = synthetic_images(n, rng)
        (d / IDX_FILES[f"{split}_images"]).write_bytes(write_idx(imgs))
        (d / IDX_FILES[f"{split}_labels"]).write_bytes(write_idx(labs))
    return root


def small_args(root, out, *extra):
    return [
        "--data-root", str(root), "--image-size", "4", "--bond-dim", "3", "--rank", "3",
        "--batch-size", "16", "--epochs", "2", "--train-count", "130", "--val-count", "20",
        "--test-count", "40", "--eval-train-subset", "50", "--timing", "none",
        "--learn-rate", "0.02", "--output-dir", str(out), *extra,
    ]


class TestConfig:
    def test_parse_text(self):
        vals = parse_config_text("# comment\nbond_dim = 12  # inline\n\nkind=dense\neval_full_train = yes\n")
        assert vals == {"bond_dim": 12, "kind": "dense", "eval_full_train": True}

    def test_errors(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("bond_dim 12")
        with pytest.raises(ConfigError):
            parse_config_text("colour = red")
        with pytest.raises(ConfigError):
            coerce("bond_dim", "twelve")
        with pytest.raises(ConfigError):
            RunConfig(kind="tucker")
        with pytest.raises(ConfigError):
            RunConfig(dropout_rate=1.0)
        with pytest.raises(ConfigError):
            RunConfig(dataset="cifar")

    def test_file_round_trip(self, tmp_path):
        cfg = RunConfig(bond_dim=5, dropout_rate=0.25, topology="2d-b2-alternating", penalty=0.01)
        path = tmp_path / "run.cfg"
        path.write_text(dump_config(cfg))
        assert load_config(path) == cfg
        assert load_config(path, {"epochs": 3}).epochs == 3

    def test_show_config_overrides(self, tmp_path, capsys):
        path = tmp_path / "a.cfg"
        path.write_text("bond_dim = 6\nrank = 7\n")
        assert cli.main(["show-config", "--config", str(path), "--rank", "9", "--set", "penalty=0.5"]) == 0
        cfg = RunConfig.from_dict(parse_config_text(capsys.readouterr().out))
        assert (cfg.bond_dim, cfg.rank, cfg.penalty) == (6, 9, 0.5)

    def test_bad_override_exit_code(self, capsys):
        assert cli.main(["show-config", "--set", "nonsense"]) == cli.EXIT_USAGE
        assert cli.main(["show-config", "--bond-dim", "x"]) == cli.EXIT_USAGE


class TestInspect:
    def test_reference_counts(self, capsys):
        assert cli.main(["inspect", "--bond-dim", "4", "--rank", "4"]) == 0
        out = capsys.readouterr().out
        assert "27136" in out and "4776" in out and "38280" in out and "5796" in out

    def test_report_matches_measurement(self):
        for topo in ("2d-b4", "2d-b2-alternating", "1d-b2", "1d-b4"):
            rep = cli.inspect_report(RunConfig(topology=topo, bond_dim=4, rank=5))
            assert rep["measured_cp"] == rep["mults_cp"]
            assert rep["measured_full"] in (None, rep["mults_full"])

    def test_rejects_unary_tree(self, capsys):
        assert cli.main(["inspect", "--topology", "1d-b1"]) == cli.EXIT_USAGE
        assert "branching" in capsys.readouterr().err


class TestTrainCommand:
    def test_full_run(self, data_root, tmp_path, capsys):
        out = tmp_path / "run"
        assert cli.main(["train", *small_args(data_root, out)]) == 0
        rows = read_metrics(out / "metrics.csv")
        assert len(rows) == 4
        with open(out / "metrics.csv") as fh:
            assert next(csv.reader(fh)) == list(COLUMNS)
        assert all(math.isfinite(v) for r in rows for v in r.values())
        assert [(r["epoch"], r["batch"]) for r in rows] == [(1, 5), (1, 9), (2, 5), (2, 9)]
        info = json.loads((out / "run.json").read_text())
        assert info["train_size"] == 130 and info["val_size"] == 20 and info["test_size"] == 40
        assert info["best_val_accuracy"] == max(r["val_acc"] for r in rows)
        for name in ("best.ckpt", "last.ckpt", "epoch-001.ckpt", "epoch-002.ckpt", "accuracy_history.png",
                     "accuracy_history.csv"):
            assert (out / name).exists(), name
        printed = capsys.readouterr().out
        assert f"final test accuracy {info['final_test_accuracy']:.4f}" in printed

        # eval of the selected checkpoint reproduces the reported test accuracy exactly
        acc = cli.cmd_eval(out / "best.ckpt", "test")
        assert acc == info["final_test_accuracy"]
        assert "confusion" in capsys.readouterr().out

    def test_learns_synthetic_blocks(self, data_root, tmp_path):
        cfg = load_config(None, {
            "data_root": str(data_root), "image_size": 4, "bond_dim": 4, "rank": 6, "batch_size": 10,
            "epochs": 8, "train_count": 130, "val_count": 20, "test_count": 40, "learn_rate": 0.02,
            "timing": "none", "output_dir": str(tmp_path / "learn"), "checkpoint_every": 0,
        })
        result = runner.run_training(cfg, render=False)
        assert result.test_accuracy >= 0.8

    def test_zero_epochs(self, data_root, tmp_path):
        out = tmp_path / "zero"
        assert cli.main(["train", *small_args(data_root, out, "--epochs", "0")]) == 0
        assert (out / "metrics.csv").read_text() == ",".join(COLUMNS) + "\n"

    def test_determinism(self, data_root, tmp_path):
        for name in ("a", "b"):
            assert cli.main(["train", *small_args(data_root, tmp_path / name, "--dropout-rate", "0.2", "--rank", "6")]) == 0
        assert (tmp_path / "a/metrics.csv").read_bytes() == (tmp_path / "b/metrics.csv").read_bytes()

    def test_resume_is_bit_exact(self, data_root, tmp_path):
        full, part = tmp_path / "full", tmp_path / "part"
        extra = ("--dropout-rate", "0.2", "--rank", "6", "--penalty", "0.001")
        assert cli.main(["train", *small_args(data_root, full, *extra)]) == 0
        assert cli.main(["train", *small_args(data_root, part, *extra, "--epochs", "1")]) == 0
        assert cli.main(["train", "--resume", str(part / "epoch-001.ckpt"), "--epochs", "2"]) == 0
        assert (full / "metrics.csv").read_bytes() == (part / "metrics.csv").read_bytes()
        a, b = ckpt_io.load(full / "last.ckpt"), ckpt_io.load(part / "last.ckpt")
        assert all(np.array_equal(x, y) for x, y in zip(a.model.params, b.model.params))
        assert all(np.array_equal(x, y) for x, y in zip(a.adam.first + a.adam.second, b.adam.first + b.adam.second))
        assert a.rng_state == b.rng_state
        assert json.loads((full / "run.json").read_text())["final_test_accuracy"] == json.loads(
            (part / "run.json").read_text())["final_test_accuracy"]

    def test_resume_after_later_epochs_truncates_metrics(self, data_root, tmp_path):
        full = tmp_path / "full"
        assert cli.main(["train", *small_args(data_root, full)]) == 0
        reference = (full / "metrics.csv").read_bytes()
        assert cli.main(["train", "--resume", str(full / "epoch-001.ckpt")]) == 0
        assert (full / "metrics.csv").read_bytes() == reference

    def test_divergence_exit_code(self, data_root, tmp_path, monkeypatch, capsys):
        real = runner.train_epoch

        def failing(model, images, labels, config, state, rng, epoch, on_batch):
            if epoch == 2:
                raise DivergenceError("epoch 2, batch 1: non-finite loss")
            return real(model, images, labels, config, state, rng, epoch, on_batch)

        monkeypatch.setattr(runner, "train_epoch", failing)
        out = tmp_path / "div"
        assert cli.main(["train", *small_args(data_root, out)]) == cli.EXIT_DIVERGED
        assert "diverged" in capsys.readouterr().err
        assert len(read_metrics(out / "metrics.csv")) == 2

    def test_missing_data(self, tmp_path, capsys):
        code = cli.main(["train", *small_args(tmp_path / "nowhere", tmp_path / "x")])
        assert code == cli.EXIT_USAGE


class TestCheckpoints:
    @pytest.fixture
    def ckpt(self):
        cfg = RunConfig(image_size=4, bond_dim=3, rank=2)
        topo = build_topology(cfg.topology, cfg.image_shape())
        rng = np.random.default_rng(4)
        model = initialize_model(topo, 3, 10, "cp", 2, rng)
        state = AdamState.zeros_like(model.params)
        for a in state.first + state.second:
            a[...] = rng.random(a.shape)
        state.step = 17
        return ckpt_io.Checkpoint(cfg, model, state, 3, rng.bit_generator.state, {"best": {"val": 0.5}})

    def test_round_trip_bytes(self, ckpt, tmp_path):
        path = tmp_path / "a.ckpt"
        ckpt_io.save(path, ckpt)
        back = ckpt_io.load(path)
        ckpt_io.save(tmp_path / "b.ckpt", back)
        assert path.read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        assert back.epoch == 3 and back.adam.step == 17 and back.extra == {"best": {"val": 0.5}}
        assert all(np.array_equal(x, y) for x, y in zip(ckpt.model.params, back.model.params))

    def test_dense_round_trip(self, tmp_path):
        cfg = RunConfig(image_size=4, bond_dim=2, kind="dense")
        topo = build_topology(cfg.topology, cfg.image_shape())
        model = initialize_model(topo, 2, 10, "dense", None, np.random.default_rng(0))
        ck = ckpt_io.Checkpoint(cfg, model, AdamState.zeros_like(model.params), 0, {})
        raw = ckpt_io.encode(ck)
        assert ckpt_io.encode(ckpt_io.decode(raw)) == raw

    def test_header_layout(self, ckpt):
        raw = ckpt_io.encode(ckpt)
        assert raw[:8] == b"LRTTNCKP"
        assert int.from_bytes(raw[8:12], "little") == 1

    def test_version_mismatch(self, ckpt):
        raw = bytearray(ckpt_io.encode(ckpt))
        raw[8:12] = (2).to_bytes(4, "little")
        with pytest.raises(CheckpointError, match="version 2"):
            ckpt_io.decode(bytes(raw))

    @pytest.mark.parametrize("cut", [5, 30, -1])
    def test_truncated(self, ckpt, cut):
        raw = ckpt_io.encode(ckpt)
        with pytest.raises(CheckpointError):
            ckpt_io.decode(raw[:cut])

    def test_trailing_and_magic(self, ckpt):
        raw = ckpt_io.encode(ckpt)
        with pytest.raises(CheckpointError):
            ckpt_io.decode(raw + b"\0")
        with pytest.raises(CheckpointError):
            ckpt_io.decode(b"X" + raw[1:])

    def test_eval_exit_codes(self, ckpt, tmp_path, capsys):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(ckpt_io.encode(ckpt)[:100])
        assert cli.main(["eval", str(path)]) == cli.EXIT_LOAD
        assert cli.main(["eval", str(tmp_path / "missing.ckpt")]) == cli.EXIT_LOAD
        assert "cannot load checkpoint" in capsys.readouterr().err

    @pytest.mark.skipif(not HAVE_MNIST, reason="MNIST files not present")
    def test_fresh_model_is_chance(self, tmp_path):
        cfg = RunConfig(data_root=DATA_ROOT)
        topo = build_topology(cfg.topology, cfg.image_shape())
        model = initialize_model(topo, cfg.bond_dim, 10, "cp", cfg.rank, np.random.default_rng(0))
        ck = ckpt_io.Checkpoint(cfg, model, AdamState.zeros_like(model.params), 0, {})
        ckpt_io.save(tmp_path / "fresh.ckpt", ck)
        assert abs(cli.cmd_eval(tmp_path / "fresh.ckpt", "test") - 0.10) <= 0.02


class TestPlot:
    def test_plot_verb(self, data_root, tmp_path, capsys):
        runs = []
        for name, p in (("p0", "0"), ("p2", "0.2")):
            out = tmp_path / name
            assert cli.main(["train", *small_args(data_root, out, "--dropout-rate", p, "--rank", "6")]) == 0
            runs.append(str(out / "metrics.csv"))
        fig = tmp_path / "compare.png"
        assert cli.main(["plot", *runs, "--batches-per-epoch", "9", "--out", str(fig)]) == 0
        assert fig.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        rows = list(csv.reader(open(tmp_path / "p2" / "accuracy_history.csv")))
        assert rows[0] == ["iteration", "train_acc", "val_acc"]
        assert [int(r[0]) for r in rows[1:]] == [5, 9, 14, 18]
