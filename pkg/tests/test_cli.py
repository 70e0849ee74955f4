import json
import subprocess
import sys

import numpy as np
import pytest

from puad.cli import main
from puad.data import load_csv, load_split
from puad.evaluate import EvalReport, report
from puad.models import load_model, model_to_text
from puad.trainer import ModelConfig, Streams, build_model

SMALL = [
    "n_unlabeled_normal=180", "n_unlabeled_seen=20", "n_labeled_seen=20",
    "test_normal=100", "test_seen=50", "test_unseen=50",
    "hidden=8", "latent_dim=1", "learning_rate=1e-3", "batch_size=32",
    "max_epochs=5", "pretrain_epochs=2",
]


def cli(*args, extra=()):
    argv = list(args)
    for s in [*SMALL, *extra]:
        argv += ["--set", s]
    return main(argv)


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    assert cli("generate", "--out", str(out)) == 0
    return out


class TestGenerate:
    def test_inventory_and_counts(self, data_dir):
        names = sorted(p.name for p in data_dir.iterdir())
        assert names == sorted([
            "unlabeled.csv", "anomalies.csv", "val_unlabeled.csv", "val_anomalies.csv",
            "test_points.csv", "test_labels.csv", "config.txt", "manifest.json",
        ])
        data = load_split(data_dir)
        assert len(data.unlabeled) + len(data.val_unlabeled) == 200
        assert len(data.anomalies) + len(data.val_anomalies) == 20
        assert len(data.test_points) == 200

    def test_bitwise_rerun(self, data_dir, tmp_path):
        again = tmp_path / "again"
        assert cli("generate", "--out", str(again)) == 0
        for p in data_dir.iterdir():
            if p.name != "manifest.json":
                assert p.read_bytes() == (again / p.name).read_bytes()

    def test_manifest(self, data_dir):
        m = json.loads((data_dir / "manifest.json").read_text())
        assert m["command"] == "generate" and m["seed"] == 0
        assert set(m) == {"command", "config", "seed", "input_hash", "outputs", "duration_s"}
        assert m["config"]["n_unlabeled_normal"] == "180"
        assert len(m["input_hash"]) == 64

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("n_unlabeled_normal = 50\nn_unlabeled_seen = 0\n")
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
        _, hidden = load_csv(tmp_path / "d" / "unlabeled.csv")
        assert set(hidden) == {"normal"}


class TestTrain:
    def test_zero_epochs_writes_initialisation(self, data_dir, tmp_path):
        out = tmp_path / "m"
        assert cli("train", "--data", str(data_dir), "--out", str(out), extra=["max_epochs=0", "loss=PU_BCE"]) == 0
        init = build_model(
            __import__("puad").LossKind("PU_BCE", 0.1), 2, ModelConfig(hidden=(8,), latent_dim=1), Streams(0).init
        )
        assert (out / "model.txt").read_text() == model_to_text(init)
        assert (out / "history.csv").read_text() == "epoch,train_obj,val_obj\n"

    def test_history_and_reload(self, data_dir, tmp_path):
        out = tmp_path / "m"
        assert cli("train", "--data", str(data_dir), "--out", str(out)) == 0
        rows = (out / "history.csv").read_text().splitlines()[1:]
        assert 1 <= len(rows) <= 5
        model = load_model(out / "model.txt")
        data = load_split(data_dir)
        again = load_model(out / "model.txt")
        from puad.evaluate import score_dataset

        assert score_dataset(model, data.test_points).tobytes() == score_dataset(again, data.test_points).tobytes()

    def test_missing_anomaly_file_exit_2(self, data_dir, tmp_path, capsys):
        (data_dir / "anomalies.csv").unlink()
        assert cli("train", "--data", str(data_dir), "--out", str(tmp_path / "m"), extra=["loss=ABC"]) == 2
        assert "anomalies" in capsys.readouterr().err

    def test_does_not_mutate_inputs(self, data_dir, tmp_path):
        before = {p.name: p.read_bytes() for p in data_dir.iterdir()}
        cli("train", "--data", str(data_dir), "--out", str(tmp_path / "m"))
        assert {p.name: p.read_bytes() for p in data_dir.iterdir()} == before


class TestEval:
    def test_matches_in_process_and_is_stable(self, data_dir, tmp_path, capsys):
        m = tmp_path / "m"
        cli("train", "--data", str(data_dir), "--out", str(m))
        capsys.readouterr()
        r1, r2 = tmp_path / "r1.txt", tmp_path / "r2.txt"
        assert cli("eval", "--model", str(m / "model.txt"), "--data", str(data_dir), "--out", str(r1)) == 0
        printed = capsys.readouterr().out
        cli("eval", "--model", str(m / "model.txt"), "--data", str(data_dir), "--out", str(r2))
        assert r1.read_bytes() == r2.read_bytes()
        assert printed == r1.read_text()
        want = report(load_model(m / "model.txt"), load_split(data_dir).test_only(), seed=0)
        assert EvalReport.from_text(r1.read_text()) == want
        assert (tmp_path / "r1.txt.manifest.json").exists()

    def test_identity_model_warns(self, data_dir, tmp_path, caplog):
        path = tmp_path / "id.txt"
        path.write_text(
            "kind=ae\nencoder_widths=2,2\ndecoder_widths=2,2\nlatent_dim=2\nnoise_sigma=0\n---\n"
            "enc0.W 2x2 1 0 0 1\nenc0.b 2 0 0\ndec0.W 2x2 1 0 0 1\ndec0.b 2 0 0\n"
        )
        with caplog.at_level("WARNING"):
            assert cli("eval", "--model", str(path), "--data", str(data_dir), "--out", str(tmp_path / "r.txt")) == 0
        assert "degenerate" in caplog.text
        rep = EvalReport.from_text((tmp_path / "r.txt").read_text())
        assert rep.auroc_overall == 0.5

    def test_bad_model_file_exit_3(self, data_dir, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("nonsense")
        assert cli("eval", "--model", str(bad), "--data", str(data_dir)) == 3

    def test_missing_flag_exit_2(self, data_dir):
        assert cli("eval", "--data", str(data_dir)) == 2


class TestSweep:
    def test_cells_and_aggregates(self, data_dir, tmp_path):
        out = tmp_path / "s"
        assert cli("sweep", "--data", str(data_dir), "--out", str(out), extra=["sweep_values=0.05,0.2", "sweep_seeds=2", "max_epochs=2"]) == 0
        cells = (out / "sweep_cells.csv").read_text().splitlines()
        assert len(cells) == 1 + 4
        rows = [c.split(",") for c in cells[1:]]
        summary = [r.split(",") for r in (out / "sweep.csv").read_text().splitlines()[1:]]
        for value, metric, mean, *_ in summary:
            col = {"auroc_overall": 2, "auroc_seen": 3, "auroc_unseen": 4}[metric]
            xs = [float(r[col]) for r in rows if r[0] == value]
            assert float(mean) == pytest.approx(np.mean(xs), abs=1e-15)

    def test_one_cell_equals_train_plus_eval(self, data_dir, tmp_path):
        extra = ["sweep_values=0.2", "sweep_seeds=1", "alpha=0.2"]
        cli("sweep", "--data", str(data_dir), "--out", str(tmp_path / "s"), extra=extra)
        cli("train", "--data", str(data_dir), "--out", str(tmp_path / "m"), extra=extra)
        cli("eval", "--model", str(tmp_path / "m" / "model.txt"), "--data", str(data_dir), "--out", str(tmp_path / "r.txt"), extra=extra)
        rep = EvalReport.from_text((tmp_path / "r.txt").read_text())
        cell = (tmp_path / "s" / "sweep_cells.csv").read_text().splitlines()[1].split(",")
        assert [float(v) for v in cell[2:5]] == [rep.auroc_overall, rep.auroc_seen, rep.auroc_unseen]

    def test_contamination_kind(self, tmp_path):
        out = tmp_path / "s"
        assert cli("sweep", "--kind", "contamination", "--out", str(out), extra=["sweep_counts=0,10", "sweep_seeds=1", "max_epochs=2"]) == 0
        assert (out / "sweep.csv").read_text().startswith("n_unlabeled_seen,")


class TestContour:
    def test_grid(self, data_dir, tmp_path):
        cli("train", "--data", str(data_dir), "--out", str(tmp_path / "m"))
        out = tmp_path / "g.csv"
        assert cli("contour", "--model", str(tmp_path / "m" / "model.txt"), "--out", str(out), extra=["contour_resolution=6"]) == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "# nx=6 ny=6" and len(lines) == 2 + 36


class TestExitCodes:
    def test_unknown_key(self, capsys):
        assert cli("generate", extra=["foo=1"]) == 2
        assert "foo" in capsys.readouterr().err

    def test_unreadable_config(self, tmp_path):
        assert main(["generate", "--config", str(tmp_path / "nope.txt")]) == 3

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert cli("generate", "--out", str(blocker / "sub")) == 3

    def test_numeric_failure(self, data_dir, tmp_path):
        with np.errstate(all="ignore"):
            code = cli("train", "--data", str(data_dir), "--out", str(tmp_path / "m"), extra=["loss=AE", "learning_rate=1e300"])
        assert code == 4

    def test_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "puad.cli", "generate", "--set", "source=toy", "--set", "n_unlabeled_normal=40",
             "--set", "n_unlabeled_seen=4", "--set", "n_labeled_seen=4", "--set", "test_normal=10",
             "--set", "test_seen=5", "--set", "test_unseen=5", "--out", str(tmp_path / "d")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "d" / "unlabeled.csv").exists()
