import csv
import json

import numpy as np
import pytest

from dispscan import cli

GEN_ARGS = ["generate", "--nodes", "30", "--runs", "4", "--timesteps", "64",
            "--peak-step", "48", "--seed", "5"]


def run(argv):
    return cli.main(argv)


@pytest.fixture
def dataset_path(tmp_path):
    out = tmp_path / "data.dspc"
    assert run(GEN_ARGS + ["--out", str(out), "--truth", str(tmp_path / "truth.csv")]) == 0
    return out


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestGenerate:
    def test_writes_container_manifest_truth(self, dataset_path, tmp_path):
        assert dataset_path.exists()
        assert (tmp_path / "data.dspc.manifest.json").exists()
        truth = _read_csv(tmp_path / "truth.csv")
        assert len(truth) == 30
        assert {row["y"] for row in truth} == {"0", "1"}

    def test_infeasible_config_is_validation_error(self, tmp_path):
        code = run(["generate", "--nodes", "10", "--perturbation", "0",
                    "--out", str(tmp_path / "x.dspc")])
        assert code == 1


class TestPreprocess:
    def test_labels_csv(self, dataset_path, tmp_path):
        out = tmp_path / "labels.csv"
        assert run(["preprocess", "--dataset", str(dataset_path),
                    "--out", str(out)]) == 0
        rows = _read_csv(out)
        assert len(rows) == 30
        assert set(rows[0]) == {"node_id", "part_id", "y", "spread_mm", "peak_timestep"}

    def test_balanced_subset(self, dataset_path, tmp_path):
        out = tmp_path / "labels.csv"
        balanced = tmp_path / "balanced.txt"
        assert run(["preprocess", "--dataset", str(dataset_path), "--out", str(out),
                    "--skip-rigid-removal",
                    "--balance-seed", "3", "--balanced-out", str(balanced)]) == 0
        kept = balanced.read_text().split()
        labels = {r["node_id"]: r["y"] for r in _read_csv(out)}
        ys = [labels[n] for n in kept]
        assert ys.count("0") == ys.count("1")

    def test_missing_dataset_is_validation_error(self, tmp_path):
        assert run(["preprocess", "--dataset", str(tmp_path / "nope.dspc"),
                    "--out", str(tmp_path / "l.csv")]) == 1


class TestEncodePredictFlow:
    def test_full_flow(self, dataset_path, tmp_path):
        labels = tmp_path / "labels.csv"
        features = tmp_path / "feat.dspx"
        model = tmp_path / "model.dspm"
        preds = tmp_path / "pred.csv"
        assert run(["preprocess", "--dataset", str(dataset_path),
                    "--skip-rigid-removal", "--out", str(labels)]) == 0
        assert run(["encode", "--dataset", str(dataset_path), "--kind", "slope",
                    "--out", str(features)]) == 0
        assert (tmp_path / "feat.dspx.meta.json").exists()
        assert run(["train", "--features", str(features), "--labels", str(labels),
                    "--train-runs", "0", "--n1", "4", "--n2", "2", "--kmax", "2",
                    "--latent-dim", "6", "--batch-size", "16",
                    "--log", str(tmp_path / "log.jsonl"), "--out", str(model)]) == 0
        log_lines = [json.loads(l) for l in
                     (tmp_path / "log.jsonl").read_text().splitlines()]
        assert len(log_lines) == 6
        assert {"phase", "epoch", "l_recon", "l_cls", "l_total"} <= set(log_lines[0])
        assert run(["predict", "--model", str(model), "--features", str(features),
                    "--out", str(preds)]) == 0
        rows = _read_csv(preds)
        assert len(rows) == 120
        assert set(rows[0]) == {"node_id", "run_id", "probability", "label"}

    def test_train_rf_and_predict(self, dataset_path, tmp_path):
        labels = tmp_path / "labels.csv"
        model = tmp_path / "model.dspf"
        preds = tmp_path / "pred.csv"
        assert run(["preprocess", "--dataset", str(dataset_path),
                    "--skip-rigid-removal", "--out", str(labels)]) == 0
        assert run(["train-rf", "--dataset", str(dataset_path), "--encoding",
                    "displacement", "--labels", str(labels), "--trees", "5",
                    "--train-runs", "0,1", "--out", str(model)]) == 0
        features = tmp_path / "feat.dspx"
        assert run(["encode", "--dataset", str(dataset_path), "--kind",
                    "displacement", "--out", str(features)]) == 0
        assert run(["predict", "--model", str(model), "--features", str(features),
                    "--out", str(preds)]) == 0
        assert len(_read_csv(preds)) == 120


class TestCrossings:
    def test_csv_shape(self, dataset_path, tmp_path):
        out = tmp_path / "crossings.csv"
        assert run(["crossings", "--dataset", str(dataset_path),
                    "--out", str(out)]) == 0
        rows = _read_csv(out)
        assert len(rows) == 30 * 64
        final = [r for r in rows if r["node_id"] == rows[0]["node_id"]][-1]
        assert int(final["timestep"]) == 63


class TestEvaluate:
    def test_report_and_svg(self, dataset_path, tmp_path):
        report = tmp_path / "report.json"
        svg = tmp_path / "report.svg"
        code = run(["evaluate", "--dataset", str(dataset_path),
                    "--skip-rigid-removal",
                    "--encodings", "slope", "--classifiers", "rf",
                    "--train-runs", "0,1", "--val-runs", "2,3",
                    "--trees", "5", "--seed", "1",
                    "--report", str(report), "--svg", str(svg)])
        assert code == 0
        payload = json.loads(report.read_text())
        assert payload["provenance"]["config_hash"]
        assert payload["provenance"]["tool_version"]
        assert payload["report"]["entries"][0]["encoding"] == "slope"
        assert svg.read_text().startswith("<svg")

    def test_threshold_gate_exit_code(self, dataset_path, tmp_path):
        code = run(["evaluate", "--dataset", str(dataset_path),
                    "--skip-rigid-removal",
                    "--encodings", "slope", "--classifiers", "rrae",
                    "--train-runs", "0", "--val-runs", "2,3",
                    "--n1", "1", "--n2", "0", "--kmax", "2", "--latent-dim", "6",
                    "--batch-size", "16",
                    "--min-per-class-accuracy", "1.01"])
        assert code == 3


class TestPipeline:
    def _config(self, tmp_path, seed=7):
        return {
            "seed": seed,
            "outdir": str(tmp_path / "out"),
            "generate": {"n_nodes": 30, "n_runs": 4, "timesteps": 64,
                         "peak_step": 48},
            "preprocess": {"rigid_removal": False},
            "evaluate": {"encodings": ["slope"], "classifiers": ["rf"],
                         "train_runs": [0, 1], "val_runs": [2, 3],
                         "forest": {"n_trees": 5}, "svg": True},
        }

    def test_smoke_and_determinism(self, tmp_path):
        cfg_path = tmp_path / "pipeline.json"
        cfg_path.write_text(json.dumps(self._config(tmp_path)))
        assert run(["pipeline", "--config", str(cfg_path)]) == 0
        report = (tmp_path / "out" / "report.json").read_bytes()
        assert (tmp_path / "out" / "labels.csv").exists()
        assert (tmp_path / "out" / "report.svg").exists()
        # rerun: byte-identical report
        assert run(["pipeline", "--config", str(cfg_path)]) == 0
        assert (tmp_path / "out" / "report.json").read_bytes() == report

    def test_missing_dataset_fails_validation(self, tmp_path):
        cfg = self._config(tmp_path)
        del cfg["generate"]
        cfg_path = tmp_path / "bad.json"
        cfg_path.write_text(json.dumps(cfg))
        assert run(["pipeline", "--config", str(cfg_path)]) == 1


class TestArgumentErrors:
    def test_unknown_subcommand(self):
        assert run(["frobnicate"]) == 1

    def test_missing_required_flag(self):
        assert run(["encode", "--kind", "slope"]) == 1

    def test_version_exits_zero(self, capsys):
        assert run(["--version"]) == 0


def test_config_hash_stability():
    from dispscan.provenance import config_hash
    a = {"x": 1, "nested": {"b": 2.5, "a": [1, 2]}}
    b = {"nested": {"a": [1, 2], "b": 2.5}, "x": 1}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "x": 2})
