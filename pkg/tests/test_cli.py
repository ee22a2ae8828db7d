import json
import subprocess
import sys

import numpy as np
import pytest

from etcnas.cli import main
from etcnas.controllers import SearchReport
from etcnas.graph import count_params, deserialize
from etcnas.ingest import read_dataset, write_dataset
from etcnas.orchestrator import make_separable_dataset
from etcnas.space import REFERENCES, build_reference
from fixtures import write_tls_fixture

SMALL_SEARCH = ["--nodes", "2", "--filters", "4", "--batch-size", "16", "--epochs", "1"]


@pytest.fixture
def dataset(tmp_path):
    path = tmp_path / "data.bin"
    write_dataset(make_separable_dataset(n=100, length=16, num_classes=2, seed=0), path)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestExitCodes:
    def test_no_command_is_usage_error(self, capsys):
        code, _, err = run(capsys)
        assert code == 1 and "error" in err

    def test_unknown_flag(self, capsys):
        assert run(capsys, "space-size", "--bogus")[0] == 1

    def test_unknown_strategy(self, capsys, dataset, tmp_path):
        code, _, err = run(capsys, "search", "--dataset", dataset, "--strategy", "bayes", "--output", tmp_path)
        assert code == 1 and "bayes" in err

    def test_missing_file(self, capsys, tmp_path):
        assert run(capsys, "eval", tmp_path / "nope.ckpt", tmp_path / "nope.bin")[0] == 1

    def test_console_script_entry(self):
        proc = subprocess.run([sys.executable, "-m", "etcnas.cli", "space-size", "--nodes", "1", "--ops",
                               "identity", "--cells", "normal"], capture_output=True, text=True)
        assert proc.returncode == 0 and proc.stdout.strip() == "1"


class TestSpaceSize:
    def test_default(self, capsys):
        code, out, _ = run(capsys, "space-size")
        assert code == 0 and int(out) == 225_000_000**2

    def test_two_node_cell(self, capsys):
        assert run(capsys, "space-size", "--nodes", "2", "--cells", "normal")[1].strip() == "2500"

    def test_bad_op(self, capsys):
        assert run(capsys, "space-size", "--ops", "conv_9")[0] == 1


class TestBuildReference:
    def test_descriptor(self, capsys, tmp_path):
        out = tmp_path / "dp.json"
        code, _, err = run(capsys, "build-reference", "DeepPacketCNN", "--out", out)
        assert code == 0
        graph = deserialize(out.read_text())
        assert graph == build_reference("DeepPacketCNN")
        assert f"{count_params(graph).total:,}" in err

    def test_all_names(self, capsys):
        for name in REFERENCES:
            assert run(capsys, "build-reference", name, "--input-len", "64", "--num-classes", "3")[0] == 0

    def test_unknown(self, capsys):
        assert run(capsys, "build-reference", "AlexNet")[0] == 1


class TestPreprocess:
    def test_fixture(self, capsys, tmp_path):
        pcap = write_tls_fixture(tmp_path / "f.pcap")
        labels = tmp_path / "labels.txt"
        labels.write_text("(^|\\.)example\\.com$,web\n")
        code, out, _ = run(capsys, "preprocess", pcap, "--labels", labels, "--out", tmp_path / "d.bin")
        assert code == 0 and "labeled 1" in out
        ds = read_dataset(tmp_path / "d.bin")
        assert len(ds) == 1 and ds.feature_len == 1800

    def test_bad_regex(self, capsys, tmp_path):
        pcap = write_tls_fixture(tmp_path / "f.pcap")
        labels = tmp_path / "labels.txt"
        labels.write_text("([a-z,web\n")
        code, _, err = run(capsys, "preprocess", pcap, "--labels", labels, "--out", tmp_path / "d.bin")
        assert code == 1 and "([a-z" in err

    def test_empty_capture_warns(self, capsys, tmp_path):
        from etcnas.ingest.pcap import write_pcap
        write_pcap(tmp_path / "e.pcap", [])
        labels = tmp_path / "labels.txt"
        labels.write_text("x,web\n")
        code, _, err = run(capsys, "preprocess", tmp_path / "e.pcap", "--labels", labels, "--out",
                           tmp_path / "d.bin")
        assert code == 0 and "no samples" in err
        assert len(read_dataset(tmp_path / "d.bin")) == 0


class TestSearch:
    def test_smoke_and_eval(self, capsys, dataset, tmp_path):
        out = tmp_path / "run"
        code, text, _ = run(capsys, "search", "--dataset", dataset, "--trials", 2, "--output", out, *SMALL_SEARCH)
        assert code == 0
        assert "82.86%" in text
        report = SearchReport.load(out / "report.jsonl")
        assert len(report.records) == 2
        cfg = json.loads((out / "config.json").read_text())
        assert cfg["trials"] == 2 and cfg["strategy"] == "rs"
        code, csv_text, _ = run(capsys, "eval", out / "best.ckpt", dataset, "--out", tmp_path / "m.csv")
        assert code == 0
        header, row = csv_text.strip().splitlines()
        assert header.startswith("Accuracy (%)")
        values = row.split(",")
        assert values[0] == values[2]  # weighted recall equals accuracy

    def test_float32(self, capsys, dataset, tmp_path):
        code, _, _ = run(capsys, "search", "--dataset", dataset, "--trials", 1, "--output", tmp_path / "f32",
                         "--dtype", "float32", *SMALL_SEARCH)
        assert code == 0

    def test_config_file_with_flag_override(self, capsys, dataset, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"dataset": str(dataset), "trials": 5, "strategy": "ea", "nodes": 2,
                                   "filters": 4, "batch_size": 16, "epochs": 1}))
        code, _, _ = run(capsys, "search", "--config", cfg, "--trials", 1, "--output", tmp_path / "o")
        assert code == 0
        report = SearchReport.load(tmp_path / "o" / "report.jsonl")
        assert report.strategy == "ea" and len(report.records) == 1

    def test_unknown_config_key(self, capsys, dataset, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"dataset": str(dataset), "learning_rate": 0.1}))
        code, _, err = run(capsys, "search", "--config", cfg, "--output", tmp_path / "o")
        assert code == 1 and "learning_rate" in err

    def test_resume_after_interruption(self, capsys, dataset, tmp_path):
        out = tmp_path / "run"
        args = ["search", "--dataset", dataset, "--trials", 3, "--output", out, *SMALL_SEARCH]
        assert run(capsys, *args)[0] == 0
        first = SearchReport.load(out / "report.jsonl")
        # simulate a kill mid-write: keep header + one trial + a torn line
        lines = (out / "report.jsonl").read_text().splitlines()
        (out / "report.jsonl").write_text("\n".join(lines[:2]) + "\n" + lines[2][:15])
        assert run(capsys, *args)[0] == 0
        second = SearchReport.load(out / "report.jsonl")
        assert [(r.sequence, r.reward) for r in second.records] == [(r.sequence, r.reward) for r in first.records]

    def test_output_env(self, capsys, dataset, tmp_path, monkeypatch):
        monkeypatch.setenv("ETCNAS_OUTPUT", str(tmp_path / "env-out"))
        assert run(capsys, "search", "--dataset", dataset, "--trials", 1, *SMALL_SEARCH)[0] == 0
        assert (tmp_path / "env-out" / "report.jsonl").exists()

    def test_sweep(self, capsys, dataset, tmp_path):
        code, out, _ = run(capsys, "search", "--dataset", dataset, "--trials", 1, "--output", tmp_path / "s",
                           "--sweep", "1", *SMALL_SEARCH)
        assert code == 0
        assert out.splitlines()[0].startswith("epochs,")
        assert len(out.strip().splitlines()) == 2


class TestEvalErrors:
    def test_incompatible_classes(self, capsys, dataset, tmp_path):
        out = tmp_path / "run"
        run(capsys, "search", "--dataset", dataset, "--trials", 1, "--output", out, *SMALL_SEARCH)
        other = tmp_path / "three.bin"
        write_dataset(make_separable_dataset(n=30, length=16, num_classes=3), other)
        code, _, err = run(capsys, "eval", out / "best.ckpt", other)
        assert code == 1 and "classes" in err

    def test_perfect_fit_scores_100(self, capsys, tmp_path):
        from etcnas.engine import init_params
        from etcnas.engine.checkpoint import save_checkpoint
        from etcnas.graph import GraphBuilder, Kind
        from etcnas.ingest import Dataset
        # a hand-set model that thresholds the mean byte
        b = GraphBuilder()
        x = b.layer(Kind.INPUT, length=4, channels=1)
        x = b.layer(Kind.GLOBALAVGPOOL, x)
        x = b.layer(Kind.DENSE, x, name="d", units=2)
        b.layer(Kind.SOFTMAX, x)
        model = init_params(b.build(2))
        model.params["d"]["kernel"][:] = [[-100.0, 100.0]]
        model.params["d"]["bias"][:] = [50.0, -50.0]
        save_checkpoint(model, tmp_path / "m.ckpt")
        feats = np.array([[0, 10, 20, 30], [250, 240, 230, 255], [5, 5, 5, 5], [200, 255, 255, 200]], np.uint8)
        write_dataset(Dataset(feats, np.array([0, 1, 0, 1]), ["lo", "hi"]), tmp_path / "d.bin")
        code, out, _ = run(capsys, "eval", tmp_path / "m.ckpt", tmp_path / "d.bin")
        assert code == 0
        values = out.strip().splitlines()[1].split(",")
        assert values[:4] == ["100.0"] * 4
        assert values[4:] == [str(count_params(model.graph).total), str(count_params(model.graph).trainable)]


class TestReport:
    def make_report(self, tmp_path, name, strategy, space=None, trials=12):
        from etcnas.controllers import make_strategy, run_search
        from etcnas.space import SpaceConfig
        space = space or SpaceConfig(nodes_per_cell=2)
        report = run_search(make_strategy(strategy, space, 0), lambda s: (sum(s) % 7) / 7, trials,
                            space=space.to_dict())
        report.save(tmp_path / name)
        return tmp_path / name

    def test_single_report(self, capsys, tmp_path):
        path = self.make_report(tmp_path, "rs.jsonl", "rs")
        code, out, _ = run(capsys, "report", path)
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "strategy,top1,top5,top10"
        assert lines[1].startswith("rs,")

    def test_two_strategies_and_grid(self, capsys, tmp_path):
        a = self.make_report(tmp_path, "rs.jsonl", "rs", trials=30)
        b = self.make_report(tmp_path, "ea.jsonl", "ea", trials=30)
        code, out, _ = run(capsys, "report", a, b, "--out", tmp_path / "rep")
        assert code == 0
        assert out.splitlines()[0] == "strategy,top1,top5,top10,top20,top30"
        assert (tmp_path / "rep" / "top_n.csv").exists()

    def test_mixed_spaces(self, capsys, tmp_path):
        from etcnas.space import SpaceConfig
        a = self.make_report(tmp_path, "a.jsonl", "rs")
        b = self.make_report(tmp_path, "b.jsonl", "rs", space=SpaceConfig(nodes_per_cell=3))
        code, _, err = run(capsys, "report", a, b)
        assert code == 1 and "search spaces" in err
