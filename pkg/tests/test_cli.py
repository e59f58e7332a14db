import json
import subprocess
import sys
import warnings

import pytest

from specbench.cli import main
from specbench.config import ConfigError, load_config, parse_config

SBM = {"kind": "sbm", "params": {"sizes": [15, 15, 15], "p_in": 0.35, "p_out": 0.04}, "seed": 2}


def write_config(tmp_path, **extra):
    cfg = {"datasets": [{"name": "tiny", "generator": SBM}], "models": ["mlp", "gcn"],
           "protocol": {"runs": 2}, "train": {"epochs": 5, "hidden": 8}, "output_dir": str(tmp_path / "out")}
    cfg.update(extra)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    return p


def run(capsys, *argv):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        code = main(list(argv))
    out, err = capsys.readouterr()
    lines = [ln for ln in out.splitlines() if ln.strip()]
    return code, json.loads(lines[-1]) if lines else None, err


class TestConfig:
    def test_defaults_match_main_column(self, tmp_path):
        cfg = parse_config({"datasets": [{"name": "a", "generator": SBM}]})
        p = cfg.protocol
        assert (p.bin_width, p.num_classes, p.mode, p.runs, p.layers, p.hidden) == (
            0.1, 5, "maxabs_rescale", 3, 2, 64)
        assert (p.train.epochs, p.train.learning_rate, p.train.scheduler, p.train.init) == (
            500, 1e-3, "none", "default_uniform")
        assert p.fractions == (0.6, 0.2, 0.2) and cfg.models == ("gcn",)

    @pytest.mark.parametrize("bad", [
        {},
        {"datasets": []},
        {"datasets": [{"name": "a"}]},
        {"datasets": [{"name": "a", "generator": SBM}], "models": ["gat"]},
        {"datasets": [{"name": "a", "generator": SBM}], "train": {"dropout": 0.5}},
        {"datasets": [{"name": "a", "generator": SBM}], "protocol": {"fractions": [0.5, 0.3, 0.3]}},
        {"datasets": [{"name": "a", "generator": SBM}, {"name": "a", "generator": SBM}]},
        {"datasets": [{"name": "a", "generator": SBM}], "surprise": 1},
    ])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            parse_config(bad)

    def test_overrides_and_env(self, tmp_path, monkeypatch):
        cfg = load_config(write_config(tmp_path), {"protocol": {"runs": 5}, "train": {"epochs": None}})
        assert cfg.protocol.runs == 5 and cfg.protocol.train.epochs == 5
        monkeypatch.setenv("SPECBENCH_OUTPUT_DIR", str(tmp_path / "env"))
        assert cfg.resolved_output_dir() == tmp_path / "env"

    def test_edge_file_dataset(self, tmp_path):
        (tmp_path / "g.txt").write_text("0 1\n1 2\n2 0\n")
        (tmp_path / "f.csv").write_text("1,0\n0,1\n1,1\n")
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"datasets": [{"name": "tri", "edges": "g.txt", "features": "f.csv"}]}))
        (ds,) = load_config(p).load_datasets()
        assert ds.graph.n == 3 and ds.graph.features.shape == (3, 2)


class TestCommands:
    def test_bench_and_report(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        code, msg, _ = run(capsys, "bench", "--config", str(cfg))
        assert code == 0 and msg["status"] == "ok" and msg["failed"] == 0
        store = tmp_path / "out" / "results.jsonl"
        lines = store.read_text().splitlines()
        header = json.loads(lines[0])
        assert header["tool_version"] == "0.1.0" and header["config_hash"]
        recs = [json.loads(x) for x in lines[1:]]
        nonempty = json.loads(lines[1])["bin_index"] is not None
        assert nonempty and len(recs) == msg["records"]
        code, msg, _ = run(capsys, "report", "--results", str(store), "--out", str(tmp_path / "rep"))
        assert code == 0 and msg["curves"] == 2
        for name in ("curves.csv", "auac.csv", "ranking.csv", "ranking.json", "curves.svg", "report.json"):
            assert (tmp_path / "rep" / name).exists()
        rep = json.loads((tmp_path / "rep" / "report.json").read_text())
        assert rep["config_hash"] == header["config_hash"] and rep["tool_version"] == "0.1.0"

    def test_bench_counts(self, tmp_path, capsys):
        from specbench.bench import prepare
        from specbench.config import load_graph
        cfg = write_config(tmp_path, models=["gcn", "sgc"], protocol={"runs": 3})
        code, msg, _ = run(capsys, "bench", "--config", str(cfg), "--epochs", "2")
        ds = prepare("tiny", load_graph({"name": "tiny", "generator": SBM}))
        assert code == 0 and msg["records"] == ds.bins.nonempty().size * 2 * 3

    def test_report_empty_store(self, tmp_path, capsys):
        (tmp_path / "r.jsonl").write_text("")
        code, msg, err = run(capsys, "report", "--results", str(tmp_path / "r.jsonl"))
        assert code == 2 and "no records" in msg["error"] and "no records" in err

    def test_report_header_only(self, tmp_path, capsys):
        (tmp_path / "r.jsonl").write_text(json.dumps({"kind": "header", "schema_version": 1}) + "\n")
        code, msg, _ = run(capsys, "report", "--results", str(tmp_path / "r.jsonl"))
        assert code == 2 and "no records" in msg["error"]

    def test_theory(self, tmp_path, capsys):
        code, msg, _ = run(capsys, "theory", "--n", "4", "--k", "32", "--samples", "1000", "--seed", "7",
                           "--out", str(tmp_path))
        assert code == 0
        assert msg["max_observed_deviation"] <= 0.70711 and msg["lipschitz_violations"] == 0
        assert (tmp_path / "theory_n4_k32.json").exists()

    def test_theory_failure_exit_3(self, capsys, monkeypatch):
        import specbench.cli as cli
        monkeypatch.setattr(cli, "theory_report", lambda *a, **k: {
            "holds_paper_bound": False, "holds_euclidean_bound": True})
        code, msg, _ = run(capsys, "theory", "--n", "4", "--k", "8", "--pairs", "10")
        assert code == 3 and msg["kind"] == "check"

    def test_decompose_edges(self, tmp_path, capsys):
        (tmp_path / "g.txt").write_text("10 20\n20 30\n30 10\n40 40\n")
        code, msg, _ = run(capsys, "decompose", "--edges", str(tmp_path / "g.txt"), "--out", str(tmp_path / "o"))
        assert code == 0 and msg["datasets"][0]["n"] == 3
        assert (tmp_path / "o" / "g.basis.npz").exists()
        assert (tmp_path / "o" / "g.remap.csv").read_text().splitlines()[1] == "10,0"

    def test_synth_and_recover(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        code, msg, _ = run(capsys, "synth", "--config", str(cfg))
        doc = json.loads(open(msg["files"][0]).read())
        assert code == 0 and doc["config_hash"] and doc["tasks"]
        code, msg, _ = run(capsys, "recover", "--config", str(cfg), "--epochs", "3")
        assert code == 0 and len(msg["results"]) == 2
        assert (tmp_path / "out" / "recover_tiny_low-high.svg").exists()

    def test_env_override(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("SPECBENCH_OUTPUT_DIR", str(tmp_path / "env"))
        code, _, _ = run(capsys, "theory", "--n", "3", "--k", "4", "--samples", "50", "--pairs", "10",
                         "--out", str(tmp_path / "ignored"))
        assert code == 0 and (tmp_path / "env" / "theory_n3_k4.json").exists()

    @pytest.mark.parametrize("argv", [[], ["bogus"], ["bench"], ["theory", "--n", "x", "--k", "2"]])
    def test_usage_errors(self, capsys, argv):
        code, msg, _ = run(capsys, *argv)
        assert code == 1 and msg["status"] == "error" and msg["kind"] == "usage"

    def test_bad_config(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text('{"datasets": []}')
        code, msg, _ = run(capsys, "bench", "--config", str(p))
        assert code == 1 and "datasets" in msg["error"]

    def test_entry_point(self):
        r = subprocess.run([sys.executable, "-m", "specbench.cli", "--version"], capture_output=True, text=True)
        assert r.returncode == 0 and "0.1.0" in r.stdout
