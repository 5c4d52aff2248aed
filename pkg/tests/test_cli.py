import json

import numpy as np
import pytest

from nodec.cli import main
from nodec.metrics import read_metrics_csv
from nodec.pipelines import check_assertion

TINY_KURAMOTO = """\
experiment = kuramoto
graph.n = 16
graph.p = 0.3
graph.seed = 2
dynamics.omega_seed = 5
controller.head_init = zero
training.epochs = 3
training.lr = 0.02
training.batch = 2
training.max_horizon = 3.0
eval.samples = 4
eval.horizon = 6.0
eval.solver.tau = 0.1
eval.solver.control_interval = 0.1
solver.tau = 0.1
solver.control_interval = 0.1
"""

TINY_SIR = """\
experiment = sir
graph.rows = 6
graph.cols = 6
dynamics.budget = 20.0
training.epochs = 2
training.horizon = 1.0
solver.tau = 0.02
solver.control_interval = 0.02
solver.sample_stride = 1
eval.horizon = 1.0
eval.solver.tau = 0.01
eval.solver.control_interval = 0.01
"""


@pytest.fixture
def kuramoto_cfg_file(tmp_path):
    path = tmp_path / "kuramoto.cfg"
    path.write_text(TINY_KURAMOTO)
    return path


@pytest.fixture
def sir_cfg_file(tmp_path):
    path = tmp_path / "sir.cfg"
    path.write_text(TINY_SIR)
    return path


class TestTrainCommand:
    def test_writes_artifacts(self, kuramoto_cfg_file, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["train", "--config", str(kuramoto_cfg_file), "--out", str(out)]) == 0
        assert (out / "checkpoint.ckpt").exists()
        assert (out / "history.csv").exists()
        assert (out / "config.resolved.cfg").exists()
        record = json.loads((out / "run.json").read_text())
        assert record["experiment"] == "kuramoto"
        assert record["run_id"].startswith("kuramoto-")

    def test_same_seed_identical_checkpoint(self, kuramoto_cfg_file, tmp_path, capsys):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        main(["train", "--config", str(kuramoto_cfg_file), "--out", str(out1)])
        main(["train", "--config", str(kuramoto_cfg_file), "--out", str(out2)])
        assert (out1 / "checkpoint.ckpt").read_bytes() == (out2 / "checkpoint.ckpt").read_bytes()

    def test_missing_config_key_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("experiment = sir\nwhat.is.this = 1\n")
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2

    def test_missing_required_key_exits_2(self, tmp_path, capsys):
        # graph.kind=file requires graph.file
        bad = tmp_path / "bad.cfg"
        bad.write_text("experiment = kuramoto\ngraph.kind = file\n")
        assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
        assert "graph.file" in capsys.readouterr().err

    def test_nonexistent_config_exits_2(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "ghost.cfg"),
                     "--out", str(tmp_path / "o")]) == 2

    def test_instability_in_first_epoch_exits_1(self, tmp_path, capsys):
        # Step size far beyond the stability limit of the infection dynamics.
        cfg = tmp_path / "unstable.cfg"
        cfg.write_text(TINY_SIR.replace("solver.tau = 0.02", "solver.tau = 0.5")
                       .replace("solver.control_interval = 0.02",
                                "solver.control_interval = 0.5")
                       .replace("training.horizon = 1.0", "training.horizon = 3.0")
                       .replace("dynamics.budget = 20.0", "dynamics.budget = 5000.0"))
        with np.errstate(over="ignore", invalid="ignore"):
            code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code == 1
        assert "instability" in capsys.readouterr().err


class TestEvaluateCommand:
    def test_kuramoto_eval_outputs(self, kuramoto_cfg_file, tmp_path, capsys):
        out = tmp_path / "run"
        main(["train", "--config", str(kuramoto_cfg_file), "--out", str(out)])
        code = main(["evaluate", "--config", str(kuramoto_cfg_file),
                     "--checkpoint", str(out / "checkpoint.ckpt"),
                     "--out", str(out)])
        assert code == 0
        rows = read_metrics_csv(out / "metrics.csv")
        kinds = {r["controller"] for r in rows}
        assert kinds == {"mlp-nodec", "feedback"}
        rel = (out / "relative.csv").read_text().strip().splitlines()
        assert rel[0].startswith("sample,")
        assert len(rel) - 1 == 4  # one row per eval sample
        assert (out / "summary.txt").exists()

    def test_sir_eval_summary_sorted_by_peak(self, sir_cfg_file, tmp_path, capsys):
        out = tmp_path / "run"
        main(["train", "--config", str(sir_cfg_file), "--out", str(out)])
        code = main(["evaluate", "--config", str(sir_cfg_file),
                     "--checkpoint", str(out / "checkpoint.ckpt"), "--out", str(out)])
        assert code == 0
        lines = (out / "summary.txt").read_text().strip().splitlines()
        assert lines[0].split() == ["Control", "Peak", "Infection", "Total", "Energy"]
        names = [ln.split()[0] for ln in lines[1:]]
        assert set(names) == {"NODEC", "TCC", "RND", "F"}
        peaks = [float(ln.split()[1]) for ln in lines[1:]]
        assert peaks == sorted(peaks)
        # conservation survives the round trip through the trajectory CSV
        from nodec.solve import read_trajectory_csv
        header, data = read_trajectory_csv(out / "trajectory_free.csv")
        n = 36
        totals = data[:, 1:1 + 4 * n].sum(axis=1)
        assert np.max(np.abs(totals - n)) <= 1e-6

    def test_hundred_sample_eval_emits_hundred_relative_rows(self, tmp_path, capsys):
        cfg_text = TINY_KURAMOTO.replace("eval.samples = 4", "eval.samples = 100") \
                                .replace("eval.horizon = 6.0", "eval.horizon = 2.0")
        cfg = tmp_path / "k100.cfg"
        cfg.write_text(cfg_text)
        out = tmp_path / "run"
        main(["train", "--config", str(cfg), "--out", str(out)])
        assert main(["evaluate", "--config", str(cfg),
                     "--checkpoint", str(out / "checkpoint.ckpt"),
                     "--out", str(out)]) == 0
        rel = (out / "relative.csv").read_text().strip().splitlines()
        assert len(rel) - 1 == 100

    def test_checkpoint_mismatch_exits_1(self, sir_cfg_file, kuramoto_cfg_file,
                                         tmp_path, capsys):
        out = tmp_path / "run"
        main(["train", "--config", str(kuramoto_cfg_file), "--out", str(out)])
        code = main(["evaluate", "--config", str(sir_cfg_file),
                     "--checkpoint", str(out / "checkpoint.ckpt"),
                     "--out", str(tmp_path / "x")])
        assert code == 1

    def test_nodec_requires_checkpoint(self, kuramoto_cfg_file, tmp_path, capsys):
        assert main(["evaluate", "--config", str(kuramoto_cfg_file),
                     "--out", str(tmp_path / "x")]) == 1


class TestCompareCommand:
    def _two_runs(self, sir_cfg_file, tmp_path):
        out = tmp_path / "run"
        main(["train", "--config", str(sir_cfg_file), "--out", str(out)])
        main(["evaluate", "--config", str(sir_cfg_file),
              "--checkpoint", str(out / "checkpoint.ckpt"), "--out", str(out)])
        return out

    def test_compare_run_with_itself(self, sir_cfg_file, tmp_path, capsys):
        out = self._two_runs(sir_cfg_file, tmp_path)
        code = main(["compare", str(out), str(out),
                     "--out", str(tmp_path / "merged.csv")])
        assert code == 0
        merged = read_metrics_csv(tmp_path / "merged.csv")
        assert len(merged) == 8  # four controllers, twice

    def test_missing_metrics_reported(self, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["compare", str(empty), str(empty)]) == 1
        assert "missing metrics.csv" in capsys.readouterr().err

    def test_assertion_flag(self, sir_cfg_file, tmp_path, capsys):
        out = self._two_runs(sir_cfg_file, tmp_path)
        ok = main(["compare", str(out), str(out), "--assert", "peak:NODEC<F"])
        bad = main(["compare", str(out), str(out), "--assert", "peak:F<NODEC"])
        assert (ok, bad) == (0, 1)

    def test_self_comparison_shows_zero_relative_differences(
            self, sir_cfg_file, tmp_path, capsys):
        out = self._two_runs(sir_cfg_file, tmp_path)
        assert main(["compare", str(out), str(out)]) == 0
        text = capsys.readouterr().out
        assert "relative differences" in text
        import re
        rels = [float(m) for m in re.findall(r"(?:energy|r_final|peak_infected): ([+-][\d.e+-]+)", text)]
        assert rels and all(v == 0.0 for v in rels)

    def test_resolved_snapshot_rerun_reproduces_metrics_bitwise(
            self, sir_cfg_file, tmp_path, capsys):
        out = self._two_runs(sir_cfg_file, tmp_path)
        again = tmp_path / "again"
        code = main(["evaluate", "--config", str(out / "config.resolved.cfg"),
                     "--checkpoint", str(out / "checkpoint.ckpt"),
                     "--out", str(again)])
        assert code == 0
        assert (again / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()

    def test_single_run_rejected(self, tmp_path, capsys):
        assert main(["compare", str(tmp_path)]) == 1


class TestGenGraph:
    def test_writes_edge_list(self, tmp_path, capsys):
        cfg = tmp_path / "g.cfg"
        cfg.write_text("experiment = sir\ngraph.rows = 4\ngraph.cols = 4\n")
        out = tmp_path / "g.edges"
        assert main(["gen-graph", "--config", str(cfg), "--out", str(out)]) == 0
        text = out.read_text().splitlines()
        assert text[0] == "# nodes=16"
        assert len(text) == 1 + 24


class TestAssertionParsing:
    def test_expressions(self):
        rows = [
            {"controller": "gnn-nodec", "peak_infected": 0.1, "energy": 5.0, "r_final": None},
            {"controller": "random-constant", "peak_infected": 0.3, "energy": 4.0, "r_final": None},
            {"controller": "free", "peak_infected": 0.5, "energy": 0.0, "r_final": None},
        ]
        assert check_assertion("peak:NODEC<RND<F", rows)[0]
        assert not check_assertion("peak:RND<NODEC", rows)[0]
        assert not check_assertion("nope:A<B", rows)[0]
        assert not check_assertion("peak:NODEC", rows)[0]
        assert not check_assertion("peak:NODEC<TCC", rows)[0]  # no TCC rows


class TestSeedOverride:
    def test_cli_seed_changes_eval_stream(self, kuramoto_cfg_file, tmp_path, capsys):
        out = tmp_path / "run"
        main(["train", "--config", str(kuramoto_cfg_file), "--out", str(out)])
        a, b = tmp_path / "a", tmp_path / "b"
        main(["evaluate", "--config", str(kuramoto_cfg_file), "--seed", "1",
              "--checkpoint", str(out / "checkpoint.ckpt"), "--out", str(a)])
        main(["evaluate", "--config", str(kuramoto_cfg_file), "--seed", "2",
              "--checkpoint", str(out / "checkpoint.ckpt"), "--out", str(b)])
        ra = read_metrics_csv(a / "metrics.csv")
        rb = read_metrics_csv(b / "metrics.csv")
        assert any(x["r_final"] != y["r_final"] for x, y in zip(ra, rb))
