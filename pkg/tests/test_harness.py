import json
import math
from dataclasses import replace

import numpy as np
import pytest

from geobound.bounds import BoundConstants, FunctionClassSpec, evaluate_bounds, psi
from geobound.cli import main
from geobound.fixtures import flat_disk
from geobound.harness import (
    SCHEMAS,
    ConfigError,
    ExperimentConfig,
    ResultsTable,
    UnknownColumnError,
    config_from_results,
    emit_plot_data,
    parse_config,
    read_csv,
    run_bound_eval,
    run_curvature_ablation,
    run_embedding_geometry,
    run_experiment,
    run_synthetic_decay,
    worker_count,
    write_csv,
)
from geobound.lipnet import TrainConfig
from geobound.spaceform import SpaceFormGeometry

TINY_NET = TrainConfig(hidden_width=8, epochs=3, batch=16, target_norm=1.25, output_bound=1.5)


def tiny(kind="synthetic_decay", **kw):
    base = dict(kind=kind, d=(3,), kappas=(0.0,), n=(64,), seeds=(1,), D=10,
                test_factor=2, net=TINY_NET, workers=1)
    base.update(kw)
    return ExperimentConfig(**base).validate()


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg.kind == "synthetic_decay"
        assert cfg.n == (100, 316, 1000, 3162, 10000)
        assert cfg.kappas == (1.0, 0.0, -1.0) and len(cfg.seeds) == 10

    def test_parse_and_override(self):
        text = "[experiment]\nkind = bound_eval\nn = 100, 200\nD = 7\nd = 2\n[class]\nL = 2\n"
        cfg = parse_config(text, {"experiment.n": "10 20 30", "constants.c_pack": "2"})
        assert cfg.kind == "bound_eval" and cfg.n == (10, 20, 30)
        assert cfg.D == 7 and cfg.d == (2,) and cfg.L == (2.0,)
        assert cfg.constants.c_pack == 2.0

    def test_round_trip(self):
        cfg = tiny(kappas=(-1.0, 0.5), constants=BoundConstants(big_o_scale=0.3))
        assert parse_config(cfg.to_ini()) == cfg

    @pytest.mark.parametrize("text", [
        "[experiment]\nn = 100, 50\n",
        "[experiment]\nseeds = \n",
        "[experiment]\nkind = nope\n",
        "[experiment]\nbogus = 1\n",
        "[wat]\nx = 1\n",
        "[net]\nloss = l1\n",
        "[experiment]\ninputs = /definitely/missing.csv\n",
        "not an ini",
    ])
    def test_invalid(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_ablation_needs_two_kappas(self):
        with pytest.raises(ConfigError):
            parse_config("[experiment]\nkind = curvature_ablation\nkappas = 0\n")

    def test_threads_env(self, monkeypatch):
        cfg = tiny(workers=8)
        monkeypatch.setenv("GEOBOUND_THREADS", "2")
        assert worker_count(cfg) == 2
        monkeypatch.setenv("GEOBOUND_THREADS", "x")
        with pytest.raises(ConfigError):
            worker_count(cfg)
        monkeypatch.delenv("GEOBOUND_THREADS")
        assert worker_count(cfg) == 8


class TestGapRuns:
    def test_single_cell(self):
        t = run_synthetic_decay(tiny())
        assert len(t.rows) == 1
        row = t.rows[0]
        assert row["error"] == "" and row["seed"] == 1 and row["n"] == 64
        assert row["gap"] >= 0 and row["bound_curvature"] > 0
        assert t.columns == SCHEMAS["synthetic_decay"]

    def test_error_isolation(self):
        # radius 0.5 shrinks inj so n=8 violates the Dudley precondition
        t = run_synthetic_decay(tiny(n=(8, 64), domain_radius=0.5))
        bad, good = t.rows
        assert "DomainError" in bad["error"] and bad["gap"] is None
        assert good["error"] == "" and good["gap"] >= 0

    def test_ablation_psi_column(self):
        # n=300 keeps alpha below the kappa=-2 validity limit
        t = run_curvature_ablation(tiny("curvature_ablation", kappas=(-2.0, -1.0, 0.0),
                                        n=(300,), seeds=(0, 1)))
        assert [r["kappa"] for r in t.rows] == [-2.0, -2.0, -1.0, -1.0, 0.0, 0.0]
        for r in t.rows:
            assert r["error"] == ""
            assert r["psi"] == psi(r["kappa"], r["L"])
        s = t.metadata["summary"]
        assert set(s["median_gap"]) == {"-2", "-1", "0"}
        assert 0 <= s["bootstrap_hits"] <= 10

    def test_parallel_matches_serial(self):
        cfg = tiny(kappas=(0.0, -1.0), seeds=(0, 1))
        a = run_synthetic_decay(cfg)
        b = run_synthetic_decay(replace(cfg, workers=2))
        assert a.rows == b.rows


class TestBoundEval:
    def cfg(self, **kw):
        base = dict(kind="bound_eval", d=(3,), kappas=(0.0,), n=(1000,), seeds=(0,),
                    D=50, workers=1)
        base.update(kw)
        return ExperimentConfig(**base).validate()

    def test_flat_curvature_term_zero(self):
        t = run_bound_eval(self.cfg())
        assert len(t.rows) == 1
        assert t.rows[0]["curvature_term"] == 0.0 and t.rows[0]["psi"] == 0.0

    def test_n_doubling(self):
        t = run_bound_eval(self.cfg(n=(1000, 2000, 4000)))
        e = [r["euclidean_rademacher"] for r in t.rows]
        assert e[1] / e[0] == pytest.approx(1 / math.sqrt(2), rel=1e-15)
        assert e[2] / e[1] == pytest.approx(1 / math.sqrt(2), rel=1e-15)

    def test_matches_library(self):
        cfg = self.cfg(kappas=(-1.0,), domain_radius=2.0, n=(10_000,), B=(1.0,))
        row = run_bound_eval(cfg).rows[0]
        rep = evaluate_bounds(SpaceFormGeometry.ball(3, -1.0, 2.0), FunctionClassSpec(), 10_000,
                              50, BoundConstants())
        for k, v in rep.csv_row().items():
            assert row[k] == v

    def test_domain_error_recorded(self):
        t = run_bound_eval(self.cfg(n=(10, 1000), L=(5.0,)))
        assert "DomainError" in t.rows[0]["error"]
        assert t.rows[1]["error"] == "" and t.rows[1]["gen_bound"] > 0

    def test_cli_equivalence(self, tmp_path, capsys):
        code = main(["bound", "--d", "3", "--kappa", "-1", "--radius", "2", "--n", "10000",
                     "--D", "50"])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        rep = evaluate_bounds(SpaceFormGeometry.ball(3, -1.0, 2.0), FunctionClassSpec(),
                              10_000, 50)
        assert out["gen_bound"] == rep.gen_bound and out["rademacher"] == rep.rademacher


class TestEmbedding:
    def test_empty_inputs(self, tmp_path):
        cfg = ExperimentConfig(kind="embedding_geometry", inputs=(), workers=1).validate()
        table, run_dir, code = run_experiment(cfg, tmp_path)
        assert table.rows == [] and code == 0
        body = [ln for ln in (run_dir / "results.csv").read_text().splitlines()
                if not ln.startswith("#")]
        assert body == [",".join(SCHEMAS["embedding_geometry"])]

    def test_bad_file_isolated(self, tmp_path):
        good = tmp_path / "disk.csv"
        X = flat_disk(600, 0)
        np.savetxt(good, X, delimiter=",", header="x0,x1,x2", comments="")
        bad = tmp_path / "empty.csv"
        bad.write_text("x0,x1\n")
        cfg = ExperimentConfig(kind="embedding_geometry", inputs=(str(good), str(bad)),
                               workers=1).validate()
        t = run_embedding_geometry(cfg)
        assert t.rows[0]["dataset"] == "disk" and t.rows[0]["error"] == ""
        assert t.rows[0]["improvement_pct"] > 0
        assert t.rows[1]["dataset"] == "empty" and t.rows[1]["error"]


def small_table():
    rows = [{"kappa": k, "n": n, "gap": 1.0 / n + k, "error": ""}
            for k in (-1.0, 0.0, 1.0) for n in (300, 100, 200)]
    return ResultsTable("synthetic_decay", ["kappa", "n", "gap", "error"], rows)


class TestPlotData:
    def test_three_groups(self, tmp_path):
        m = emit_plot_data(small_table(), "n", "gap", "kappa", tmp_path)
        files = sorted(p.name for p in tmp_path.glob("*.csv"))
        assert len(files) == 3 and (tmp_path / "manifest.json").exists()
        assert m["groups"] == [-1.0, 0.0, 1.0]

    def test_round_trip(self, tmp_path):
        t = small_table()
        m = emit_plot_data(t, "n", "gap", "kappa", tmp_path)
        for f in m["files"]:
            back = read_csv(tmp_path / f["file"])
            src = sorted((r for r in t.rows if r["kappa"] == f["group"]), key=lambda r: r["n"])
            assert back.rows == [{"n": r["n"], "gap": r["gap"]} for r in src]

    def test_single_row(self, tmp_path):
        t = ResultsTable("x", ["n", "gap"], [{"n": 5, "gap": 0.5}])
        m = emit_plot_data(t, "n", "gap", None, tmp_path)
        assert m["files"][0]["points"] == 1

    def test_unknown_column(self, tmp_path):
        with pytest.raises(UnknownColumnError):
            emit_plot_data(small_table(), "n", "nope", None, tmp_path)


class TestPersistence:
    def test_csv_round_trip_exact(self, tmp_path):
        rows = [{"a": 0.1 + 0.2, "b": 3, "c": "x, y", "d": None, "e": math.pi * 1e-300}]
        t = ResultsTable("k", ["a", "b", "c", "d", "e"], rows)
        write_csv(t, tmp_path / "r.csv", "[experiment]\nkind = k\n")
        back = read_csv(tmp_path / "r.csv")
        assert back.rows == [{"a": 0.1 + 0.2, "b": 3, "c": "x; y", "d": None,
                              "e": math.pi * 1e-300}]

    def test_config_echo_reproduces(self, tmp_path):
        cfg = tiny("bound_eval", n=(100, 1000), kappas=(-1.0, 0.0))
        t1, d1, _ = run_experiment(cfg, tmp_path)
        text = (d1 / "results.csv").read_text()
        cfg2 = parse_config(config_from_results(text))
        assert cfg2 == cfg
        _, d2, _ = run_experiment(cfg2, tmp_path)
        assert (d2 / "results.csv").read_bytes() == (d1 / "results.csv").read_bytes()
        assert d1 != d2

    def test_byte_identical_gap_runs(self, tmp_path):
        cfg = tiny(kappas=(-1.0, 0.0), seeds=(0, 1))
        _, d1, _ = run_experiment(cfg, tmp_path)
        _, d2, _ = run_experiment(cfg, tmp_path)
        assert (d1 / "results.csv").read_bytes() == (d2 / "results.csv").read_bytes()

    def test_manifest_and_plots(self, tmp_path):
        _, d, code = run_experiment(tiny(kappas=(-1.0, 0.0)), tmp_path)
        man = json.loads((d / "manifest.json").read_text())
        assert code == 0 and man["rows"] == 2 and man["errors"] == 0
        assert man["files"] == ["results.csv"]
        assert (d / "plots" / "gap_vs_n" / "manifest.json").exists()
        assert d.name.startswith("synthetic_decay-")


class TestGoldenSchema:
    def test_columns(self):
        assert SCHEMAS["synthetic_decay"][:10] == [
            "kind", "kappa", "d", "D", "n", "seed", "gap", "bound_curvature",
            "bound_euclidean", "predicted_rate"]
        assert SCHEMAS["curvature_ablation"][:5] == ["kappa", "seed", "gap", "psi",
                                                     "bound_curvature"]
        assert SCHEMAS["embedding_geometry"][:5] == ["dataset", "D", "d_hat", "kappa_hat",
                                                     "improvement_pct"]
        assert SCHEMAS["bound_eval"][:13] == [
            "d", "D", "kappa", "L", "B", "L_loss", "n", "delta", "rademacher", "gen_bound",
            "euclidean_rademacher", "euclidean_gen_bound", "improvement_pct"]

    def test_header_written(self, tmp_path):
        _, d, _ = run_experiment(tiny(), tmp_path)
        header = [ln for ln in (d / "results.csv").read_text().splitlines()
                  if not ln.startswith("#")][0]
        assert header == ",".join(SCHEMAS["synthetic_decay"])


class TestCLI:
    def test_config_error(self, tmp_path):
        assert main(["experiment", "curvature_ablation", "--set", "experiment.kappas=0",
                     "--out", str(tmp_path)]) == 2
        assert main(["experiment", "bound_eval", "--config", str(tmp_path / "none.ini")]) == 2
        assert main(["experiment", "bound_eval", "--set", "bad"]) == 2

    def test_success_partial_failure(self, tmp_path):
        common = ["experiment", "bound_eval", "--out", str(tmp_path), "--set",
                  "experiment.workers=1", "--set", "experiment.d=3", "--set",
                  "experiment.kappas=0", "--set", "class.L=5"]
        assert main(common + ["--set", "experiment.n=1000"]) == 0
        assert main(common + ["--set", "experiment.n=10,1000"]) == 3
        assert main(common + ["--set", "experiment.n=10"]) == 4

    def test_rerun_from_results(self, tmp_path, capsys):
        base = ["experiment", "bound_eval", "--out", str(tmp_path), "--set",
                "experiment.workers=1", "--set", "experiment.n=100,1000",
                "--constants", "c_pack=2"]
        assert main(base) == 0
        first = capsys.readouterr().out.splitlines()[0]
        assert main(["experiment", "bound_eval", "--config", f"{first}/results.csv",
                     "--out", str(tmp_path)]) == 0
        second = capsys.readouterr().out.splitlines()[0]
        a = (tmp_path / first.split("/")[-1] / "results.csv").read_bytes()
        assert a == (tmp_path / second.split("/")[-1] / "results.csv").read_bytes()
        assert b"c_pack = 2.0" in a

    def test_sample_estimate_train(self, tmp_path, capsys):
        s = tmp_path / "s.csv"
        assert main(["sample", "--d", "2", "--kappa", "-1", "--radius", "1", "--n", "300",
                     "--D", "6", "--task", "regression", "--out", str(s)]) == 0
        assert json.loads(s.with_suffix(".json").read_text())["kappa"] == -1.0
        assert main(["estimate", "--input", str(s), "--drop-last"]) == 0
        capsys.readouterr()
        ck = tmp_path / "net.json"
        assert main(["train", "--input", str(s), "--out", str(ck), "--epochs", "2"]) == 0
        assert json.loads(ck.read_text())["input_dim"] == 6

    def test_fixtures_and_plotdata(self, tmp_path):
        assert main(["fixtures", "--out", str(tmp_path / "fx"), "--names", "flat_disk"]) == 0
        assert (tmp_path / "fx" / "flat_disk.csv").exists()
        src = tmp_path / "t.csv"
        write_csv(small_table(), src)
        assert main(["plotdata", "--input", str(src), "--x", "n", "--y", "gap",
                     "--group", "kappa", "--out", str(tmp_path / "p")]) == 0
        assert main(["plotdata", "--input", str(src), "--x", "n", "--y", "zzz",
                     "--out", str(tmp_path / "q")]) == 2
