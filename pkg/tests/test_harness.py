import csv
import json
import math
import os
import signal
import subprocess
import sys
import time

import pytest

from spmguard.graph import write_edge_list, complete_graph, cycle_graph
from spmguard.harness import (EXIT_CONFIG, EXIT_INPUT, EXIT_NUMERICAL, EXIT_OK, VARIANTS,
                              ExperimentConfig, main, resolve_attack)
from spmguard.model_fit import TraceEvent, write_trace


def rows(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def header(path):
    with open(path) as fh:
        first = fh.readline()
    assert first.startswith("# config: ")
    return json.loads(first[len("# config: "):])


@pytest.fixture
def out(tmp_path):
    return tmp_path / "out"


class TestStats:
    def test_triangle(self, tmp_path, out):
        write_edge_list(tmp_path / "tri.edges", complete_graph(3))
        assert main(["stats", str(tmp_path / "tri.edges"), "--out", str(out)]) == EXIT_OK
        r = rows(out / "stats.csv")[0]
        assert float(r["density"]) == 1.0 and r["port_label"] == "tri"

    def test_empty_kcore(self, tmp_path, out, capsys):
        write_edge_list(tmp_path / "c5.edges", cycle_graph(5))
        code = main(["stats", str(tmp_path / "c5.edges"), "--kcore", "3", "--out", str(out)])
        assert code == EXIT_INPUT and "empty k-core" in capsys.readouterr().err

    def test_generator(self, out):
        assert main(["stats", "ba:n=1000,m=5", "--out", str(out)]) == EXIT_OK
        assert int(rows(out / "stats.csv")[0]["n_nodes"]) == 1000

    def test_missing_file(self, out):
        assert main(["stats", "/nonexistent/g.edges", "--out", str(out)]) != EXIT_OK

    def test_bad_generator(self, out):
        assert main(["stats", "ba:n=10", "--out", str(out)]) == EXIT_CONFIG


class TestDefend:
    def test_star_degree(self, out):
        assert main(["defend", "star:m=9", "Degree:k=1", "--out", str(out)]) == EXIT_OK
        r = rows(out / "defend.csv")[0]
        assert float(r["eigendrop_pct"]) == 100.0 and float(r["sigma_after"]) == 0.1
        assert (out / "plan.jsonl").exists() and (out / "arg.edges").exists()

    def test_zero_budget(self, out):
        main(["defend", "ba:n=200,m=3", "Degree:k=0", "--out", str(out)])
        r = rows(out / "defend.csv")[0]
        assert float(r["eigendrop_pct"]) == 0.0 and r["sigma_before"] == r["sigma_after"]

    def test_k3_met(self, out):
        main(["defend", "complete:n=3", "MET:edges=1", "--out", str(out)])
        assert float(rows(out / "defend.csv")[0]["eigendrop_pct"]) == pytest.approx(
            100 * (1 - math.sqrt(2) / 2), abs=1e-9)

    def test_bad_spec(self, out):
        assert main(["defend", "star:m=9", "Bogus:k=1", "--out", str(out)]) == EXIT_CONFIG

    def test_split_writes_idmap(self, tmp_path, out):
        (tmp_path / "s.edges").write_text("".join(f"100 {200 + i}\n" for i in range(8)))
        main(["defend", str(tmp_path / "s.edges"), "NodeSplit:k=1", "--out", str(out)])
        assert float(rows(out / "defend.csv")[0]["eigendrop_pct"]) == pytest.approx(29.2893, abs=1e-4)
        idmap = (out / "arg.idmap").read_text().split()
        assert "100" in idmap and "-1" in idmap


class TestSimulate:
    def test_beta_zero(self, out):
        main(["simulate", "ba:n=50,m=2", "--attack", "SIR:beta=0,mu=0.5", "--runs", "5",
              "--out", str(out)])
        assert {float(r["footprint_mean"]) for r in rows(out / "ensemble.csv")} == {1 / 50}
        t = rows(out / "trajectory.csv")
        assert list(t[0]) == ["step", "time", "S", "I", "ID", "R", "footprint"]

    def test_k2_strength(self, out):
        main(["simulate", "complete:n=2", "--attack", "wc_1_1s", "--runs", "3", "--out", str(out)])
        s = rows(out / "summary.csv")[0]
        assert float(s["effective_strength"]) == pytest.approx(0.11 / 0.07)
        assert float(s["effective_strength"]) == pytest.approx(1.571, abs=5e-4)

    def test_byte_identical(self, tmp_path):
        args = ["simulate", "ba:n=100,m=2", "--attack", "wc_1_5s", "--runs", "10", "--seed", "3"]
        main(args + ["--out", str(tmp_path / "a")])
        main(args + ["--out", str(tmp_path / "b")])
        for f in ("ensemble.csv", "summary.csv", "trajectory.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_header_is_resolved(self, out):
        main(["simulate", "ba:n=60,m=2", "--runs", "4", "--seed", "7", "--out", str(out)])
        h = header(out / "ensemble.csv")
        assert h["seeds"] == [7, 10] and h["params"]["beta"] == 0.11 and h["graph_hash"]

    def test_bad_attack(self, out):
        assert main(["simulate", "ba:n=60,m=2", "--attack", "wc_9_9s", "--out", str(out)]) \
            == EXIT_CONFIG
        assert main(["simulate", "ba:n=60,m=2", "--attack", "SIR:beta=2,mu=0.1",
                     "--out", str(out)]) == EXIT_CONFIG


def test_resolve_attack():
    assert resolve_attack("wc_4_1s") == ("SIIDR", VARIANTS["wc_4_1s"])
    model, p = resolve_attack("SIS:beta=0.2,mu=0.3")
    assert model == "SIS" and (p.beta, p.mu) == (0.2, 0.3)


SWEEP = ["sweep", "--graph", "ba:n=150,m=3", "--defenses", "Degree;MET", "--budgets", "2,5",
         "--attacks", "wc_1_1s", "--runs", "5", "--max-steps", "200"]


class TestSweep:
    def test_four_rows(self, out):
        assert main(SWEEP + ["--out", str(out)]) == EXIT_OK
        r = rows(out / "sweep.csv")
        assert len(r) == 4 and r == sorted(r, key=lambda x: x["cell"])
        assert {x["defense"] for x in r} == {"Degree:k=2", "Degree:k=5", "MET:edges=2",
                                            "MET:edges=5"}

    def test_resume_identical(self, out):
        main(SWEEP + ["--out", str(out)])
        full = (out / "sweep.csv").read_bytes()
        cells = sorted((out / "cells").iterdir())
        cells[1].unlink()
        (out / "sweep.csv").unlink()
        main(SWEEP + ["--out", str(out)])
        assert (out / "sweep.csv").read_bytes() == full

    def test_parallel_matches_serial(self, tmp_path):
        main(SWEEP + ["--out", str(tmp_path / "a")])
        main(SWEEP + ["--out", str(tmp_path / "b"), "--jobs", "2"])
        assert (tmp_path / "a" / "sweep.csv").read_bytes() == \
            (tmp_path / "b" / "sweep.csv").read_bytes()

    def test_failed_cell_continues(self, out):
        args = ["sweep", "--graph", "ba:n=30,m=2", "--defenses", "Degree", "--budgets", "2,500",
                "--attacks", "wc_1_1s", "--runs", "3", "--out", str(out)]
        assert main(args) == EXIT_NUMERICAL
        assert [x["defense"] for x in rows(out / "sweep.csv")] == ["Degree:k=2"]

    def test_config_file(self, tmp_path, out):
        cfg = {"graph": "ba:n=120,m=3", "defenses": ["None", "NodeSplit:k={b}"],
               "attacks": ["wc_1_1s"], "budgets": [3], "runs": 4, "max_steps": 100}
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        assert main(["sweep", "--config", str(tmp_path / "c.json"), "--out", str(out)]) == EXIT_OK
        assert {x["defense"] for x in rows(out / "sweep.csv")} == {"None", "NodeSplit:k=3"}
        assert header(out / "sweep.csv")["runs"] == 4

    def test_bad_config(self, tmp_path, out):
        (tmp_path / "c.json").write_text(json.dumps({"graph": "x", "bogus": 1}))
        assert main(["sweep", "--config", str(tmp_path / "c.json"), "--out", str(out)]) \
            == EXIT_CONFIG
        assert ExperimentConfig("g", ["Degree"], ["wc_1_1s"], [1, 2]).expand() == [
            ("Degree:k=1", "wc_1_1s"), ("Degree:k=2", "wc_1_1s")]

    def test_interrupted_subprocess_resumes(self, tmp_path):
        args = [sys.executable, "-m", "spmguard.harness", "sweep", "--graph", "ba:n=400,m=3",
                "--defenses", "Degree;RandN;MET;RandE", "--budgets", "5,10,20",
                "--attacks", "wc_1_1s", "--runs", "40", "--max-steps", "300"]
        ref = tmp_path / "ref"
        subprocess.run(args + ["--out", str(ref)], check=True, capture_output=True)
        out = tmp_path / "int"
        proc = subprocess.Popen(args + ["--out", str(out)], stdout=subprocess.DEVNULL,
                                stderr=subprocess.DEVNULL)
        deadline = time.time() + 120
        while time.time() < deadline and proc.poll() is None:
            if (out / "cells").exists() and any((out / "cells").glob("*.json")):
                proc.send_signal(signal.SIGKILL)
                break
            time.sleep(0.01)
        proc.wait()
        done = len(list((out / "cells").glob("*.json")))
        subprocess.run(args + ["--out", str(out)], check=True, capture_output=True)
        assert (out / "sweep.csv").read_bytes() == (ref / "sweep.csv").read_bytes()
        assert done >= 1

    @pytest.mark.slow
    def test_centrality_grid_degree_beats_randn(self, out):
        main(["sweep", "--graph", "ba:n=2000,m=6", "--defenses", "Degree;ENS;NB;RandN",
              "--budgets", "10,25,50", "--attacks", "wc_1_5s", "--runs", "5",
              "--max-steps", "200", "--out", str(out)])
        r = {x["defense"]: float(x["eigendrop_pct"]) for x in rows(out / "sweep.csv")}
        assert len(r) == 12
        for k in (10, 25, 50):
            assert r[f"Degree:k={k}"] > r[f"RandN:k={k}"]


class TestFit:
    @pytest.fixture
    def trace(self, tmp_path):
        assert main(["trace", "--attack", "wc_4_1s", "--hosts", "35", "--seed", "3",
                     "--out", str(tmp_path / "t")]) == EXIT_OK
        return tmp_path / "t" / "trace.csv"

    def test_aic_table(self, trace, out):
        assert main(["fit", str(trace), "--time-unit", "0.05", "--variant", "wc_4_1s",
                     "--out", str(out)]) == EXIT_OK
        r = rows(out / "aic.csv")
        assert list(r[0]) == ["variant", "SI", "SIS", "SIR", "SIIDR"] and r[0]["variant"] == "wc_4_1s"
        assert (out / "fit_params.csv").exists()

    def test_single_model(self, trace, out):
        main(["fit", str(trace), "--models", "SI", "--out", str(out)])
        assert list(rows(out / "aic.csv")[0]) == ["variant", "SI"]

    def test_no_malicious(self, tmp_path, out):
        write_trace(tmp_path / "x.csv", [TraceEvent(0.0, 1, 2, False)])
        assert main(["fit", str(tmp_path / "x.csv"), "--out", str(out)]) == EXIT_INPUT

    def test_smc_posterior(self, trace, out):
        assert main(["fit", str(trace), "--models", "SI,SIR", "--smc", "--population", "40",
                     "--generations", "2", "--out", str(out)]) == EXIT_OK
        assert len(rows(out / "posterior.csv")) == 40


def test_console_script(tmp_path):
    env = dict(os.environ)
    res = subprocess.run([sys.executable, "-m", "spmguard.harness", "defend", "star:m=9",
                          "Degree:k=1", "--out", str(tmp_path)], capture_output=True, text=True,
                         env=env)
    assert res.returncode == 0 and "defense" in res.stdout
    res = subprocess.run([sys.executable, "-m", "spmguard.harness", "nope"], capture_output=True)
    assert res.returncode == 2


def test_global_flags_before_or_after_subcommand(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["--seed", "4", "--out", str(a), "simulate", "ba:n=40,m=2", "--runs", "3"])
    main(["simulate", "ba:n=40,m=2", "--runs", "3", "--seed", "4", "--out", str(b)])
    assert header(a / "summary.csv")["seeds"] == [4, 6]
    assert (a / "ensemble.csv").read_bytes() == (b / "ensemble.csv").read_bytes()
