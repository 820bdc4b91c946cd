import csv
import json

import pytest

from qpurify.chain import Counters
from qpurify.cli import load_config, main
from qpurify.experiments import aggregate_metrics
from qpurify.policies import TrialOutcome


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(*args):
    return main([str(a) for a in args])


class TestAnalyze:
    def test_outputs(self, tmp_path):
        assert run("analyze", "--out", tmp_path, "--grid-res", 11) == 0
        dm = json.loads((tmp_path / "delta-max.json").read_text())
        assert abs(dm["delta_max"] - 0.0760) <= 0.0005
        rows = {r["f"]: r for r in read_csv(tmp_path / "delta-table.csv")}
        assert abs(float(rows["0.811"]["delta_superior"]) - 0.076) < 1e-3
        grid = read_csv(tmp_path / "gain-grid.csv")
        assert len(grid) == 121
        diag = [float(r["gain"]) for r in grid if r["f1"] == r["f2"] and float(r["f1"]) not in (0.5, 1.0)]
        assert len(diag) == 9 and min(diag) > 0

    def test_lf_line_endings(self, tmp_path):
        run("analyze", "--out", tmp_path, "--grid-res", 5)
        raw = (tmp_path / "delta-table.csv").read_bytes()
        assert b"\r" not in raw and raw.endswith(b"\n")

    def test_bad_resolution(self, tmp_path):
        assert run("analyze", "--out", tmp_path, "--grid-res", 1) == 2

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert run("analyze", "--out", blocker / "sub") == 3


class TestSimulate:
    def test_smoke(self, tmp_path):
        assert run("simulate", "--trials", 100, "--out", tmp_path) == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert "eta" in summary
        assert len(read_csv(tmp_path / "trials.csv")) == 100
        assert (tmp_path / "manifest.json").exists()

    def test_rerun_byte_identical(self, tmp_path):
        args = ("simulate", "--policy", "sp", "--trials", 60, "--seed", 9)
        run(*args, "--out", tmp_path / "a")
        run(*args, "--out", tmp_path / "b")
        assert (tmp_path / "a" / "trials.csv").read_bytes() == (tmp_path / "b" / "trials.csv").read_bytes()

    def test_replay_from_manifest(self, tmp_path):
        run("simulate", "--policy", "ps", "--trials", 40, "--memory", "lmm", "--t-coh", 70, "--out", tmp_path / "a")
        assert run("simulate", "--config", tmp_path / "a" / "manifest.json", "--out", tmp_path / "b") == 0
        for name in ("trials.csv", "gains.csv", "summary.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_ceiling(self, tmp_path):
        args = ("simulate", "--policy", "no-pur", "--f-th", 0.99, "--hops", 2, "--memory", "cmm", "--trials", 20,
                "--cutoff", 500, "--out", tmp_path)
        assert run(*args) == 0
        assert json.loads((tmp_path / "summary.json").read_text())["eta"] == 0.0

    def test_csv_reproduces_summary(self, tmp_path):
        run("simulate", "--policy", "sp", "--trials", 80, "--t-coh", 55, "--out", tmp_path)
        summary = json.loads((tmp_path / "summary.json").read_text())
        gains = {}
        for r in read_csv(tmp_path / "gains.csv"):
            gains.setdefault(int(r["trial_index"]), []).append(float(r["gain"]))
        outs = []
        for r in read_csv(tmp_path / "trials.csv"):
            cnt = Counters(**{k: int(r[k]) for k in Counters().as_dict()})
            delivered = r["delivered"] == "1"
            outs.append(TrialOutcome(delivered, int(r["t_deliver"]) if delivered else None,
                                     float(r["f_deliver"]) if delivered else None,
                                     gains.get(int(r["trial_index"]), []), cnt))
        again = aggregate_metrics(outs, summary["horizon"]).as_dict()
        assert {k: summary[k] for k in again} == json.loads(json.dumps(again))

    def test_debug_events(self, tmp_path):
        run("simulate", "--trials", 5, "--debug-events", "--out", tmp_path)
        events = read_csv(tmp_path / "events.csv")
        kinds = {e["kind"] for e in events}
        assert {"herald", "deliver"} <= kinds
        assert sum(e["kind"] == "deliver" for e in events) == 5

    def test_multiple_cells_rejected(self, tmp_path):
        assert run("simulate", "--policy", "sp,ps", "--out", tmp_path) == 2

    @pytest.mark.parametrize("flag,value", [("--pe", "2"), ("--f-th", "0.3"), ("--memory", "qmm"), ("--trials", "x"),
                                            ("--policy", "greedy"), ("--seed", "-4")])
    def test_invalid_values(self, tmp_path, flag, value, capsys):
        assert run("simulate", flag, value, "--out", tmp_path) == 2
        assert "invalid configuration" in capsys.readouterr().err


class TestConfig:
    def test_file_then_flags(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[chain]\nhops = 3\npe = 0.2\n[experiment]\ntrials = 7\n")
        cfg = load_config(str(ini), {"trials": "9"})
        assert cfg["chain.hops"] == (3,) and cfg["chain.pe"] == 0.2
        assert cfg["experiment.trials"] == 9

    def test_unknown_keys_listed(self, tmp_path, capsys):
        ini = tmp_path / "run.ini"
        ini.write_text("[chain]\nhopz = 3\n[extra]\nx = 1\n")
        assert run("simulate", "--config", ini, "--out", tmp_path) == 2
        err = capsys.readouterr().err
        assert "chain.hopz" in err and "[extra]" in err

    def test_missing_file(self, tmp_path):
        assert run("simulate", "--config", tmp_path / "nope.ini", "--out", tmp_path) == 3

    def test_none_values(self):
        cfg = load_config(None, {"f_th": "none", "budget": "5,10"})
        assert cfg["experiment.f_th"] == (None,) and cfg["experiment.budget"] == (5, 10)


class TestSweep:
    def test_heatmap(self, tmp_path):
        args = ("sweep", "--policy", "no-pur,sp", "--f-th", "0.8,0.985", "--budget", "5,20,80", "--trials", 40,
                "--t-coh", 55, "--out", tmp_path)
        assert run(*args) == 0
        rows = read_csv(tmp_path / "heatmap.csv")
        assert len(rows) == 12
        assert list(rows[0]) == ["policy", "f_th", "budget_n", "hops", "eta", "mean_time", "mean_fidelity",
                                 "censored_fraction"]
        groups = {}
        for r in rows:
            groups.setdefault((r["policy"], r["f_th"]), []).append((int(r["budget_n"]), float(r["eta"])))
            if r["policy"] == "no-pur" and r["f_th"] == "0.985":
                assert float(r["eta"]) == 0.0 and r["mean_time"] == ""
        for vals in groups.values():
            etas = [e for _, e in sorted(vals)]
            assert etas == sorted(etas)

    def test_manifest_reproduces(self, tmp_path):
        args = ("sweep", "--policy", "no-pur,ps", "--hops", "1,2", "--trials", 30, "--out", tmp_path / "a")
        run(*args)
        run("sweep", "--config", tmp_path / "a" / "manifest.json", "--out", tmp_path / "b")
        assert (tmp_path / "a" / "heatmap.csv").read_bytes() == (tmp_path / "b" / "heatmap.csv").read_bytes()


class TestCompare:
    def test_single_policy_rejected(self, tmp_path):
        assert run("compare", "--policy", "sp", "--out", tmp_path) == 2

    def test_table(self, tmp_path):
        args = ("compare", "--policy", "no-pur,sp,delta-purify", "--hops", "2,3", "--trials", 30, "--out", tmp_path)
        assert run(*args) == 0
        rows = read_csv(tmp_path / "compare.csv")
        assert len(rows) == 6
        diffs = read_csv(tmp_path / "differences.csv")
        assert len(diffs) == 6
        first = (tmp_path / "compare.csv").read_bytes()
        run(*args)
        assert (tmp_path / "compare.csv").read_bytes() == first


def test_calibrate(tmp_path):
    assert run("calibrate", "--t-coh", "40,55,70", "--trials", 200, "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "calibration.csv")
    assert [float(r["t_coh"]) for r in rows] == [40.0, 55.0, 70.0]
    best = json.loads((tmp_path / "calibration.json").read_text())
    assert best["t_coh"] in (40.0, 55.0, 70.0)


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
