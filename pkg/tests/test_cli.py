import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from isingcap.cli import main
from isingcap.duality import bounds, capacity_small, quartic_root, ub_large


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


def test_capacity(capsys):
    res = run_json(capsys, "capacity", "--alphabet", "3")
    c, p = capacity_small(3)
    assert res["C"] == pytest.approx(0.9613, abs=1e-3)
    assert res["C"] == c and res["p_star"] == p
    assert res["quartic_p"] == pytest.approx(quartic_root(3), abs=1e-12)


def test_capacity_out_of_range_is_machine_readable(capsys):
    code, out, err = run(capsys, "capacity", "--alphabet", "9")
    assert code == 2 and out == ""
    assert json.loads(err)["error"] == "invalid_argument"


@pytest.mark.parametrize("argv", [["capacity", "--alphabet", "3", "--bogus"], ["capacity"],
                                  ["capacity", "--alphabet", "1"], ["nope"], ["sweep", "--from", "5", "--to", "3"]])
def test_usage_errors(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 2
    assert json.loads(err)["error"] == "usage"


def test_runtime_errors_exit_one(capsys, tmp_path):
    code, _, err = run(capsys, "bound", "--channel", str(tmp_path / "missing.json"), "--graph", "small")
    assert code != 0
    assert "message" in json.loads(err)


def test_bound_small_and_large(capsys):
    res = run_json(capsys, "bound", "--channel", "ising:3", "--graph", "small")
    assert res["converged"] and res["nodes"] == 6
    assert res["rho"] == pytest.approx(capacity_small(3)[0], abs=1e-6)
    res = run_json(capsys, "bound", "--channel", "ising:9", "--graph", "large")
    assert res["nodes"] == 12
    assert res["rho"] == pytest.approx(ub_large(9), abs=1e-6)


def test_vi_writes_solution(capsys, tmp_path):
    res = run_json(capsys, "vi", "--channel", "ising:4", "--graph", "small", "--out-dir", str(tmp_path))
    assert res["rho_gap"] <= 1e-6 and res["analytic_residual"] <= 1e-9
    sol = json.loads((tmp_path / "value_solution.json").read_text())
    assert np.shape(sol["V"]) == (4, 8) and len(sol["nodes"]) == 8 and sol["rho"] == res["rho"]


def test_out_dir_from_environment(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("ISINGCAP_OUT", str(tmp_path / "env"))
    run_json(capsys, "vi", "--channel", "ising:2", "--graph", "small")
    assert (tmp_path / "env" / "value_solution.json").exists()


def test_sweep_columns_and_values(capsys, tmp_path):
    out_path = tmp_path / "sweep.csv"
    code, out, _ = run(capsys, "sweep", "--from", "2", "--to", "12", "--output", str(out_path))
    assert code == 0 and out_path.read_text() == out
    rows = list(csv.DictReader(io.StringIO(out)))
    assert list(rows[0]) == ["alphabet", "cap_small", "ub_large", "ub_34", "lb_asymp", "lb_scheme"]
    assert [int(r["alphabet"]) for r in rows] == list(range(2, 13))
    for r in rows:
        b = bounds(int(r["alphabet"]))
        assert float(r["ub_34"]) == b["ub_34"]
        if b["cap_small"] is None:
            assert r["cap_small"] == ""
        else:
            assert float(r["cap_small"]) == b["cap_small"]


def test_sweep_normalize(capsys):
    _, raw, _ = run(capsys, "sweep", "--from", "4", "--to", "6")
    _, norm, _ = run(capsys, "sweep", "--from", "4", "--to", "6", "--normalize")
    for a, b in zip(csv.DictReader(io.StringIO(raw)), csv.DictReader(io.StringIO(norm))):
        n = int(a["alphabet"])
        assert float(b["ub_large"]) == pytest.approx(float(a["ub_large"]) / np.log2(n), rel=1e-15)


def test_verify(capsys):
    res = run_json(capsys, "verify", "--alphabet", "5")
    assert res["bcjr_invariant"] is True
    assert abs(res["gap"]) <= 1e-9


@pytest.mark.parametrize("scheme", ["small", "asymp"])
def test_simulate_with_trace(capsys, tmp_path, scheme):
    trace = tmp_path / "trace.csv"
    res = run_json(capsys, "simulate", "--scheme", scheme, "--alphabet", "4", "--symbols", "2000",
                   "--seed", "7", "--trace", str(trace))
    assert res["errors"] == 0
    assert trace.read_text().count("\n") > 2000
    again = run_json(capsys, "simulate", "--scheme", scheme, "--alphabet", "4", "--symbols", "2000",
                     "--seed", "7", "--trace", str(trace))
    assert again == res


def test_simulate_rejects_p_for_asymp(capsys):
    code, _, err = run(capsys, "simulate", "--scheme", "asymp", "--alphabet", "4", "--p", "0.5")
    assert code == 2 and json.loads(err)["error"] == "usage"


def test_rl_pou_artifacts_and_determinism(capsys, tmp_path):
    argv = ["rl-pou", "--channel", "ising:2", "--episodes", "2", "--steps", "3", "--batch", "4",
            "--unroll", "5", "--tmc", "500", "--eval-every", "1", "--hidden", "8", "--seed", "4"]
    a = run_json(capsys, *argv, "--out-dir", str(tmp_path / "a"))
    b = run_json(capsys, *argv, "--out-dir", str(tmp_path / "b"))
    assert a["rho_mc"] == b["rho_mc"] and a["episodes_run"] == 2
    assert a["upper_bound"] == capacity_small(2)[0]
    assert (tmp_path / "a" / "pou_actor.json").read_bytes() == (tmp_path / "b" / "pou_actor.json").read_bytes()
    rows = list(csv.DictReader(open(tmp_path / "a" / "pou_curve.csv")))
    assert [r["episode"] for r in rows] == ["1", "2"]


def test_rl_ddpg_then_extract_and_sweep(capsys, tmp_path):
    res = run_json(capsys, "rl-ddpg", "--channel", "ising:2", "--episodes", "1", "--steps", "40", "--batch", "8",
                   "--tmc", "500", "--hidden", "8", "--out-dir", str(tmp_path))
    ckpt = res["checkpoint"]
    ext = run_json(capsys, "extract", "--channel", "ising:2", "--actor", ckpt, "--samples", "2000", "--k", "3",
                   "--out-dir", str(tmp_path))
    assert ext["k"] <= 3 and (tmp_path / "qgraph.dot").read_text().startswith("digraph")
    code, out, _ = run(capsys, "sweep", "--from", "2", "--to", "3", "--checkpoint", ckpt, "--tmc", "500")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert rows[0]["rl"] != "" and rows[1]["rl"] == ""
    code, _, err = run(capsys, "extract", "--channel", "ising:3", "--actor", ckpt, "--samples", "100")
    assert code == 2


def test_extract_structured_policy_bound(capsys, tmp_path):
    res = run_json(capsys, "extract", "--channel", "ising:3", "--samples", "20000", "--bound",
                   "--out-dir", str(tmp_path))
    assert res["nodes"] == 6 and res["usable_for_duality"]
    # any test distribution gives a valid upper bound; an estimated one is close, not tight
    c = capacity_small(3)[0]
    assert c - 1e-9 <= res["bound"]["rho"] <= c + 0.05
    graph = json.loads((tmp_path / "qgraph.json").read_text())
    assert graph


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "isingcap.cli", "capacity", "--alphabet", "2"],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["C"] == pytest.approx(0.5755, abs=1e-3)
