import json
import subprocess
import sys

import numpy as np
import pytest

from cspd.cli import main
from cspd.instance import FactorGraph, Kind, is_solution
from cspd.io import parse, parse_assignment, write


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_thresholds_mask_k4(capsys):
    code, out, _ = run(capsys, "thresholds", "--mode", "mask", "--k", "4")
    assert code == 0
    assert out.strip() == "0.562500"


def test_thresholds_mask_all_k(capsys):
    code, out, _ = run(capsys, "thresholds", "--mode", "mask")
    vals = [line.split()[1] for line in out.strip().splitlines()]
    assert vals == ["0.666667", "0.562500", "0.474074", "0.406901", "0.355474", "0.315203", "0.282944",
                    "0.256578"]


def test_thresholds_table_and_csv(capsys, tmp_path):
    path = tmp_path / "t.csv"
    code, out, _ = run(capsys, "thresholds", "--mode", "table", "--k", "4", "--output", str(path))
    assert code == 0
    assert "4 0.562500 0.632 0.772280" in out
    assert path.read_text().splitlines()[0] == "k,alpha,t,statistic,value,seed"


def test_gen_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a.xnf", tmp_path / "b.xnf"
    for p in (a, b):
        assert run(capsys, "gen", "--kind", "xorsat", "--k", "4", "--n", "100", "--alpha", "0.4",
                   "--seed", "7", "-o", str(p))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    g = parse(a.read_text())
    assert g.n_vars == 100 and g.n_clauses == 40


def test_gen_seed_from_environment(capsys, monkeypatch):
    monkeypatch.setenv("CSPD_SEED", "5")
    _, a, _ = run(capsys, "gen", "--kind", "sat", "--k", "3", "--n", "10", "--m", "5")
    _, b, _ = run(capsys, "gen", "--kind", "sat", "--k", "3", "--n", "10", "--m", "5", "--seed", "5")
    _, c, _ = run(capsys, "gen", "--kind", "sat", "--k", "3", "--n", "10", "--m", "5", "--seed", "6")
    assert a == b and a != c


def test_gen_planted_then_check(capsys, tmp_path):
    inst = tmp_path / "p.cnf"
    run(capsys, "gen", "--kind", "sat", "--k", "4", "--n", "50", "--m", "300", "--planted", "-o", str(inst))
    code, out, _ = run(capsys, "sample", "-i", str(inst), "--method", "discrete", "--r", "3", "--seed", "1")
    assert code == 0
    assert out.splitlines()[-2] in ("s SOLUTION", "s FAILED")
    sol = tmp_path / "x.txt"
    sol.write_text(out.splitlines()[-1] + "\n")
    code, out2, _ = run(capsys, "solve", "-i", str(inst), "--check", str(sol))
    assert code == 0
    assert out2.startswith("s SATISFIED") == ("s SOLUTION" in out)


def test_solve_xorsat(capsys, tmp_path):
    inst = tmp_path / "x.xnf"
    run(capsys, "gen", "--kind", "xorsat", "--k", "3", "--n", "30", "--m", "10", "-o", str(inst))
    code, out, _ = run(capsys, "solve", "-i", str(inst), "--seed", "2")
    assert code == 0 and out.startswith("s SATISFIABLE")
    g = parse(inst.read_text())
    assert is_solution(g, parse_assignment(out.splitlines()[1]))


def test_solve_inconsistent(capsys, tmp_path):
    inst = tmp_path / "bad.xnf"
    write(FactorGraph(Kind.XORSAT, 3, 3, [[0, 1, 2], [0, 1, 2]], [1, -1]), inst)
    code, out, _ = run(capsys, "solve", "-i", str(inst))
    assert code == 0 and out.strip() == "s UNSATISFIABLE"


def test_sample_reversed_leaf_exact_case(capsys, tmp_path):
    inst = tmp_path / "inst.xnf"
    run(capsys, "gen", "--kind", "xorsat", "--k", "4", "--n", "200", "--alpha", "0.5", "--seed", "3",
        "-o", str(inst))
    code, out, _ = run(capsys, "sample", "--method", "discrete", "--ordering", "reversed-leaf",
                       "--denoiser", "xorsat-bp", "--r", "inf", "-i", str(inst), "--seed", "4")
    assert code == 0
    assert "s SOLUTION" in out
    g = parse(inst.read_text())
    assert is_solution(g, parse_assignment(out.splitlines()[-1]))


def test_sample_continuous(capsys, tmp_path):
    inst = tmp_path / "inst.xnf"
    run(capsys, "gen", "--kind", "xorsat", "--k", "4", "--n", "50", "--alpha", "0.2", "-o", str(inst))
    code, out, _ = run(capsys, "sample", "-i", str(inst), "--r", "5", "--steps", "100")
    assert code == 0
    assert out.startswith("c method=continuous")


def test_sample_denoiser_kind_mismatch(capsys, tmp_path):
    inst = tmp_path / "inst.cnf"
    run(capsys, "gen", "--kind", "sat", "--k", "3", "--n", "10", "--m", "5", "-o", str(inst))
    code, _, err = run(capsys, "sample", "-i", str(inst), "--denoiser", "xorsat-bp")
    assert code == 2 and "does not match" in err


def test_sweep_command(capsys, tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("kind = xorsat\nk = 4\nn = 40\nalphas = 0.2, 0.5\nformulas = 3\nmethod = discrete\n"
                   "radius = inf\n")
    out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(capsys, "sweep", "--config", str(cfg), "--seed", "9", "--output", str(out_a))[0] == 0
    assert run(capsys, "sweep", "--config", str(cfg), "--seed", "9", "--workers", "2",
               "--output", str(out_b))[0] == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    code, out, _ = run(capsys, "sweep", "--config", str(cfg), "--seed", "9")
    assert out.encode() == out_a.read_bytes()


def test_popdyn_command(capsys):
    code, out, _ = run(capsys, "popdyn", "--model", "xorsat-diff", "--k", "4", "--alpha", "0.7",
                       "--t", "0.2", "--t", "0.4", "--pop-size", "2000", "--iters", "30")
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "k,alpha,t,statistic,value,seed"
    assert len(lines) == 3 and lines[1].startswith("4,0.7,0.2,delta,")
    code, out, _ = run(capsys, "popdyn", "--model", "ksat-cavity", "--k", "4", "--alpha", "5", "--t", "0.5",
                       "--pop-size", "100", "--iters", "3")
    assert code == 0
    assert len(out.strip().splitlines()) == 1 + 200


def test_uniformity_command(capsys, tmp_path):
    inst = tmp_path / "u.cnf"
    run(capsys, "gen", "--kind", "sat", "--k", "4", "--n", "40", "--alpha", "2", "-o", str(inst))
    code, out, _ = run(capsys, "uniformity", "-i", str(inst), "--samples", "10", "--seed", "1")
    assert code == 0
    rep = json.loads(out)
    assert rep["phi"] == pytest.approx(0.564070, abs=1e-6)
    assert rep["samples"] + rep["failures"] == 10


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["gen", "--kind", "sat", "--k", "3"],
    ["gen", "--kind", "sat", "--k", "3", "--n", "10", "--m", "3", "--bogus"],
    ["thresholds", "--mode", "mask", "--k", "2"],
    ["sample", "-i", "x", "--r", "-1"],
    ["gen", "--kind", "xorsat", "--k", "3", "--n", "10", "--m", "3", "--planted"],
])
def test_usage_errors_exit_1(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 1
    assert "usage" in err or "error" in err


def test_runtime_errors_exit_2(capsys, tmp_path):
    assert run(capsys, "solve", "-i", str(tmp_path / "missing.cnf"))[0] == 2
    bad = tmp_path / "bad.cnf"
    bad.write_text("p cnf 3 1\n1 1 2 0\n")
    code, _, err = run(capsys, "solve", "-i", str(bad))
    assert code == 2 and "line 2" in err


def test_console_script_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "cspd.cli", "thresholds", "--mode", "mask", "--k", "3"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == "0.666667"
