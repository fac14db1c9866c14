import csv
import json

import pytest

from qclosest.cli import main

FUZZY = """[model]
n = 5
q = 2
[integrator]
dt = 0.01
t_final = 0.5
[init]
kind = example1
epsilon = 0.01
[output]
stride = 10
"""

STILL = """[domain]
dim = 2
[model]
n = 6
eta = 0.5
sigma = 0.2
[integrator]
t_final = 0.2
dt = 0.01
[init]
kind = uniform_box
speed = 0
seed = 4
"""


def run(tmp_path, *argv):
    return main(list(argv))


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_writes_artifacts(tmp_path):
    sc = write(tmp_path, "s.ini", FUZZY)
    out = tmp_path / "o"
    assert main(["simulate", "--scenario", sc, "--out", str(out)]) == 0
    rows = read_csv(out / "trajectory.csv")
    assert list(rows[0]) == ["t", "i", "x1", "x2", "v1", "v2", "R_i", "abs_a_i"]
    assert len(rows) == 5 * 6
    diag = read_csv(out / "diagnostics.csv")
    assert list(diag[0]) == ["t", "D_x", "D_v", "max_speed", "max_accel", "hull_violation"]
    rep = json.loads((out / "report.json").read_text())
    assert rep["command"] == "simulate" and rep["scenario"]["model"]["q_effective"] == 2.0
    assert rep["diagnostics"]["max_speed_ratio"] <= 1.0 + 1e-12


def test_zero_velocities_show_no_motion(tmp_path):
    sc = write(tmp_path, "s.ini", STILL)
    out = tmp_path / "o"
    assert main(["simulate", "--scenario", sc, "--out", str(out)]) == 0
    for row in read_csv(out / "diagnostics.csv"):
        assert float(row["D_v"]) == 0.0 and float(row["max_accel"]) == 0.0


def test_classical_simulate_has_nan_radius(tmp_path):
    sc = write(tmp_path, "c.ini", FUZZY.replace("q = 2", "q = 2\nvariant = classical\nrank_self = true"))
    out = tmp_path / "o"
    assert main(["simulate", "--scenario", sc, "--out", str(out)]) == 0
    assert read_csv(out / "trajectory.csv")[0]["R_i"] == "nan"
    assert json.loads((out / "report.json").read_text())["payload"]["events"]


def test_constants_fixture(tmp_path):
    out = tmp_path / "c"
    assert main(["constants", "--Dx", "1", "--Dv", "1", "--eta", "1", "--family", "quartic", "--sigma", "0.5", "--dim", "1", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())["payload"]
    assert rep["c0"] == pytest.approx(13.547005383792552, rel=1e-13)
    assert rep["c2"] == pytest.approx(184.52135486850437, rel=1e-13)


def test_illposed_default(tmp_path):
    out = tmp_path / "i"
    assert main(["illposed", "--epsilons", "1e-2,1e-3", "--out", str(out)]) == 0
    rows = read_csv(out / "gaps.csv")
    assert all(float(r["gap"]) > 0.1 for r in rows if r["system"] == "classical")


def test_error_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, "bad.ini", "[model]\nn = 5\nq = 2\neta = 0.4\n")
    assert main(["simulate", "--scenario", bad, "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ValidationError" and err["field"] == "model.q"
    broken = write(tmp_path, "broken.ini", "[model]\nn = five\n")
    assert main(["simulate", "--scenario", broken]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["line"] == 2
    assert main(["nonsense"]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "UsageError"
    assert main(["constants", "--Dx", "1", "--out", str(tmp_path / "c")]) == 2
    # q above N only surfaces at run time for file-provided data
    data = write(tmp_path, "d.csv", "x1,v1\n0,0\n1,0\n")
    sc = write(tmp_path, "r.ini", f"[domain]\ndim = 1\n[model]\nn = 2\nq = 2\n[integrator]\nscheme = convex_euler\ndt = 0.5\nt_final = 1\n[init]\nkind = file\npath = {data}\n")
    assert main(["simulate", "--scenario", sc, "--out", str(tmp_path / "ok")]) == 0


def test_runtime_error_exit_code(tmp_path, capsys, monkeypatch):
    import qclosest.cli as cli

    def boom(*a):
        raise RuntimeError("solver exploded")

    monkeypatch.setitem(cli.COMMANDS, "simulate", boom)
    sc = write(tmp_path, "s.ini", FUZZY)
    assert main(["simulate", "--scenario", sc, "--out", str(tmp_path / "x")]) == 3
    assert json.loads(capsys.readouterr().err)["exit_code"] == 3


def test_seed_and_stride_overrides(tmp_path):
    sc = write(tmp_path, "s.ini", STILL.replace("speed = 0", "speed = 1"))
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--scenario", sc, "--out", str(a), "--seed", "1", "--stride", "5"])
    main(["simulate", "--scenario", sc, "--out", str(b), "--seed", "2", "--stride", "5"])
    ra, rb = json.loads((a / "report.json").read_text()), json.loads((b / "report.json").read_text())
    assert ra["seed"] == 1 and ra["scenario"]["output"]["stride"] == 5
    assert (a / "trajectory.csv").read_bytes() != (b / "trajectory.csv").read_bytes()
