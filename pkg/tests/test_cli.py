import csv
import io
import json
import math
import subprocess
import sys

import pytest

from magtf.cli import build_config, main, render, run


def call(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_budget_json_trivial(capsys):
    code, out, _ = call(["budget", "Z=100", "N=100", "B=0", "alpha=0", "-f", "json"], capsys)
    assert code == 0
    (rec,) = json.loads(out)
    assert [t["label"] for t in rec["terms"]] == ["27-5-29 first term"]
    assert rec["total"] == pytest.approx(100 ** (5 / 3), rel=1e-14)
    assert rec["up_to_constants"] is True
    assert {"inputs", "regime", "admissibility", "terms", "dominant", "total"} <= set(rec)


def test_unknown_key(capsys):
    code, _, err = call(["budget", "zz=3"], capsys)
    assert code == 2
    rec = json.loads(err)
    assert rec["key"] == "zz" and rec["error"] == "parse"


def test_unknown_key_in_config(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[budget]\nZ = 10\nN = 10\nbogus = 1\n")
    code, _, err = call(["budget", "--config", str(cfg)], capsys)
    assert code == 2 and json.loads(err)["key"] == "bogus"


def test_bad_value_and_choice(capsys):
    assert call(["budget", "Z=abc"], capsys)[0] == 2
    assert call(["budget", "kind=everything"], capsys)[0] == 2
    assert call(["nonsense"], capsys)[0] == 2


def test_domain_and_convergence_codes(capsys):
    code, _, err = call(["budget", "Z=10", "N=20"], capsys)
    assert code == 3 and json.loads(err)["error"] == "unsupported"
    code, _, err = call(["pilot", "t=0", "kernels=false"], capsys)
    assert code == 3
    code, _, err = call(["tf", "tol=0"], capsys)
    assert code == 4 and json.loads(err)["error"] == "convergence"


def test_sweep_cartesian_product():
    cfg = build_config("budget", overrides=["Z=50,100", "N=40", "B=0,10,1e4", "alpha=0.001"])
    rows = run(cfg)
    assert len(rows) == 6
    keys = [(p["Z"], p["B"]) for p, _ in rows]
    assert keys == [(50, 0), (50, 10), (50, 1e4), (100, 0), (100, 10), (100, 1e4)]
    text = render(cfg, rows)
    lines = text.strip().split("\n")
    assert len(lines) == 7
    assert lines[0].startswith("Z,N,B,alpha")


def test_expression_commas_do_not_split():
    cfg = build_config("fieldmin", overrides=["V=gaussian(1.5, 1.0) + constant(0.1)", "n=16"])
    assert cfg.params["V"] == ["gaussian(1.5, 1.0) + constant(0.1)"]
    cfg = build_config("fieldmin", overrides=["V=gaussian(1.5, 1.0),gaussian(2, 1)"])
    assert len(cfg.params["V"]) == 2


def test_config_file_and_override_precedence(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[pressure]\nv = 1.0, 2.0\nbh = 0.1\n[budget]\nZ = 3\n")
    c = build_config("pressure", cfg, overrides=["bh=0.2"])
    assert c.params == {"v": [1.0, 2.0], "bh": [0.2]}


def test_tf_solution_file(tmp_path, capsys):
    sol = tmp_path / "sol.txt"
    code, out, _ = call(["tf", "Z=1", "N=1", "B=0", f"solution={sol}"], capsys)
    assert code == 0
    header = json.loads(sol.read_text().splitlines()[0][2:])
    assert abs(header["lambda"]) < 1e-4
    row = dict(zip(*[l.split(",") for l in out.strip().split("\n")]))
    assert abs(float(row["lambda"])) < 1e-4


def test_pressure_csv(capsys):
    code, out, _ = call(["pressure", "v=1.0", "bh=0"], capsys)
    assert code == 0
    head, row = out.strip().split("\n")
    vals = dict(zip(head.split(","), row.split(",")))
    assert float(vals["pressure"]) == pytest.approx(2 / (15 * math.pi**2), rel=1e-12)


def test_output_file_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    args = ["budget", "Z=20,80", "N=19", "B=1,500,3e4", "alpha=1e-3", "M=1,2", "kind=global,dterm"]
    assert call(args + ["-f", "json", "-o", str(a)], capsys)[0] == 0
    assert call(args + ["-f", "json", "-o", str(b)], capsys)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(json.loads(a.read_text())) == 24


@pytest.mark.parametrize("cmd", ["pressure", "tf", "fieldmin", "pilot", "bound", "budget"])
def test_explain(cmd, capsys):
    code, out, _ = call([cmd, "--explain"], capsys)
    assert code == 0 and out.startswith(cmd)


def test_bound_single_fixture(capsys):
    code, out, _ = call(["bound", "fixture=repulsive"], capsys)
    assert code == 0
    head, row = out.strip().split("\n")
    vals = dict(zip(head.split(","), row.split(",")))
    assert vals["name"] == "repulsive" and float(vals["margin"]) >= 0
    assert call(["bound", "fixture=nope"], capsys)[0] == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "magtf", "budget", "Z=10", "N=10"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and res.stdout.startswith("Z,N,B")


def test_options_before_parameters(tmp_path, capsys):
    ini = tmp_path / "s.ini"
    ini.write_text("[budget]\nZ = 100\nN = 90\nB = 1\nalpha = 1e-4\n")
    out = tmp_path / "o.json"
    code, _, _ = call(["budget", "-c", str(ini), "M=1,2", "-f", "json", "-o", str(out)], capsys)
    assert code == 0
    assert [r["params"]["M"] for r in json.loads(out.read_text())] == [1, 2]


def test_fieldmin_csv_columns_unique(capsys):
    code, out, _ = call(["fieldmin", "n=16", "psi_radius=0.8", "regime=strong"], capsys)
    assert code == 0
    header, row = list(csv.reader(io.StringIO(out)))
    assert len(header) == len(set(header))
    assert row[header.index("resolved_regime")] == "strong"
