import csv
import io
import json
import subprocess
import sys

import pytest

from equitoll.cli import main
from equitoll.network import builtin, dump_scenario


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def report(capsys, *argv):
    code, out, _ = run(capsys, *argv)
    return code, json.loads(out)


def test_solve_appendix_g(capsys):
    code, doc = report(capsys, "solve", "--toll", "e1=8")
    eq = doc["report"]["equilibrium"]
    assert code == 0
    assert eq["edge_flows"] == pytest.approx({"e1": 2, "e2": 6}, abs=1e-6)
    assert eq["revenue"] == pytest.approx(16, rel=1e-8)
    assert doc["solver"]["tolerance"] == 1e-10
    assert len(doc["scenario_digest"]) == 64


def test_refund_appendix_g(capsys):
    code, doc = report(capsys, "refund", "--toll", "e1=8")
    r = doc["report"]["scheme"]["refunds"]
    assert code == 0
    assert [r["H"], r["M"], r["L"]] == pytest.approx([0, 2, 2.8], abs=1e-9)
    assert doc["report"]["scheme"]["gini_after"] == pytest.approx(0.15, abs=1e-12)


def test_refund_custom_alpha(capsys):
    code, doc = report(capsys, "refund", "--toll", "e1=8", "--policy", "custom-alpha", "L=1")
    assert code == 0 and doc["report"]["scheme"]["alphas"] == {"H": 0.0, "L": 1.0, "M": 0.0}


def test_gini_command(capsys):
    code, doc = report(capsys, "gini")
    assert code == 0 and "gini_after" not in doc["report"]
    assert doc["report"]["gini_ex_ante"] == pytest.approx(0.150212207, abs=1e-9)
    _, doc = report(capsys, "gini", "--toll", "e1=8")
    assert doc["report"]["gini_after"] == pytest.approx(0.15, abs=1e-12)


def test_verify_exo_exit_codes(capsys):
    code, doc = report(capsys, "verify-exo", "--toll", "e1=8")
    assert code == 0 and doc["report"]["pass"]
    # a loose solve passes its own stopping rule but not a strict path check
    code, doc = report(capsys, "verify-exo", "--toll", "e1=3", "--tolerance", "0.05",
                       "--path-tol", "1e-12")
    assert code == 1 and not doc["report"]["pass"]
    code, out, err = run(capsys, "solve", "--toll", "e1=3", "--max-iters", "1")
    assert code == 1 and out == "" and "no convergence" in err


def test_verify_endo(capsys):
    code, doc = report(capsys, "verify-endo", "--toll", "e1=8")
    best = doc["report"]["best_deviation_per_group"]["M"]
    assert code == 0 and not doc["report"]["endogenous_equilibrium"]
    assert best["gain"] > 0.1
    code, _, _ = run(capsys, "verify-endo", "--toll", "e1=8", "--expect-equilibrium")
    assert code == 1
    code, doc = report(capsys, "verify-endo", "--toll", "e1=4.002020083", "--expect-equilibrium")
    assert code == 0 and doc["report"]["profitable_deviations"] == 0


def test_so_search(capsys):
    code, doc = report(capsys, "so-search", "--scenario", "appendix-d")
    assert code == 0
    assert doc["report"]["total_cost"] == pytest.approx(0.175, rel=1e-12)


def test_reproduce(capsys):
    code, doc = report(capsys, "reproduce", "prop4")
    assert code == 0 and doc["report"]["pass"]
    assert "scenario_digest" not in doc


@pytest.mark.parametrize("argv", [
    ["solve", "--toll", "nope=1"],
    ["solve", "--toll", "e1=-2"],
    ["solve", "--toll", "e1"],
    ["solve", "--scenario", "/does/not/exist.json"],
    ["solve", "--tolerance", "0"],
    ["refund", "--policy", "robin-hood"],
    ["refund", "--toll", "e2=20"],
])
def test_bad_input_exits_2(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 2 and out == "" and err.startswith("equitoll: error:")


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--format", "xml"])
    assert exc.value.code == 2


def test_scenario_file_and_validation(tmp_path, capsys):
    path = tmp_path / "g.json"
    path.write_text(dump_scenario(builtin("appendix-g")))
    code, from_file = report(capsys, "solve", "--scenario", str(path))
    _, named = report(capsys, "solve")
    assert code == 0 and from_file == named
    doc = json.loads(path.read_text())
    doc["groups"][0]["demand"] = "-1"
    path.write_text(json.dumps(doc))
    code, _, err = run(capsys, "solve", "--scenario", str(path))
    assert code == 2 and "group H" in err


def test_csv_output(capsys):
    code, out, _ = run(capsys, "refund", "--toll", "e1=8", "--format", "csv")
    rows = dict(csv.reader(io.StringIO(out)))
    assert code == 0 and rows.pop("key") == "value"
    assert float(rows["report.scheme.refunds.L"]) == pytest.approx(2.8, abs=1e-9)
    assert rows["command"] == "refund"


def test_output_is_byte_identical_across_processes():
    cmd = [sys.executable, "-m", "equitoll", "refund", "--toll", "e1=8"]
    a = subprocess.run(cmd, capture_output=True, check=True).stdout
    b = subprocess.run(cmd, capture_output=True, check=True).stdout
    assert a == b and a.endswith(b"\n")
