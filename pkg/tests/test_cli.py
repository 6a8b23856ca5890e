import json
import math
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from fishermarket import io
from fishermarket.cli import TOL_ENV, run

DATA = Path(__file__).parent / "data"
GOLDEN = DATA / "golden"

# name -> (argv before the output flag, expected exit status)
CASES = {
    "solve_symmetric": (["solve", "symmetric.json"], 0),
    "solve_three_by_four": (["solve", "three_by_four.json"], 0),
    "sperner_normalized": (["sperner", "normalized.json"], 0),
    "ceei_favourites": (["ceei", "favourites.json"], 0),
    "ceei_one_good": (["ceei", "one_good_two_buyers.json", "--resolution", "1000"], 1),
    "snob_search": (["snob", "snob.json"], 0),
    "snob_linear": (["snob", "linear_snob.json", "--price-grid", "7", "--alloc-grid", "21"], 0),
    "snob_theorem": (["snob", "--theorem", "101"], 0),
    "check_symmetric": (["check-instance", "symmetric.json"], 0),
    "check_unwanted": (["check-instance", "bad_unwanted.json"], 1),
}


def argv_for(args):
    return [str(DATA / a) if a.endswith(".json") else a for a in args]


def run_case(name, out_dir):
    args, _ = CASES[name]
    out = Path(out_dir) / f"{name}.json"
    code = run(argv_for(args) + ["-o", str(out)])
    return code, json.loads(out.read_text())


def comparable(report):
    report = dict(report)
    # absolute paths differ between checkouts
    report.pop("source")
    return report


def regenerate():
    GOLDEN.mkdir(exist_ok=True)
    for name in CASES:
        _, report = run_case(name, GOLDEN)
        (GOLDEN / f"{name}.json").write_text(io.dumps_report(comparable(report)))


def close(a, b, path="$"):
    if isinstance(a, dict):
        assert isinstance(b, dict) and a.keys() == b.keys(), path
        for k in a:
            close(a[k], b[k], f"{path}.{k}")
    elif isinstance(a, list):
        assert isinstance(b, list) and len(a) == len(b), path
        for i, (x, y) in enumerate(zip(a, b)):
            close(x, y, f"{path}[{i}]")
    elif isinstance(a, float) or isinstance(b, float):
        assert math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-12), (path, a, b)
    else:
        assert a == b, (path, a, b)


@pytest.mark.parametrize("name", sorted(CASES))
def test_golden(name, tmp_path, monkeypatch):
    monkeypatch.delenv(TOL_ENV, raising=False)
    code, report = run_case(name, tmp_path)
    assert code == CASES[name][1]
    jsonschema.validate(report, io.REPORT_SCHEMA)
    golden = json.loads((GOLDEN / f"{name}.json").read_text())
    close(comparable(report), golden)


def test_reports_are_deterministic(tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    for out in (a, b):
        assert run(["solve", str(DATA / "three_by_four.json"), "-o", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_solve_symmetric_prices(tmp_path):
    out = tmp_path / "r.json"
    assert run(["solve", str(DATA / "symmetric.json"), "-o", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert np.allclose(rep["payload"]["prices"], [1, 1])
    assert rep["payload"]["kkt_ok"] and rep["payload"]["flow_ok"]


@pytest.mark.parametrize("inst", ["symmetric.json", "three_by_four.json", "normalized.json"])
def test_solve_then_verify(inst, tmp_path):
    out = tmp_path / "solve.json"
    assert run(["solve", str(DATA / inst), "-o", str(out)]) == 0
    assert run(["verify", str(DATA / inst), "--from-report", str(out), "-o", str(tmp_path / "v.json")]) == 0


def test_verify_perturbed_prices(tmp_path):
    out = tmp_path / "v.json"
    assert run(["verify", str(DATA / "symmetric.json"), "--prices", "1.02,0.98", "-o", str(out)]) == 1
    rep = json.loads(out.read_text())
    assert rep["verdict"] is False
    jsonschema.validate(rep, io.REPORT_SCHEMA)


def test_verify_zero_price_is_a_false_verdict(tmp_path):
    out = tmp_path / "v.json"
    assert run(["verify", str(DATA / "symmetric.json"), "--prices", "0,2", "-o", str(out)]) == 1
    rep = json.loads(out.read_text())
    assert "price" in rep["payload"]["reason"] and rep["payload"]["flow_value"] is None


def test_verify_dump_network(tmp_path):
    dump = tmp_path / "net.txt"
    assert run(["verify", str(DATA / "symmetric.json"), "--prices", "1,1", "-o", str(tmp_path / "v.json"),
                "--dump-network", str(dump)]) == 0
    assert dump.read_text().startswith("node s\n")


def test_usage_errors(tmp_path, capsys):
    assert run(["solve", str(tmp_path / "missing.json")]) == 2
    assert "cannot read" in capsys.readouterr().err
    assert run(["check-instance", str(DATA / "bad_syntax.json")]) == 2
    assert "bad_syntax.json:4" in capsys.readouterr().err
    assert run(["solve", str(DATA / "bad_unwanted.json")]) == 2
    assert run(["frobnicate"]) == 2
    assert run(["solve"]) == 2
    assert run(["solve", str(DATA / "symmetric.json"), "--tol", "-1"]) == 2
    assert run(["verify", str(DATA / "symmetric.json"), "--prices", "1,x"]) == 2
    assert run(["verify", str(DATA / "symmetric.json"), "--prices", "1,1,1"]) == 2
    assert run(["ceei", str(DATA / "symmetric.json"), "--resolution", "0"]) == 2
    assert run(["snob", str(DATA / "symmetric.json")]) == 2
    assert run(["snob"]) == 2


def test_sperner_needs_normalized(tmp_path):
    assert run(["sperner", str(DATA / "symmetric.json"), "-o", str(tmp_path / "r.json")]) == 2
    out = tmp_path / "n.json"
    trace = tmp_path / "trace.txt"
    assert run(["sperner", str(DATA / "symmetric.json"), "--normalize", "--trace", str(trace), "-o", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert np.allclose(rep["payload"]["prices"], [0.5, 0.5], atol=1e-4)
    assert trace.read_text().startswith("round k=2 ")


def test_sperner_overflow_reports_error(tmp_path, capsys):
    out = tmp_path / "r.json"
    code = run(["sperner", str(DATA / "normalized.json"), "--k0", str(2**21), "-o", str(out)])
    assert code == 1
    rep = json.loads(out.read_text())
    assert rep["payload"]["prices"] is None and "error" in rep["payload"]
    jsonschema.validate(rep, io.REPORT_SCHEMA)
    assert capsys.readouterr().err


def test_tolerance_from_environment(tmp_path, monkeypatch):
    out = tmp_path / "r.json"
    monkeypatch.setenv(TOL_ENV, "1e-3")
    assert run(["solve", str(DATA / "symmetric.json"), "-o", str(out)]) == 0
    assert json.loads(out.read_text())["parameters"]["tol"] == 1e-3
    # the flag still wins
    assert run(["solve", str(DATA / "symmetric.json"), "--tol", "1e-6", "-o", str(out)]) == 0
    assert json.loads(out.read_text())["parameters"]["tol"] == 1e-6
    monkeypatch.setenv(TOL_ENV, "lots")
    assert run(["solve", str(DATA / "symmetric.json"), "-o", str(out)]) == 2


def test_stdout_report(capsys):
    assert run(["check-instance", str(DATA / "favourites.json")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["payload"]["divisible"] is False


@pytest.mark.parametrize(
    "args, figure",
    [
        (["solve", "symmetric.json"], "allocation.png"),
        (["solve", "symmetric.json"], "convergence.png"),
        (["sperner", "normalized.json"], "sperner.png"),
        (["snob", "snob.json"], "candidates.png"),
        (["snob", "--theorem", "11"], "snob_objective.png"),
        (["ceei", "favourites.json"], "allocation.png"),
    ],
)
def test_figures(args, figure, tmp_path):
    figs = tmp_path / "figs"
    out = tmp_path / "r.json"
    assert run(argv_for(args) + ["--figures", str(figs), "-o", str(out)]) == 0
    png = figs / figure
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert str(png) in json.loads(out.read_text())["figures"]
