import copy
import json

import pytest

from lqmkv import apps
from lqmkv.cli import EXIT_OK, EXIT_SCHEMA, EXIT_SOLVER, EXIT_VERIFY, main
from lqmkv.errors import ScenarioError
from lqmkv.io import read_csv
from lqmkv.scenario import bundled, load, loads

ZERO = json.loads(bundled("zero").read_text())


def _write(tmp_path, raw, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw, indent=2))
    return path


def test_bundled_scenarios_load():
    for name in ("liquidation", "resource", "zero"):
        sc = load(bundled(name))
        assert sc.name == name and len(sc.hash) == 64
    assert load(bundled("liquidation")).params == apps.LiquidationParams()


def test_unknown_field_reports_line():
    text = '{\n  "schema_version": 1,\n  "name": "x",\n  "kind": "generic",\n  "problem": {"d": 1, "m": 1, "horizon": 1.0, "bogus": 2}\n}'
    with pytest.raises(ScenarioError) as info:
        loads(text)
    assert str(info.value).startswith("line 5:")
    assert "bogus" in str(info.value)


def test_bad_json_reports_line():
    with pytest.raises(ScenarioError) as info:
        loads('{\n  "schema_version": 1,\n  "name": }')
    assert "line 3" in str(info.value)


def test_wrong_schema_version_rejected():
    raw = copy.deepcopy(ZERO)
    raw["schema_version"] = 2
    with pytest.raises(ScenarioError):
        loads(json.dumps(raw))


def test_schema_violation_exit_code(tmp_path, capsys):
    raw = copy.deepcopy(ZERO)
    raw["simulation"]["particles"] = 5
    code = main(["solve", str(_write(tmp_path, raw)), "--out", str(tmp_path / "out")])
    assert code == EXIT_SCHEMA
    assert "line" in capsys.readouterr().err


def test_kind_mismatch_is_schema_error(tmp_path):
    assert main(["liquidation", "zero", "--out", str(tmp_path)]) == EXIT_SCHEMA


def test_solver_failure_exit_code(tmp_path, capsys):
    raw = copy.deepcopy(ZERO)
    raw["problem"]["coefficients"] = {"N": -1.0}
    code = main(["solve", str(_write(tmp_path, raw)), "--out", str(tmp_path / "out")])
    assert code == EXIT_SOLVER
    assert "AssumptionError" in capsys.readouterr().err


def test_solve_zero_writes_value_with_provenance(tmp_path):
    assert main(["solve", "zero", "--out", str(tmp_path)]) == EXIT_OK
    header, rows, footer = read_csv(tmp_path / "value.csv")
    assert header == ["value", "R0"] and float(rows[0][0]) == 0.0
    assert footer["scenario_hash"] == load(bundled("zero")).hash and footer["seed"] == "0"
    for name in ("riccati.csv", "gains.csv", "mean_path.csv"):
        assert (tmp_path / name).exists()
    assert json.loads((tmp_path / "assumptions.json").read_text())["overall_admissible"] is True


def test_verify_zero_passes(tmp_path, capsys):
    assert main(["verify", "zero", "--out", str(tmp_path)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "PASS optimal.flat" in out and "FAIL" not in out
    header, rows, _ = read_csv(tmp_path / "verify.csv")
    assert header == ["check", "statistic", "pass"] and all(r[2] == "true" for r in rows)


def test_verify_failure_exit_code(tmp_path, capsys):
    raw = copy.deepcopy(ZERO)
    raw["verify"] = {"ratio_bounds": [10.0, 11.0]}
    code = main(["verify", str(_write(tmp_path, raw)), "--out", str(tmp_path / "out")])
    assert code == EXIT_VERIFY
    assert "perturbation.quadratic_ratio" in capsys.readouterr().err


def test_liquidation_command(tmp_path, capsys):
    assert main(["liquidation", "liquidation", "--out", str(tmp_path)]) == EXIT_OK
    assert "E(T) = 1.5179" in capsys.readouterr().out
    report = json.loads((tmp_path / "liquidation_report.json").read_text())
    assert 1.51 <= report["E_T"] <= 1.53


def test_resource_command(tmp_path):
    assert main(["resource", "resource", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "resource_report.json").read_text())
    want = apps.res_stationary_reserve(apps.ResourceParams())
    assert abs(report["stationary_reserve_generic"] - want) <= 1e-8
    sweep = list(report["eps_sweep"].values())
    assert max(sweep) - min(sweep) <= 1e-10


def test_figures_command(tmp_path):
    assert main(["figures", "liquidation", "--out", str(tmp_path)]) == EXIT_OK
    header, rows, _ = read_csv(tmp_path / "figure1.csv")
    assert header == ["t", "nu=0.1", "nu=0.5", "nu=1.0", "nu=2.0"] and len(rows) == 201
    header, _, _ = read_csv(tmp_path / "figure2.csv")
    assert header[0] == "t" and header[1] == "q=0.0"


def test_overrides_recorded_and_reruns_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["simulate", "zero", "--seed", "9", "--particles", "300", "--out", str(out)]) == EXIT_OK
    for name in ("ensemble.csv", "cost.csv", "simulate_report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    _, _, footer = read_csv(a / "ensemble.csv")
    assert footer["seed"] == "9" and footer["n_particles"] == "300"
