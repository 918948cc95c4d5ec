import json

import pandas as pd
import pytest

from cli import main, resolve_scenario
from engine.errors import ScenarioError
import experiments.all_experiments as all_experiments
from runner import EXIT_ERROR, EXIT_NEGATIVE, EXIT_PASS, ScenarioRunner


def test_list_json(capsys):
    assert main(["list", "--json"]) == 0
    catalog = json.loads(capsys.readouterr().out)
    names = [item["name"] for item in catalog]
    assert "fdb_identity" in names
    assert names == sorted(names)


def test_resolve_shipped_name():
    assert resolve_scenario("fdb_identity").endswith("fdb_identity.yaml")
    assert resolve_scenario("no_such_scenario") == "no_such_scenario"


def test_fdb_run_writes_artifacts(tmp_path):
    assert main(["run", "fdb_identity", "--output-dir", str(tmp_path)]) == EXIT_PASS
    run_dir = tmp_path / "fdb_identity"
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["verdict"] == "pass"
    assert summary["results"]["identity_exact"] is True
    assert (run_dir / "fdb_identity.csv").exists()
    assert (run_dir / "fdb_oracle.csv").exists()
    ledger = json.loads((run_dir / "ledger.json").read_text())
    assert ledger["exit_code"] == 0
    assert (tmp_path / "logs" / "run_history.csv").exists()


def test_summary_is_reproducible(tmp_path):
    main(["run", "fdb_identity", "--output-dir", str(tmp_path / "a")])
    main(["run", "fdb_identity", "--output-dir", str(tmp_path / "b")])
    first = (tmp_path / "a" / "fdb_identity" / "summary.json").read_bytes()
    second = (tmp_path / "b" / "fdb_identity" / "summary.json").read_bytes()
    assert first == second


def test_invalid_scenario_exits_with_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: bad\ndescription: x\nexample: heat\nexperiment: nonsense\n")
    assert main(["run", str(bad), "--output-dir", str(tmp_path)]) == EXIT_ERROR
    assert "[ERROR]" in capsys.readouterr().out


def test_missing_grid_is_recorded(tmp_path):
    scenario = tmp_path / "gridless.yaml"
    scenario.write_text("name: gridless\ndescription: x\nexample: heat\nexperiment: bernstein\n"
                        "equation: {family: heat, n: 1, T: 1.0}\n")
    assert main(["run", str(scenario), "--output-dir", str(tmp_path)]) == EXIT_ERROR
    ledger = json.loads((tmp_path / "gridless" / "ledger.json").read_text())
    assert ledger["exit_code"] == EXIT_ERROR
    assert "grid" in ledger["error"]


def test_downstream_failure_is_wrapped(tmp_path):
    scenario = tmp_path / "deep_audit.yaml"
    scenario.write_text("name: deep_audit\ndescription: x\nexample: heat\nexperiment: bernstein\n"
                        "equation: {family: heat, n: 1, T: 1.0}\ngrid: {n: 1, L: 8.0, N: 64}\n"
                        "parameters: {m_max: 7}\n")
    runner = ScenarioRunner(output_dir=str(tmp_path))
    with pytest.raises(ScenarioError) as info:
        runner.run(str(scenario))
    assert info.value.scenario == "deep_audit"
    assert info.value.stage == "run"
    assert isinstance(info.value.cause, ValueError)


def test_kalman_scenario_passes(tmp_path):
    outcome = ScenarioRunner(output_dir=str(tmp_path)).run(resolve_scenario("kolmogorov_kalman"))
    assert outcome.exit_code == EXIT_PASS
    assert outcome.summary["hypoellipticity"]["k0"] == 1
    assert outcome.summary["expected_exponent"] == 3
    assert outcome.summary["reduction_ok"] is True
    assert outcome.summary["reduction_max_rel_err"] <= 1e-10


def test_kalman_verdict_needs_the_kolmogorov_reduction(tmp_path, monkeypatch):
    monkeypatch.setattr(all_experiments, "_kolmogorov_reduction_error", lambda *args: 1e-6)
    outcome = ScenarioRunner(output_dir=str(tmp_path)).run(resolve_scenario("kolmogorov_kalman"))
    assert outcome.summary["exponent_ok"] is True
    assert outcome.summary["reduction_ok"] is False
    assert outcome.exit_code == EXIT_NEGATIVE


def test_saturated_certify_is_inconclusive(tmp_path):
    scenario = tmp_path / "starved.yaml"
    scenario.write_text("name: starved\ndescription: x\nexample: heat\nexperiment: certify\n"
                        "equation: {family: heat, n: 1, T: 1.0}\ngrid: {n: 1, L: 8.0, N: 64}\n"
                        "support: {kind: lattice, period: 2.0, width: 1.0}\n"
                        "initial: {kind: gaussian, center: [0.5], width: 1.0}\n"
                        "parameters: {epsilons: [0.1], max_iter: 1, cg_tol: 1.0e-11, time_nodes: 16}\n")
    assert main(["run", str(scenario), "--output-dir", str(tmp_path)]) == EXIT_ERROR
    summary = json.loads((tmp_path / "starved" / "summary.json").read_text())
    assert summary["verdict"] == "inconclusive"
    assert summary["results"]["curve"][0]["reason"] == "solver_saturated"


@pytest.mark.slow
@pytest.mark.parametrize("name", ["heat_lattice_synthesize", "heat_bernstein", "heat_lattice_cylinders",
                                  "rotation_cone_threshold", "rotation_cone_necessity",
                                  "translation_cone_certify_T3"])
def test_positive_scenarios(tmp_path, name):
    assert main(["run", name, "--output-dir", str(tmp_path)]) == EXIT_PASS


@pytest.mark.slow
def test_short_horizon_cone_is_denied_by_the_cap(tmp_path):
    assert main(["run", "translation_cone_deny_T1p5", "--output-dir", str(tmp_path)]) == EXIT_NEGATIVE
    run_dir = tmp_path / "translation_cone_deny_T1p5"
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["results"]["expectation_met"] is True
    table = pd.read_csv(run_dir / "certify.csv")
    assert (table["status"] == "NotCertified").all()
    assert (table["reason"] == "cap").all()
    assert (table["cap_lower_bound"] > summary["results"]["f0_norm_sq"]).all()
