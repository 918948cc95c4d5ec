import os
import textwrap

import numpy as np
import pytest

from engine.errors import ConfigError
from engine.spectral_field import GridSpec
from engine.support_geometry import FIXED, FLOW_PUSHFORWARD
from experiments.scenario_loader import (
    build_centers,
    build_family,
    build_initial,
    build_support,
    list_scenarios,
    load_scenario,
    scenarios_dir,
)

HEAT_SCENARIO = """\
name: heat_probe
description: |
  Penalized solve for the heat equation on a lattice.
example: heat
experiment: synthesize
seed: 3
equation:
  family: heat
  n: 1
  T: {T}
grid: {{n: 1, L: 8.0, N: 64}}
support: {{kind: lattice, period: 2.0, width: 1.0}}
parameters:
  epsilon: {epsilon}
"""


def write_scenario(tmp_path, text, name="scenario.yaml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(text))
    return str(path)


def test_shipped_scenarios_load():
    catalog = list_scenarios()
    names = [item["name"] for item in catalog]
    assert len(catalog) >= 6
    assert names == sorted(names)
    for item in catalog:
        scenario = load_scenario(os.path.join(scenarios_dir(), os.path.basename(item["file"])))
        assert scenario.name == item["name"]
        assert scenario.experiment == item["experiment"]


def test_defaults_are_merged(tmp_path):
    scenario = load_scenario(write_scenario(tmp_path, HEAT_SCENARIO.format(T=1.0, epsilon=0.2)))
    assert scenario.parameters["epsilon"] == 0.2
    assert scenario.parameters["C"] == 1000.0
    assert scenario.grid == GridSpec(n=1, L=8.0, N=64)
    assert scenario.seed == 3
    assert scenario.T == 1.0


def test_config_hash_is_stable(tmp_path):
    path = write_scenario(tmp_path, HEAT_SCENARIO.format(T=1.0, epsilon=0.2))
    first = load_scenario(path)
    assert load_scenario(path).config_hash == first.config_hash
    assert load_scenario(path, seed=4).config_hash != first.config_hash
    assert len(first.config_hash) == 64


def test_negative_horizon_reports_line(tmp_path):
    path = write_scenario(tmp_path, HEAT_SCENARIO.format(T=-1.0, epsilon=0.2))
    with pytest.raises(ConfigError) as info:
        load_scenario(path)
    assert info.value.field == "equation.T"
    assert info.value.line == 10


def test_rate_must_be_below_one(tmp_path):
    path = write_scenario(tmp_path, HEAT_SCENARIO.format(T=1.0, epsilon=1.5))
    with pytest.raises(ConfigError) as info:
        load_scenario(path)
    assert info.value.field == "parameters.epsilon"
    assert info.value.line == 14


def test_unknown_parameter(tmp_path):
    text = HEAT_SCENARIO.format(T=1.0, epsilon=0.2) + "  tolerance: 3\n"
    with pytest.raises(ConfigError, match="unknown parameter"):
        load_scenario(write_scenario(tmp_path, text))


def test_certify_expectation_is_checked(tmp_path):
    text = HEAT_SCENARIO.format(T=1.0, epsilon=0.2).replace("synthesize", "certify")
    text = text.replace("  epsilon: 0.2\n", "  epsilons: [0.2]\n  expect: refuted\n")
    with pytest.raises(ConfigError, match="expected outcome"):
        load_scenario(write_scenario(tmp_path, text))
    scenario = load_scenario(write_scenario(tmp_path, text.replace("refuted", "cap")))
    assert scenario.parameters["expect"] == "cap"
    assert load_scenario(os.path.join(scenarios_dir(), "translation_cone_deny_T1p5.yaml")).parameters["c_cap"] == 2.0 ** 40


def test_unknown_experiment(tmp_path):
    text = HEAT_SCENARIO.format(T=1.0, epsilon=0.2).replace("synthesize", "optimize")
    with pytest.raises(ConfigError) as info:
        load_scenario(write_scenario(tmp_path, text))
    assert info.value.line == 5


def test_wide_cone_rejected(tmp_path):
    text = HEAT_SCENARIO.format(T=1.0, epsilon=0.2).replace(
        "{kind: lattice, period: 2.0, width: 1.0}", "{kind: translation_cone, theta0: 1.6}")
    with pytest.raises(ConfigError, match="aperture"):
        load_scenario(write_scenario(tmp_path, text))


def test_missing_file_and_bad_yaml(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(str(tmp_path / "absent.yaml"))
    with pytest.raises(ConfigError, match="YAML"):
        load_scenario(write_scenario(tmp_path, "name: [unclosed\n"))


def test_fdb_needs_no_equation():
    scenario = load_scenario(os.path.join(scenarios_dir(), "fdb_identity.yaml"))
    assert scenario.equation == {}
    assert scenario.grid is None


def test_build_family_at_other_horizon():
    fam = build_family({"family": "ou", "pair": "kolmogorov", "T": 1.0}, T=2.5)
    assert fam.T == 2.5
    assert fam.n == 2


def test_build_support_kinds():
    assert build_support({"kind": "lattice", "period": 2.0, "width": 1.0}, 1, 1.0).kind == FIXED
    cone = build_support({"kind": "translation_cone", "theta0": np.pi / 4}, 2, 3.0)
    assert cone.kind == FLOW_PUSHFORWARD
    assert cone.T == 3.0
    with pytest.raises(ConfigError):
        build_support({"kind": "moebius"}, 1, 1.0)


def test_build_initial_is_normalized():
    grid = GridSpec(n=1, L=8.0, N=64)
    f0 = build_initial({"kind": "gaussian", "center": [0.5], "width": 1.0}, grid)
    assert f0.norm() == pytest.approx(1.0)
    assert build_initial({"kind": "zero"}, grid).norm() == 0.0
    with pytest.raises(ConfigError):
        build_initial({"kind": "spline"}, grid)


def test_center_schedules():
    mesh = build_centers({"kind": "grid", "lo": -1.0, "hi": 1.0, "count": 3}, 2)
    assert len(mesh) == 9
    ray = build_centers({"kind": "ray", "direction": [1.0, 0.0], "count": 4, "stride": 2.0}, 2)
    assert np.allclose(ray[-1], [8.0, 0.0])
    explicit = build_centers([[0.0], [1.5]], 1)
    assert [float(c[0]) for c in explicit] == [0.0, 1.5]
    cone = {"kind": "translation_cone", "theta0": np.pi / 4}
    assert len(build_centers({"kind": "escape", "distances": [10.0, 20.0]}, 2, cone, 2.0)) == 3
    with pytest.raises(ConfigError):
        build_centers({"kind": "escape"}, 1, {"kind": "lattice"}, 1.0)
    with pytest.raises(ConfigError):
        build_centers({"kind": "spiral"}, 1)
