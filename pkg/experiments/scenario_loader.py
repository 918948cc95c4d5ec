"""
Scenario Loader
Parses one scenario YAML file into engine objects: symbol family, grid,
moving support, initial datum and center schedules.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from engine.errors import ConfigError
from engine.flows_kalman import EXAMPLE_PAIRS, MatrixPair
from engine.spectral_field import GridSpec, SpectralField
from engine.support_geometry import (
    Ball,
    Everywhere,
    HalfSpace,
    IntervalUnion,
    MovingSupport,
    Nowhere,
    PeriodicIntervals,
    SquareRootIntervals,
    dilating_example_support,
    fixed_support,
    flow_support,
    rotation_cone_support,
    rotation_escape_centers,
    translation_cone_support,
    translation_escape_centers,
)
from engine.symbol_engine import (
    SymbolFamily,
    fractional_family,
    heat_family,
    ou_family,
    polynomial_family,
)

EXPERIMENT_KINDS = ("kalman", "thickness", "threshold", "synthesize", "certify",
                    "necessity", "bernstein", "cylinders", "fdb")
FAMILY_KINDS = ("heat", "ou", "polynomial", "fractional")
SUPPORT_KINDS = ("everywhere", "nowhere", "lattice", "intervals", "ball", "halfspace",
                 "translation_cone", "rotation_cone", "dilating", "flow")
CERTIFY_EXPECTATIONS = ("certified", "cap")
REQUIRED_FIELDS = ("name", "description", "example", "experiment")
OPTIONAL_FIELDS = ("seed", "equation", "grid", "support", "initial", "parameters")


def load_experiments_config():
    """Load experiment descriptions and default parameters from YAML"""
    config_path = os.path.join(os.path.dirname(__file__), '..', 'config', 'experiments.yaml')
    with open(config_path, 'r') as file:
        config = yaml.safe_load(file)
    return config


def scenarios_dir() -> str:
    return os.path.join(os.path.dirname(__file__), '..', 'config', 'scenarios')


@dataclass
class Scenario:
    name: str
    description: str
    example: str
    experiment: str
    seed: int
    equation: Dict[str, Any]
    grid: Optional[GridSpec]
    support: Optional[Dict[str, Any]]
    initial: Optional[Dict[str, Any]]
    parameters: Dict[str, Any]
    config_hash: str
    source: str = ""
    raw: Dict[str, Any] = field(default_factory=dict, repr=False)

    @property
    def T(self) -> float:
        return float(self.equation["T"])

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "description": self.description, "example": self.example,
                "experiment": self.experiment, "seed": self.seed, "equation": self.equation,
                "grid": None if self.grid is None else self.grid.to_dict(),
                "support": self.support, "initial": self.initial,
                "parameters": self.parameters, "config_hash": self.config_hash}


# ============================================================================
# PARSING
# ============================================================================

def _line_index(text: str) -> Dict[Tuple[str, ...], int]:
    """Map every mapping key path to its 1-based line in the YAML text"""
    lines: Dict[Tuple[str, ...], int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for key_node, value_node in node.value:
                child = path + (str(key_node.value),)
                lines[child] = key_node.start_mark.line + 1
                walk(value_node, child)
        elif isinstance(node, yaml.SequenceNode):
            for index, item in enumerate(node.value):
                walk(item, path + (str(index),))

    root = yaml.compose(text)
    if root is not None:
        walk(root, ())
    return lines


def config_hash(payload: Dict[str, Any]) -> str:
    """sha256 of the canonical JSON form of the scenario"""
    data = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(data).hexdigest()


class _Validator:
    def __init__(self, lines: Dict[Tuple[str, ...], int]):
        self.lines = lines

    def fail(self, path: str, message: str):
        parts = tuple(path.split("."))
        line = None
        while parts and line is None:
            line = self.lines.get(parts)
            parts = parts[:-1]
        raise ConfigError(path, message, line)

    def number(self, data: Dict, key: str, path: str, positive: bool = False,
               required: bool = True, default=None) -> Optional[float]:
        if key not in data:
            if required:
                self.fail(f"{path}.{key}" if path else key, "missing required field")
            return default
        value = data[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(f"{path}.{key}" if path else key, f"expected a number, got {value!r}")
        if positive and not value > 0:
            self.fail(f"{path}.{key}" if path else key, f"must be positive, got {value}")
        return float(value)

    def mapping(self, data: Dict, key: str, required: bool = True) -> Optional[Dict]:
        if key not in data:
            if required:
                self.fail(key, "missing required section")
            return None
        if not isinstance(data[key], dict):
            self.fail(key, "expected a mapping")
        return data[key]


def _validate(data: Any, lines: Dict[Tuple[str, ...], int], defaults: Dict) -> None:
    check = _Validator(lines)
    if not isinstance(data, dict):
        raise ConfigError("scenario", "top level must be a mapping")
    for key in REQUIRED_FIELDS:
        if key not in data:
            check.fail(key, "missing required field")
    for key in data:
        if key not in REQUIRED_FIELDS + OPTIONAL_FIELDS:
            check.fail(key, "unknown field")
    if data["experiment"] not in EXPERIMENT_KINDS:
        check.fail("experiment", f"unknown experiment '{data['experiment']}', "
                                 f"expected one of {', '.join(EXPERIMENT_KINDS)}")
    if "seed" in data and (isinstance(data["seed"], bool) or not isinstance(data["seed"], int)
                           or data["seed"] < 0):
        check.fail("seed", f"expected a nonnegative integer, got {data['seed']!r}")

    needs_equation = data["experiment"] != "fdb"
    equation = check.mapping(data, "equation", required=needs_equation)
    if equation is not None:
        kind = equation.get("family")
        if kind not in FAMILY_KINDS:
            check.fail("equation.family", f"unknown family '{kind}'")
        check.number(equation, "T", "equation", positive=True)
        if kind == "ou" and "pair" not in equation and not ("Q" in equation and "B" in equation):
            check.fail("equation", "ou family needs 'pair' or both 'Q' and 'B'")
        if kind == "ou" and "pair" in equation and equation["pair"] not in EXAMPLE_PAIRS:
            check.fail("equation.pair", f"unknown pair '{equation['pair']}'")
        if kind == "fractional":
            check.number(equation, "s", "equation", positive=True)
        if kind == "polynomial" and "coeffs" not in equation:
            check.fail("equation", "polynomial family needs 'coeffs'")

    grid = check.mapping(data, "grid", required=False)
    if grid is not None:
        try:
            GridSpec(n=int(grid.get("n", 0)), L=float(grid.get("L", 0.0)), N=int(grid.get("N", 0)))
        except ValueError as error:
            check.fail("grid", str(error))

    support = check.mapping(data, "support", required=False)
    if support is not None:
        if support.get("kind") not in SUPPORT_KINDS:
            check.fail("support.kind", f"unknown support kind '{support.get('kind')}'")
        if support["kind"] in ("translation_cone", "rotation_cone"):
            theta = check.number(support, "theta0", "support", positive=True)
            if theta >= np.pi / 2:
                check.fail("support.theta0", "cone aperture must be below π/2")
        if support["kind"] == "dilating":
            check.number(support, "mu", "support", positive=True)

    parameters = check.mapping(data, "parameters", required=False) or {}
    known = defaults.get(data["experiment"], {}).get("defaults", {}) or {}
    for key in parameters:
        if key not in known:
            check.fail(f"parameters.{key}", f"unknown parameter for experiment '{data['experiment']}'")
    for key in ("epsilon", "C", "r", "l", "samples"):
        if key in parameters:
            check.number(parameters, key, "parameters", positive=True)
    if "epsilon" in parameters and not parameters["epsilon"] < 1:
        check.fail("parameters.epsilon", "must lie in (0, 1)")
    for eps in parameters.get("epsilons", []) or []:
        if isinstance(eps, bool) or not isinstance(eps, (int, float)) or not 0 < eps < 1:
            check.fail("parameters.epsilons", f"every rate must lie in (0, 1), got {eps!r}")
    if parameters.get("expect", "certified") not in CERTIFY_EXPECTATIONS:
        check.fail("parameters.expect", f"expected outcome must be one of {CERTIFY_EXPECTATIONS}")


def load_scenario(path: str, seed: Optional[int] = None) -> Scenario:
    """
    Read and validate one scenario file

    Args:
        path: YAML file
        seed: Optional override of the scenario seed

    Returns:
        Scenario

    Raises:
        ConfigError: the file is missing, malformed or fails validation
    """
    try:
        with open(path, 'r') as file:
            text = file.read()
    except OSError as error:
        raise ConfigError("scenario", f"cannot read {path}: {error}")
    try:
        data = yaml.safe_load(text)
        lines = _line_index(text)
    except yaml.YAMLError as error:
        mark = getattr(error, "problem_mark", None)
        raise ConfigError("scenario", f"YAML syntax error: {error}",
                          None if mark is None else mark.line + 1)

    experiments = load_experiments_config()
    _validate(data, lines, experiments)
    if seed is not None:
        data["seed"] = int(seed)
    data.setdefault("seed", 0)

    defaults = dict(experiments[data["experiment"]].get("defaults") or {})
    defaults.update(data.get("parameters") or {})
    grid = data.get("grid")
    return Scenario(
        name=str(data["name"]),
        description=" ".join(str(data["description"]).split()),
        example=str(data["example"]),
        experiment=data["experiment"],
        seed=int(data["seed"]),
        equation=dict(data.get("equation") or {}),
        grid=None if grid is None else GridSpec(n=int(grid["n"]), L=float(grid["L"]), N=int(grid["N"])),
        support=data.get("support"),
        initial=data.get("initial"),
        parameters=defaults,
        config_hash=config_hash(data),
        source=os.path.abspath(path),
        raw=data,
    )


def list_scenarios() -> List[Dict[str, str]]:
    """Catalog of shipped scenarios, sorted by name"""
    catalog = []
    folder = scenarios_dir()
    for filename in sorted(os.listdir(folder)):
        if not filename.endswith((".yaml", ".yml")):
            continue
        path = os.path.join(folder, filename)
        with open(path, 'r') as file:
            data = yaml.safe_load(file) or {}
        catalog.append({"name": str(data.get("name", filename)),
                        "experiment": str(data.get("experiment", "")),
                        "example": str(data.get("example", "")),
                        "description": " ".join(str(data.get("description", "")).split()),
                        "file": os.path.relpath(path, os.path.join(folder, '..', '..'))})
    return sorted(catalog, key=lambda item: item["name"])


# ============================================================================
# BUILDERS
# ============================================================================

def build_family(equation: Dict[str, Any], T: Optional[float] = None) -> SymbolFamily:
    """Symbol family from the equation section, optionally at another horizon"""
    T = float(equation["T"]) if T is None else float(T)
    kind = equation["family"]
    if kind == "heat":
        return heat_family(int(equation.get("n", 1)), T, float(equation.get("diffusivity", 1.0)))
    if kind == "ou":
        return ou_family(build_pair(equation), T, label=str(equation.get("pair", "ou")))
    if kind == "polynomial":
        return polynomial_family(equation["coeffs"], T)
    return fractional_family(int(equation.get("n", 1)), T, float(equation["s"]))


def build_pair(equation: Dict[str, Any]) -> MatrixPair:
    if "pair" in equation:
        return MatrixPair.example(equation["pair"])
    return MatrixPair(Q=np.asarray(equation["Q"], dtype=float), B=np.asarray(equation["B"], dtype=float))


def _region(section: Dict[str, Any], n: int):
    kind = section["kind"]
    if kind == "everywhere":
        return Everywhere(n)
    if kind == "nowhere":
        return Nowhere(n)
    if kind == "lattice":
        return PeriodicIntervals(float(section.get("period", 2.0)), float(section.get("width", 1.0)),
                                 float(section.get("phase", 0.0)))
    if kind == "intervals":
        return IntervalUnion(section["intervals"])
    if kind == "ball":
        return Ball(section["center"], float(section["radius"]))
    if kind == "halfspace":
        return HalfSpace(section["normal"], float(section.get("offset", 0.0)))
    if kind == "square_root_intervals":
        return SquareRootIntervals()
    raise ConfigError("support.kind", f"'{kind}' is not a base region")


def build_support(section: Dict[str, Any], n: int, T: float) -> MovingSupport:
    """Moving support at horizon T from the support section"""
    kind = section["kind"]
    if kind == "translation_cone":
        return translation_cone_support(float(section["theta0"]), T)
    if kind == "rotation_cone":
        return rotation_cone_support(float(section["theta0"]), T)
    if kind == "dilating":
        return dilating_example_support(float(section["mu"]), T)
    if kind == "flow":
        return flow_support(_region(section["region"], n), section["B"], T,
                            reversed=bool(section.get("reversed", False)))
    return fixed_support(_region(section, n), T, label=kind)


def build_initial(section: Optional[Dict[str, Any]], grid: GridSpec) -> SpectralField:
    """Initial datum: gaussian (default), mode or zero"""
    section = section or {"kind": "gaussian"}
    kind = section.get("kind", "gaussian")
    if kind == "gaussian":
        center = section.get("center", [0.0] * grid.n)
        return SpectralField.gaussian(grid, center, float(section.get("width", 1.0)),
                                      normalized=bool(section.get("normalized", True)))
    if kind == "mode":
        return SpectralField.fourier_mode(grid, section["index"])
    if kind == "zero":
        return SpectralField.zeros(grid)
    raise ConfigError("initial.kind", f"unknown initial datum '{kind}'")


def build_centers(section: Any, n: int, support: Optional[Dict[str, Any]] = None,
                  T: Optional[float] = None) -> List[np.ndarray]:
    """
    Center schedule: an explicit list, a tensor grid, a ray, or the
    escape schedule of the support's cone
    """
    if isinstance(section, list):
        return [np.atleast_1d(np.asarray(point, dtype=float)) for point in section]
    kind = section.get("kind")
    if kind == "grid":
        axis = np.linspace(float(section["lo"]), float(section["hi"]), int(section["count"]))
        mesh = np.meshgrid(*([axis] * n), indexing="ij")
        return [np.array(point) for point in np.stack(mesh, axis=-1).reshape(-1, n)]
    if kind == "ray":
        direction = np.asarray(section["direction"], dtype=float)
        steps = np.arange(1, int(section["count"]) + 1) * float(section.get("stride", 1.0))
        return [step * direction for step in steps]
    if kind == "escape":
        if support is None or support.get("kind") not in ("translation_cone", "rotation_cone"):
            raise ConfigError("parameters.centers", "escape schedules need a cone support")
        theta0 = float(support["theta0"])
        if support["kind"] == "translation_cone":
            distances = section.get("distances", [250.0, 500.0, 1000.0])
            return translation_escape_centers(T, theta0, distances)
        return rotation_escape_centers(theta0, int(section.get("count", 40)), float(section.get("stride", 1.0)))
    raise ConfigError("parameters.centers", f"unknown center schedule '{kind}'")
