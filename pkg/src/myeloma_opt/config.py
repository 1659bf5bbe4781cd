"""YAML scenario configuration with line-numbered validation errors."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .dynamics import ModelParameters, PatientState, PharmacodynamicsParameters, ValidationError
from .integrator import IntegratorSettings
from .optimizers.result import METHODS
from .regimens import DoseGrid
from .scenario import Scenario, SolverSettings

METHOD_ALIASES = {"approx": "approximation", "optimal_control": "optimal", "pc": "piecewise"}

REFERENCE_G = (
    (1, 1, 1), (5, 1, 1), (1, 5, 1), (1, 1, 5), (5, 5, 1),
    (5, 1, 5), (1, 5, 5), (5, 5, 5), (1, 5, 0.5),
)

_TOP_KEYS = {
    "model", "pharmacodynamics", "initial_state", "alpha", "horizon", "period", "dose_grid", "G",
    "methods", "integrator", "solver", "output_dir", "workers",
}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = ""
        if source:
            where += f"{source}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line


@dataclass
class ScenarioConfig:
    scenario: Scenario
    G_list: list = field(default_factory=list)
    methods: tuple = METHODS
    output_dir: Path = Path("runs")
    workers: int = 1


def _node_lines(node, path=(), out=None):
    """Map key paths to 1-based source lines from a composed YAML node tree."""
    if out is None:
        out = {}
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _node_lines(v, path + (key,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _node_lines(v, path + (i,), out)
    return out


def _line(lines, *path):
    for n in range(len(path), -1, -1):
        if path[:n] in lines:
            return lines[path[:n]]
    return None


def _method_name(m: str) -> str:
    m = METHOD_ALIASES.get(m, m)
    if m not in METHODS:
        raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)} (or 'approx')")
    return m


def parse_config(text: str, source: str | None = None, base_dir: Path | None = None) -> ScenarioConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(f"YAML parse error: {exc.problem}", line, source) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1, source)
    lines = _node_lines(node) if node is not None else {}

    def fail(msg, *path):
        raise ConfigError(msg, _line(lines, *path), source)

    for key in data:
        if key not in _TOP_KEYS:
            fail(f"unknown key {key!r}", key)

    model = data.get("model") or {}
    known = {f.name for f in fields(ModelParameters)}
    for key in model:
        if key not in known:
            fail(f"unknown model parameter {key!r}", "model", key)
    ic = data.get("initial_state")
    if ic is not None:
        if not isinstance(ic, dict) or set(ic) - {"M", "T_C", "N", "T_R"}:
            fail("initial_state must map M, T_C, N, T_R to values", "initial_state")
        model = dict(model)
        for k, pk in (("M", "M0"), ("T_C", "T_C0"), ("N", "N0"), ("T_R", "T_R0")):
            if k in ic:
                model[pk] = ic[k]
    try:
        params = ModelParameters(**{k: float(v) for k, v in model.items()})
    except (ValidationError, TypeError, ValueError) as exc:
        bad = next((k for k in model if k in str(exc)), None)
        fail(f"invalid model parameters: {exc}", "model", *((bad,) if bad else ()))

    pdd = data.get("pharmacodynamics") or {}
    for key in pdd:
        if key not in ("phi", "psi", "u_max"):
            fail(f"unknown pharmacodynamics key {key!r}", "pharmacodynamics", key)
    try:
        pd = PharmacodynamicsParameters(**{k: tuple(v) for k, v in pdd.items()})
    except (ValidationError, TypeError, ValueError) as exc:
        fail(f"invalid pharmacodynamics: {exc}", "pharmacodynamics")

    grid_data = data.get("dose_grid")
    grid = DoseGrid()
    if grid_data is not None:
        try:
            if isinstance(grid_data, dict):
                if "fractions" in grid_data:
                    grid = DoseGrid.from_fractions(pd.u_max, grid_data["fractions"])
                else:
                    grid = DoseGrid((grid_data["u1"], grid_data["u2"], grid_data["u3"]))
            else:
                grid = DoseGrid(tuple(grid_data))
        except (ValidationError, KeyError, TypeError) as exc:
            fail(f"invalid dose_grid: {exc}", "dose_grid")

    try:
        integ = IntegratorSettings(**(data.get("integrator") or {}))
    except (TypeError, ValueError) as exc:
        fail(f"invalid integrator settings: {exc}", "integrator")
    try:
        solver = SolverSettings(**(data.get("solver") or {}))
    except (TypeError, ValueError) as exc:
        fail(f"invalid solver settings: {exc}", "solver")

    try:
        scenario = Scenario(
            params=params,
            pd=pd,
            horizon=float(data.get("horizon", 360.0)),
            period=float(data.get("period", 90.0)),
            grid=grid,
            integrator=integ,
            solver=solver,
            alpha=None if data.get("alpha") is None else float(data["alpha"]),
        )
    except (ValidationError, ValueError) as exc:
        key = next((k for k in ("horizon", "period", "dose_grid", "initial_state") if k in str(exc)), None)
        fail(f"invalid scenario: {exc}", *((key,) if key else ()))

    G_list = []
    for i, G in enumerate(data.get("G") or []):
        if not isinstance(G, (list, tuple)) or len(G) != 3:
            fail("each G entry must be a list of three numbers", "G", i)
        try:
            G = tuple(float(g) for g in G)
            scenario.weights_for(G)
        except (TypeError, ValueError) as exc:
            fail(f"invalid G vector: {exc}", "G", i)
        G_list.append(G)

    methods = data.get("methods", list(METHODS))
    try:
        methods = tuple(_method_name(m) for m in methods)
    except ValueError as exc:
        fail(str(exc), "methods")

    out_dir = Path(data.get("output_dir", "runs"))
    if base_dir is not None and not out_dir.is_absolute():
        out_dir = base_dir / out_dir
    workers = int(data.get("workers", 1))
    if workers < 1:
        fail("workers must be at least 1", "workers")
    return ScenarioConfig(scenario, G_list, methods, out_dir, workers)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, str(path)) from None
    return parse_config(text, str(path), path.parent)


def default_config_text(G_list=REFERENCE_G, methods=METHODS) -> str:
    """A complete config document with every default written out."""
    p = ModelParameters()
    q = PharmacodynamicsParameters()
    grid = DoseGrid()
    doc = {
        "model": {f.name: getattr(p, f.name) for f in fields(p) if f.name not in ("M0", "T_C0", "N0", "T_R0")},
        "pharmacodynamics": {"phi": list(q.phi), "psi": list(q.psi), "u_max": list(q.u_max)},
        "initial_state": {"M": p.M0, "T_C": p.T_C0, "N": p.N0, "T_R": p.T_R0},
        "horizon": 360.0,
        "period": 90.0,
        "dose_grid": {"u1": list(grid.levels[0]), "u2": list(grid.levels[1]), "u3": list(grid.levels[2])},
        "G": [list(map(float, G)) for G in G_list],
        "methods": list(methods),
        "integrator": {"rtol": 1e-10, "atol": 1e-10},
        "solver": {"max_iter": SolverSettings().max_iter, "tol": SolverSettings().tol,
                   "mesh": SolverSettings().mesh},
        "output_dir": "runs",
        "workers": 1,
    }
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)
