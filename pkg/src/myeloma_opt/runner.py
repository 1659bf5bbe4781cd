"""Batch execution over G vectors and methods, artifact files, results tables."""
from __future__ import annotations

import csv
import json
import logging
import math
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .dynamics import ValidationError
from .integrator import simulate
from .optimizers import (
    OptimizationResult,
    constant_results,
    evaluation_settings,
    optimize_approximation,
    optimize_control,
    piecewise_results,
)
from .optimizers.result import METHODS
from .regimens import regimen_to_csv, regimen_to_dict

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("G", "method", "J_min", "M_final", "T_C_final", "N_final", "T_R_final")


@dataclass
class TableRow:
    G: tuple
    method: str
    J_min: float
    M_final: float
    T_C_final: float
    N_final: float
    T_R_final: float
    error: str | None = None

    @classmethod
    def from_result(cls, r: OptimizationResult) -> "TableRow":
        fs = r.final_state
        return cls(tuple(r.G), r.method, r.J, fs.M, fs.T_C, fs.N, fs.T_R)

    @classmethod
    def failed(cls, G, method, message) -> "TableRow":
        nan = math.nan
        return cls(tuple(G), method, nan, nan, nan, nan, nan, message)


def format_G(G) -> str:
    return "(" + ",".join(f"{g:g}" for g in G) + ")"


def run_dir_name(G) -> str:
    return "G_" + "_".join(f"{g:g}" for g in G)


class ResultsTable:
    def __init__(self, rows=None):
        self.rows: list[TableRow] = list(rows or [])

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        if not isinstance(other, ResultsTable) or len(self) != len(other):
            return False
        for a, b in zip(self.rows, other.rows):
            if (a.G, a.method) != (b.G, b.method):
                return False
            for name in TABLE_COLUMNS[2:]:
                x, y = getattr(a, name), getattr(b, name)
                if not (x == y or (math.isnan(x) and math.isnan(y))):
                    return False
        return True

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TABLE_COLUMNS)
            for r in self.rows:
                w.writerow([format_G(r.G), r.method] + [repr(float(getattr(r, c))) for c in TABLE_COLUMNS[2:]])
        return path

    def to_text(self) -> str:
        header = ["Weights", "Method", "J_min", "M_final", "T_C,final", "N_final", "T_R,final"]
        body = []
        for r in self.rows:
            vals = [f"{getattr(r, c):.4f}" for c in TABLE_COLUMNS[2:]]
            body.append([f"G={format_G(r.G)}", r.method] + vals + ([f"FAILED: {r.error}"] if r.error else []))
        widths = [max(len(str(x)) for x in col) for col in zip(header, *[b[:7] for b in body])] if body else \
            [len(h) for h in header]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        lines.append("  ".join("-" * w for w in widths))
        for b in body:
            lines.append("  ".join(str(x).rjust(w) if i >= 2 else str(x).ljust(w)
                                   for i, (x, w) in enumerate(zip(b, widths))) + ("  " + b[7] if len(b) > 7 else ""))
        return "\n".join(lines) + "\n"

    def write_text(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_text())
        return path


def write_result(result: OptimizationResult, run_dir: Path, weights) -> Path:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "result.json").write_text(json.dumps(result.to_dict(), indent=2))
    (run_dir / "regimen.json").write_text(json.dumps(regimen_to_dict(result.regimen), indent=2))
    regimen_to_csv(result.regimen, run_dir / "regimen.csv")
    if result.trajectory is not None:
        result.trajectory.to_csv(run_dir / "trajectory.csv", weights)
    return run_dir


def run_scenario(cfg: ScenarioConfig, methods=None, out_dir=None) -> tuple[ResultsTable, int]:
    """Run every requested (G, method) cell; returns the table and an exit code."""
    methods = tuple(methods or cfg.methods)
    out_dir = Path(out_dir or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sc = cfg.scenario
    G_list = list(cfg.G_list)
    weights = [sc.weights_for(G) for G in G_list]
    cells: dict = {}

    def guarded(method, fn):
        try:
            return fn()
        except Exception as exc:  # a failed cell must not sink the batch
            log.error("%s failed: %s", method, exc)
            log.debug(traceback.format_exc())
            return exc

    if G_list and "constant" in methods:
        out = guarded("constant", lambda: constant_results(sc, weights))
        for i, G in enumerate(G_list):
            cells[(G, "constant")] = out if isinstance(out, Exception) else out[i]
    if G_list and "piecewise" in methods:
        out = guarded("piecewise", lambda: piecewise_results(sc, weights, cfg.workers))
        for i, G in enumerate(G_list):
            cells[(G, "piecewise")] = out if isinstance(out, Exception) else out[i]
    for G, w in zip(G_list, weights):
        sg = sc.with_weights(w)
        opt = None
        if "optimal" in methods or "approximation" in methods:
            opt = guarded("optimal", lambda: optimize_control(sg))
        if "optimal" in methods:
            cells[(G, "optimal")] = opt
        if "approximation" in methods:
            if isinstance(opt, Exception):
                cells[(G, "approximation")] = opt
            else:
                cells[(G, "approximation")] = guarded("approximation", lambda: optimize_approximation(sg, opt))

    table = ResultsTable()
    code = 0
    for G, w in zip(G_list, weights):
        for m in METHODS:
            if m not in methods:
                continue
            res = cells[(G, m)]
            if isinstance(res, Exception):
                table.rows.append(TableRow.failed(G, m, str(res)))
                code = 1
                continue
            write_result(res, out_dir / run_dir_name(G) / m, w)
            table.rows.append(TableRow.from_result(res))
    table.write_csv(out_dir / "results_table.csv")
    table.write_text(out_dir / "results_table.txt")
    return table, code


def table_from_runs(runs_dir) -> ResultsTable:
    """Rebuild the aggregate table from persisted ``result.json`` files."""
    runs_dir = Path(runs_dir)
    rows = []
    order = None
    csv_path = runs_dir / "results_table.csv"
    if csv_path.exists():
        with csv_path.open() as fh:
            order = [(row["G"], row["method"]) for row in csv.DictReader(fh)]
    for path in sorted(runs_dir.glob("G_*/*/result.json")):
        r = OptimizationResult.from_dict(json.loads(path.read_text()))
        rows.append(TableRow.from_result(r))
    if order is not None:
        rank = {key: i for i, key in enumerate(order)}
        rows.sort(key=lambda r: rank.get((format_G(r.G), r.method), len(rank)))
    else:
        rows.sort(key=lambda r: (r.G, METHODS.index(r.method)))
    return ResultsTable(rows)


def simulate_to_csv(cfg: ScenarioConfig, regimen, out_path, G=None):
    sc = cfg.scenario
    G = G or (cfg.G_list[0] if cfg.G_list else (1.0, 1.0, 1.0))
    w = sc.weights_for(G)
    try:
        regimen.validate(sc.pd, sc.horizon)
    except ValidationError:
        raise
    traj = simulate(sc.x0, regimen, sc.horizon, sc.params, sc.pd, evaluation_settings(sc))
    traj.to_csv(out_path, w)
    return traj
