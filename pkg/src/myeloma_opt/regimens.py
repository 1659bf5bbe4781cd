"""Dosing regimens: constant, piecewise-constant on a period grid, and
mesh-sampled controls, plus the discrete dose grids and the per-period
averaging/rounding approximation."""
from __future__ import annotations

import csv
import json
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .dynamics import PharmacodynamicsParameters, ValidationError

_TIME_SLACK = 1e-9


@dataclass(frozen=True)
class DoseGrid:
    """Allowed concentration levels (ng/mL) for each of the three drugs."""

    levels: tuple = (
        (0.0, 51.2325, 102.4650, 153.6975, 204.9300),
        (0.0, 0.8831, 1.7663, 2.6494, 3.5325),
        (0.0, 90.0),
    )

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(tuple(float(v) for v in lv) for lv in self.levels))
        if len(self.levels) != 3:
            raise ValidationError("dose grid needs level lists for exactly 3 drugs")
        for i, lv in enumerate(self.levels, 1):
            if not lv:
                raise ValidationError(f"dose grid for drug {i} is empty")
            if any(b <= a for a, b in zip(lv, lv[1:])):
                raise ValidationError(f"dose levels for drug {i} must be strictly increasing: {lv}")
            if lv[0] < 0:
                raise ValidationError(f"dose levels for drug {i} must be non-negative")

    @classmethod
    def from_fractions(cls, u_max: Sequence[float], fractions=(0.0, 0.25, 0.5, 0.75, 1.0)) -> "DoseGrid":
        return cls(tuple(tuple(f * m for f in fractions) for m in u_max))

    def validate(self, q: PharmacodynamicsParameters) -> None:
        for i, (lv, m) in enumerate(zip(self.levels, q.u_max), 1):
            if lv[-1] > m * (1 + 1e-12):
                raise ValidationError(f"dose level {lv[-1]} for drug {i} exceeds u_max={m}")

    @property
    def shape(self) -> tuple:
        return tuple(len(lv) for lv in self.levels)

    def nearest(self, drug: int, value: float) -> float:
        """Closest allowed level; exact ties go to the lower level."""
        lv = self.levels[drug]
        best = lv[0]
        best_d = abs(value - best)
        for v in lv[1:]:
            d = abs(value - v)
            if d < best_d:
                best, best_d = v, d
        return best

    def max_gap(self, drug: int) -> float:
        lv = self.levels[drug]
        return max((b - a for a, b in zip(lv, lv[1:])), default=0.0)


def enumerate_grid(grid: DoseGrid) -> np.ndarray:
    """All dose vectors of the grid in lexicographic order, shape ``(n, 3)``."""
    return np.array(list(itertools.product(*grid.levels)), dtype=float).reshape(-1, 3)


class Regimen:
    """Base class.  Subclasses describe u(t) on their domain."""

    kind = "abstract"

    def dose_at(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def covers(self, t: float) -> bool:
        raise NotImplementedError

    def segments(self, horizon: float):
        """Breakpoint times and linear dose end values ``(seg_t, ua, ub)``."""
        raise NotImplementedError

    def validate(self, q: PharmacodynamicsParameters, horizon: float) -> None:
        raise NotImplementedError

    def dose_at_many(self, times) -> np.ndarray:
        return np.array([self.dose_at(float(t)) for t in times]).reshape(-1, 3)

    def _check_time(self, t):
        if not self.covers(t):
            raise ValueError(f"t={t} outside the regimen's domain")


def _check_bounds(doses: np.ndarray, q: PharmacodynamicsParameters):
    umax = q.u_max_array
    if not np.all(np.isfinite(doses)):
        raise ValidationError("regimen contains non-finite doses")
    if np.any(doses < 0) or np.any(doses > umax * (1 + 1e-12)):
        raise ValidationError(f"regimen doses outside [0, u_max={list(q.u_max)}]")


@dataclass(frozen=True, eq=False)
class Constant(Regimen):
    dose: np.ndarray

    kind = "constant"

    def __post_init__(self):
        object.__setattr__(self, "dose", np.asarray(self.dose, dtype=float).reshape(3))

    def __eq__(self, other):
        return isinstance(other, Constant) and np.array_equal(self.dose, other.dose)

    def covers(self, t):
        return t >= 0

    def dose_at(self, t):
        self._check_time(t)
        return self.dose.copy()

    def segments(self, horizon):
        return np.array([0.0, horizon]), self.dose[None, :].copy(), self.dose[None, :].copy()

    def validate(self, q, horizon):
        _check_bounds(self.dose, q)

    def as_piecewise(self, period: float, n_periods: int) -> "PiecewiseConstant":
        return PiecewiseConstant(period, np.tile(self.dose, (n_periods, 1)))


@dataclass(frozen=True, eq=False)
class PiecewiseConstant(Regimen):
    """Dose ``doses[k]`` on ``[k*period, (k+1)*period)``; the last period is closed."""

    period: float
    doses: np.ndarray

    kind = "piecewise"

    def __post_init__(self):
        d = np.asarray(self.doses, dtype=float)
        if d.ndim != 2 or d.shape[1] != 3 or d.shape[0] == 0:
            raise ValidationError(f"piecewise doses must have shape (n_periods, 3), got {d.shape}")
        if not self.period > 0:
            raise ValidationError("period length must be positive")
        object.__setattr__(self, "doses", d)
        object.__setattr__(self, "period", float(self.period))

    def __eq__(self, other):
        return (isinstance(other, PiecewiseConstant) and self.period == other.period
                and np.array_equal(self.doses, other.doses))

    @property
    def n_periods(self) -> int:
        return self.doses.shape[0]

    @property
    def end(self) -> float:
        return self.period * self.n_periods

    def covers(self, t):
        return -_TIME_SLACK <= t <= self.end + _TIME_SLACK

    def dose_at(self, t):
        self._check_time(t)
        k = min(max(int(np.floor(t / self.period)), 0), self.n_periods - 1)
        return self.doses[k].copy()

    def switch_times(self) -> np.ndarray:
        return self.period * np.arange(self.n_periods + 1, dtype=float)

    def segments(self, horizon):
        if abs(horizon - self.end) > _TIME_SLACK * max(1.0, horizon):
            raise ValidationError(
                f"periods tile [0, {self.end}] but the horizon is {horizon}")
        seg_t = self.switch_times()
        seg_t[-1] = horizon
        return seg_t, self.doses.copy(), self.doses.copy()

    def validate(self, q, horizon):
        _check_bounds(self.doses, q)
        if abs(horizon - self.end) > _TIME_SLACK * max(1.0, horizon):
            raise ValidationError(
                f"{self.n_periods} periods of {self.period} days do not tile [0, {horizon}]")


@dataclass(frozen=True, eq=False)
class Sampled(Regimen):
    """Piecewise-linear control through ``values[k]`` at ``mesh[k]``."""

    mesh: np.ndarray
    values: np.ndarray

    kind = "sampled"

    def __post_init__(self):
        mesh = np.asarray(self.mesh, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if mesh.ndim != 1 or mesh.size < 2:
            raise ValidationError("sampled regimen needs at least two mesh nodes")
        if vals.shape != (mesh.size, 3):
            raise ValidationError(f"values must have shape ({mesh.size}, 3), got {vals.shape}")
        if np.any(np.diff(mesh) <= 0):
            raise ValidationError("mesh must be strictly increasing")
        object.__setattr__(self, "mesh", mesh)
        object.__setattr__(self, "values", vals)

    def __eq__(self, other):
        return (isinstance(other, Sampled) and np.array_equal(self.mesh, other.mesh)
                and np.array_equal(self.values, other.values))

    def covers(self, t):
        return self.mesh[0] - _TIME_SLACK <= t <= self.mesh[-1] + _TIME_SLACK

    def dose_at(self, t, u_max=None):
        self._check_time(t)
        k = int(np.searchsorted(self.mesh, t, side="right")) - 1
        k = min(max(k, 0), self.mesh.size - 2)
        t0, t1 = self.mesh[k], self.mesh[k + 1]
        if t == t0:
            u = self.values[k].copy()
        elif t == t1:
            u = self.values[k + 1].copy()
        else:
            s = (t - t0) / (t1 - t0)
            u = self.values[k] + (self.values[k + 1] - self.values[k]) * s
        u = np.maximum(u, 0.0)
        if u_max is not None:
            u = np.minimum(u, u_max)
        return u

    def segments(self, horizon):
        if self.mesh[0] != 0.0 or self.mesh[-1] < horizon - _TIME_SLACK:
            raise ValidationError(f"sampled mesh [{self.mesh[0]}, {self.mesh[-1]}] does not cover [0, {horizon}]")
        inside = self.mesh[self.mesh < horizon - _TIME_SLACK]
        seg_t = np.append(inside, horizon)
        nodes = np.array([self.dose_at(min(t, self.mesh[-1])) for t in seg_t])
        return seg_t, nodes[:-1].copy(), nodes[1:].copy()

    def validate(self, q, horizon):
        _check_bounds(self.values, q)
        if self.mesh[0] != 0.0 or self.mesh[-1] < horizon - _TIME_SLACK:
            raise ValidationError(f"sampled mesh does not cover [0, {horizon}]")

    def period_means(self, period: float, horizon: float) -> np.ndarray:
        """Exact mean of the piecewise-linear control over each period."""
        n = _n_periods(period, horizon)
        out = np.empty((n, 3))
        for k in range(n):
            a, b = k * period, (k + 1) * period
            if k == n - 1:
                b = horizon
            inner = self.mesh[(self.mesh > a) & (self.mesh < b)]
            ts = np.concatenate([[a], inner, [b]])
            us = np.array([self.dose_at(t) for t in ts])
            area = (0.5 * (us[1:] + us[:-1]) * np.diff(ts)[:, None]).sum(axis=0)
            out[k] = area / (b - a)
        return out


def _n_periods(period: float, horizon: float) -> int:
    n = int(round(horizon / period))
    if n < 1 or abs(n * period - horizon) > _TIME_SLACK * max(1.0, horizon):
        raise ValidationError(f"horizon {horizon} is not a whole number of {period}-day periods")
    return n


def period_means(regimen: Regimen, period: float, horizon: float) -> np.ndarray:
    n = _n_periods(period, horizon)
    if isinstance(regimen, Constant):
        return np.tile(regimen.dose, (n, 1))
    if isinstance(regimen, PiecewiseConstant):
        if regimen.period == period and regimen.n_periods == n:
            return regimen.doses.copy()
        mesh = np.unique(np.concatenate([regimen.switch_times(), period * np.arange(n + 1)]))
        mesh = mesh[mesh <= horizon + _TIME_SLACK]
        # the dose is constant between consecutive boundaries, so midpoints are exact
        means = np.zeros((n, 3))
        for k in range(n):
            a, b = k * period, (k + 1) * period
            pts = mesh[(mesh >= a) & (mesh <= b)]
            for t0, t1 in zip(pts, pts[1:]):
                means[k] += regimen.dose_at(0.5 * (t0 + t1)) * (t1 - t0)
            means[k] /= period
        return means
    if isinstance(regimen, Sampled):
        return regimen.period_means(period, horizon)
    raise TypeError(f"unsupported regimen type {type(regimen).__name__}")


def pc_approximate(regimen: Regimen, period: float, grid: DoseGrid, horizon: float | None = None) -> PiecewiseConstant:
    """Average each drug over every period, then snap to the nearest grid level."""
    if any(len(lv) == 0 for lv in grid.levels):
        raise ValidationError("empty dose grid")
    if horizon is None:
        horizon = float(regimen.mesh[-1]) if isinstance(regimen, Sampled) else getattr(regimen, "end", None)
        if horizon is None:
            raise ValueError("horizon required for constant regimens")
    means = period_means(regimen, period, horizon)
    doses = np.array([[grid.nearest(i, m[i]) for i in range(3)] for m in means])
    return PiecewiseConstant(period, doses)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def regimen_to_dict(regimen: Regimen) -> dict:
    if isinstance(regimen, Constant):
        return {"kind": "constant", "dose": [float(v) for v in regimen.dose]}
    if isinstance(regimen, PiecewiseConstant):
        return {"kind": "piecewise", "period": regimen.period,
                "doses": [[float(v) for v in row] for row in regimen.doses]}
    if isinstance(regimen, Sampled):
        return {"kind": "sampled", "interpolation": "linear",
                "mesh": [float(v) for v in regimen.mesh],
                "values": [[float(v) for v in row] for row in regimen.values]}
    raise TypeError(f"unsupported regimen type {type(regimen).__name__}")


def regimen_from_dict(data: dict) -> Regimen:
    if not isinstance(data, dict) or "kind" not in data:
        raise ValidationError("regimen must be a mapping with a 'kind' entry")
    kind = data["kind"]
    try:
        if kind == "constant":
            return Constant(np.asarray(data["dose"], dtype=float))
        if kind == "piecewise":
            return PiecewiseConstant(float(data["period"]), np.asarray(data["doses"], dtype=float))
        if kind == "sampled":
            if data.get("interpolation", "linear") != "linear":
                raise ValidationError("only linear interpolation is supported")
            return Sampled(np.asarray(data["mesh"], dtype=float), np.asarray(data["values"], dtype=float))
    except KeyError as exc:
        raise ValidationError(f"regimen of kind {kind!r} is missing field {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed {kind} regimen: {exc}") from None
    raise ValidationError(f"unknown regimen kind {kind!r}")


def regimen_to_csv(regimen: Regimen, path) -> Path:
    """Per-period (or per-node) dose table."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        if isinstance(regimen, PiecewiseConstant):
            w.writerow(["t_start", "t_end", "u1", "u2", "u3"])
            for k, row in enumerate(regimen.doses):
                w.writerow([repr(k * regimen.period), repr((k + 1) * regimen.period), *(repr(float(v)) for v in row)])
        elif isinstance(regimen, Sampled):
            w.writerow(["t", "u1", "u2", "u3"])
            for t, row in zip(regimen.mesh, regimen.values):
                w.writerow([repr(float(t)), *(repr(float(v)) for v in row)])
        else:
            w.writerow(["u1", "u2", "u3"])
            w.writerow([repr(float(v)) for v in regimen.dose])
    return path


def _regimen_from_csv(path: Path) -> Regimen:
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty regimen table")
    cols = set(rows[0])
    try:
        if {"t_start", "t_end"} <= cols:
            starts = np.array([float(r["t_start"]) for r in rows])
            ends = np.array([float(r["t_end"]) for r in rows])
            doses = np.array([[float(r["u1"]), float(r["u2"]), float(r["u3"])] for r in rows])
            lengths = ends - starts
            if starts[0] != 0.0 or np.any(starts[1:] != ends[:-1]) or np.any(lengths <= 0):
                raise ValidationError(f"{path}: periods must be contiguous and start at t=0")
            if np.any(np.abs(lengths - lengths[0]) > _TIME_SLACK * max(1.0, lengths[0])):
                raise ValidationError(f"{path}: all periods must have equal length")
            return PiecewiseConstant(float(lengths[0]), doses)
        if "t" in cols:
            return Sampled(np.array([float(r["t"]) for r in rows]),
                           np.array([[float(r["u1"]), float(r["u2"]), float(r["u3"])] for r in rows]))
        if len(rows) == 1:
            return Constant([float(rows[0]["u1"]), float(rows[0]["u2"]), float(rows[0]["u3"])])
    except KeyError as exc:
        raise ValidationError(f"{path}: missing column {exc}") from None
    raise ValidationError(f"{path}: unrecognised regimen table layout")


def load_regimen(path) -> Regimen:
    """Read a regimen from JSON/YAML (``regimen_to_dict`` layout) or a CSV dose table."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _regimen_from_csv(path)
    data = yaml.safe_load(path.read_text())
    return regimen_from_dict(data)


def save_regimen(regimen: Regimen, path) -> Path:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return regimen_to_csv(regimen, path)
    path.write_text(json.dumps(regimen_to_dict(regimen), indent=2))
    return path
