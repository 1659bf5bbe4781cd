"""Adaptive Dormand-Prince 5(4) integration of the treated system.

The state is augmented with the running integrals of M and of each dose, so
the objective's integral term is accumulated under the same error control
as the populations.  Regimens are integrated segment by segment: every dose
switch (and every node of a sampled control) is a hard breakpoint, and each
segment starts from a step size chosen only from its own initial data.  A
simulation split at a breakpoint therefore reproduces the unsplit one
bit-for-bit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .dynamics import (
    ModelParameters,
    PatientState,
    PharmacodynamicsParameters,
    STATE_NAMES,
    rhs_kernel,
)

N_STATE = 4
N_AUG = 8  # M, T_C, N, T_R, int M, int u1, int u2, int u3

OK = 0
STEP_UNDERFLOW = 1
DIVERGED = 2
CAPACITY = 3
MAX_STEPS = 4


class IntegrationError(RuntimeError):
    """Step-size underflow or too many steps; ``time`` is where it happened."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class DivergenceError(IntegrationError):
    """The solution left the finite range."""


@dataclass(frozen=True)
class IntegratorSettings:
    rtol: float = 1e-10
    atol: float = 1e-10
    max_step: float = math.inf
    breakpoints: tuple = ()
    max_steps_per_segment: int = 1_000_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("integrator tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in self.breakpoints))


ORACLE_SETTINGS = IntegratorSettings(rtol=1e-12, atol=1e-12)


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = np.array([
    [0, 0, 0, 0, 0],
    [1 / 5, 0, 0, 0, 0],
    [3 / 40, 9 / 40, 0, 0, 0],
    [44 / 45, -56 / 15, 32 / 9, 0, 0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
])
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_E = np.array([-71 / 57600, 0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# Shampine's free quartic interpolant: y(t0 + s h) = y0 + h K^T P [s, s^2, s^3, s^4]
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


@njit(cache=True)
def _aug_rhs(t, y, t0, dt, ua, ub, p, phi, psi, u, out):
    s = (t - t0) / dt if dt > 0 else 0.0
    for i in range(3):
        u[i] = ua[i] + (ub[i] - ua[i]) * s
    rhs_kernel(y, u, p, phi, psi, out)
    out[4] = y[0]
    out[5] = u[0]
    out[6] = u[1]
    out[7] = u[2]


@njit(cache=True)
def _rms_norm(v, y0, y1, rtol, atol):
    acc = 0.0
    n = v.shape[0]
    for i in range(n):
        sc = atol + rtol * max(abs(y0[i]), abs(y1[i]))
        r = v[i] / sc
        acc += r * r
    return math.sqrt(acc / n)


@njit(cache=True)
def _initial_step(t0, y0, f0, t1, ua, ub, p, phi, psi, rtol, atol, hmax, u, work_y, work_f):
    """Hairer-Wanner starting step for a 5th-order method."""
    n = y0.shape[0]
    dt = t1 - t0
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y0[i])
        d0 += (y0[i] / sc) ** 2
        d1 += (f0[i] / sc) ** 2
    d0 = math.sqrt(d0 / n)
    d1 = math.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, dt)
    for i in range(n):
        work_y[i] = y0[i] + h0 * f0[i]
    _aug_rhs(t0 + h0, work_y, t0, dt, ua, ub, p, phi, psi, u, work_f)
    d2 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(y0[i])
        d2 += ((work_f[i] - f0[i]) / sc) ** 2
    d2 = math.sqrt(d2 / n) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 5.0)
    return min(100.0 * h0, h1, hmax, dt)


@njit(cache=True)
def integrate_segment(y, t0, t1, ua, ub, p, phi, psi, rtol, atol, hmax, max_steps,
                      record, rec_t, rec_h, rec_y, rec_q, nrec):
    """Advance the augmented state ``y`` in place from ``t0`` to ``t1``.

    The dose varies linearly from ``ua`` at ``t0`` to ``ub`` at ``t1``.  If
    ``record`` is true, each accepted step's start time, size, start state
    and interpolation coefficients are appended at position ``nrec``.
    Returns ``(status, nrec, t)`` where ``t`` is the time reached.
    """
    n = y.shape[0]
    dt = t1 - t0
    if dt <= 0.0:
        return OK, nrec, t0
    K = np.empty((7, n))
    ytmp = np.empty(n)
    ynew = np.empty(n)
    err = np.empty(n)
    u = np.empty(3)
    f = np.empty(n)
    _aug_rhs(t0, y, t0, dt, ua, ub, p, phi, psi, u, f)
    for i in range(n):
        K[0, i] = f[i]
    h = _initial_step(t0, y, f, t1, ua, ub, p, phi, psi, rtol, atol, hmax, u, ytmp, err)
    t = t0
    steps = 0
    cap = rec_t.shape[0]
    while t < t1:
        if steps >= max_steps:
            return MAX_STEPS, nrec, t
        min_step = 10.0 * abs(np.nextafter(t, math.inf) - t)
        if h < min_step:
            return STEP_UNDERFLOW, nrec, t
        last = False
        if t + h >= t1 or t + 1.0000001 * h >= t1:
            h = t1 - t
            last = True
        # stages
        for s in range(1, 6):
            for i in range(n):
                acc = 0.0
                for j in range(s):
                    acc += _A[s, j] * K[j, i]
                ytmp[i] = y[i] + h * acc
            _aug_rhs(t + _C[s] * h, ytmp, t0, dt, ua, ub, p, phi, psi, u, f)
            for i in range(n):
                K[s, i] = f[i]
        for i in range(n):
            acc = 0.0
            for j in range(6):
                acc += _B[j] * K[j, i]
            ynew[i] = y[i] + h * acc
        tnew = t1 if last else t + h
        _aug_rhs(tnew, ynew, t0, dt, ua, ub, p, phi, psi, u, f)
        finite = True
        for i in range(n):
            K[6, i] = f[i]
            if not (math.isfinite(ynew[i]) and math.isfinite(f[i])):
                finite = False
        if not finite:
            return DIVERGED, nrec, t
        for i in range(n):
            acc = 0.0
            for j in range(7):
                acc += _E[j] * K[j, i]
            err[i] = h * acc
        en = _rms_norm(err, y, ynew, rtol, atol)
        if en <= 1.0:
            if record:
                if nrec >= cap:
                    return CAPACITY, nrec, t
                rec_t[nrec] = t
                rec_h[nrec] = h
                for i in range(n):
                    rec_y[nrec, i] = y[i]
                    for k in range(4):
                        acc = 0.0
                        for j in range(7):
                            acc += K[j, i] * _P[j, k]
                        rec_q[nrec, i, k] = h * acc
                nrec += 1
            if en == 0.0:
                fac = _MAX_FACTOR
            else:
                fac = min(_MAX_FACTOR, _SAFETY * en ** (-0.2))
            t = tnew
            for i in range(n):
                y[i] = ynew[i]
                K[0, i] = K[6, i]
            h = min(h * fac, hmax)
            steps += 1
        else:
            h = h * max(_MIN_FACTOR, _SAFETY * en ** (-0.2))
    return OK, nrec, t


@njit(cache=True)
def integrate_segments(y, seg_t, seg_ua, seg_ub, p, phi, psi, rtol, atol, hmax, max_steps,
                       record, rec_t, rec_h, rec_y, rec_q, seg_start):
    """Integrate consecutive segments ``[seg_t[k], seg_t[k+1]]`` with linear doses
    ``seg_ua[k] -> seg_ub[k]``.  ``seg_start[k]`` receives the index of the first
    recorded step of segment k."""
    nrec = 0
    for k in range(seg_t.shape[0] - 1):
        seg_start[k] = nrec
        status, nrec, t = integrate_segment(
            y, seg_t[k], seg_t[k + 1], seg_ua[k], seg_ub[k], p, phi, psi,
            rtol, atol, hmax, max_steps, record, rec_t, rec_h, rec_y, rec_q, nrec)
        if status != OK:
            return status, nrec, t
    seg_start[seg_t.shape[0] - 1] = nrec
    return OK, nrec, seg_t[seg_t.shape[0] - 1]


@njit(cache=True)
def dense_eval(rec_t, rec_h, rec_y, rec_q, nrec, t, hint, out):
    """Evaluate the recorded dense output at ``t``; ``hint`` is a starting step
    index for the search.  Returns the index of the step used."""
    k = hint
    if k >= nrec:
        k = nrec - 1
    if k < 0:
        k = 0
    while k > 0 and t < rec_t[k]:
        k -= 1
    while k < nrec - 1 and t >= rec_t[k + 1]:
        k += 1
    s = (t - rec_t[k]) / rec_h[k]
    n = out.shape[0]
    for i in range(n):
        acc = 0.0
        sp = s
        for j in range(4):
            acc += rec_q[k, i, j] * sp
            sp *= s
        out[i] = rec_y[k, i] + acc
    return k


# ---------------------------------------------------------------------------
# Trajectory
# ---------------------------------------------------------------------------

@dataclass
class DenseOutput:
    """Per-step interpolation data of a recorded run."""

    t: np.ndarray
    h: np.ndarray
    y: np.ndarray
    q: np.ndarray
    seg_start: np.ndarray

    def __call__(self, t) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((ts.size, self.y.shape[1]))
        buf = np.empty(self.y.shape[1])
        k = 0
        n = self.t.shape[0]
        end = self.t[-1] + self.h[-1]
        for j, tj in enumerate(ts):
            if tj >= end:
                # past the last step start: evaluate at the last step's end
                k = dense_eval(self.t, self.h, self.y, self.q, n, tj, n - 1, buf)
            else:
                k = dense_eval(self.t, self.h, self.y, self.q, n, tj, k, buf)
            out[j] = buf
        return out if np.ndim(t) else out[0]


@dataclass
class Trajectory:
    """Simulated populations and running integrals at every accepted step.

    ``integrals`` holds the running values of the integral of M and of each
    dose; combine them with objective weights via ``accumulated_integral``.
    """

    times: np.ndarray
    states: np.ndarray
    integrals: np.ndarray
    doses: np.ndarray
    dense: DenseOutput | None = field(default=None, repr=False)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def final_state(self) -> PatientState:
        return PatientState.from_array(self.states[-1])

    @property
    def terminal_augmented(self) -> np.ndarray:
        return np.concatenate([self.states[-1], self.integrals[-1]])

    def accumulated_integral(self, weights) -> np.ndarray:
        """Running value of the integral of ``beta M + sum gamma_i u_i``."""
        return (weights.beta * self.integrals[:, 0]
                + weights.gamma[0] * self.integrals[:, 1]
                + weights.gamma[1] * self.integrals[:, 2]
                + weights.gamma[2] * self.integrals[:, 3])

    def to_csv(self, path, weights=None) -> Path:
        """Write ``t, M, T_C, N, T_R, u1, u2, u3, running_integral`` at full precision."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        running = (self.accumulated_integral(weights) if weights is not None
                   else np.full(self.times.shape, np.nan))
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *STATE_NAMES, "u1", "u2", "u3", "running_integral"])
            for i in range(self.times.shape[0]):
                row = [self.times[i], *self.states[i], *self.doses[i], running[i]]
                w.writerow([repr(float(v)) for v in row])
        return path


def read_trajectory_csv(path) -> dict:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {name: np.asarray(data[name]) for name in data.dtype.names}


def _segments(regimen, horizon: float, settings: IntegratorSettings):
    seg_t, ua, ub = regimen.segments(horizon)
    if settings.breakpoints:
        extra = [b for b in settings.breakpoints if 0.0 < b < horizon]
        if extra:
            seg_t, ua, ub = _insert_breakpoints(seg_t, ua, ub, extra)
    return seg_t, ua, ub


def _insert_breakpoints(seg_t, ua, ub, extra):
    new_t = [seg_t[0]]
    new_a = []
    new_b = []
    extra = sorted(set(extra))
    for k in range(len(seg_t) - 1):
        t0, t1 = seg_t[k], seg_t[k + 1]
        cuts = [b for b in extra if t0 < b < t1]
        prev_t, prev_u = t0, ua[k]
        for b in cuts:
            ub_k = ua[k] + (ub[k] - ua[k]) * (b - t0) / (t1 - t0)
            new_a.append(prev_u)
            new_b.append(ub_k)
            new_t.append(b)
            prev_t, prev_u = b, ub_k
        new_a.append(prev_u)
        new_b.append(ub[k])
        new_t.append(t1)
    return np.array(new_t), np.array(new_a), np.array(new_b)


def _raise_status(status: int, t: float):
    if status == STEP_UNDERFLOW:
        raise IntegrationError(f"step size underflow at t={t}", t)
    if status == DIVERGED:
        raise DivergenceError(f"non-finite state at t={t}", t)
    if status == MAX_STEPS:
        raise IntegrationError(f"maximum number of steps exceeded at t={t}", t)
    raise IntegrationError(f"integration failed with status {status} at t={t}", t)


def initial_augmented(x0) -> np.ndarray:
    if isinstance(x0, PatientState):
        x0 = x0.as_array()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (4,) or not np.all(np.isfinite(x0)) or np.any(x0 <= 0):
        raise ValueError(f"initial state must be 4 strictly positive finite values, got {x0}")
    y = np.zeros(N_AUG)
    y[:4] = x0
    return y


def simulate(x0, regimen, horizon: float, p: ModelParameters, q: PharmacodynamicsParameters,
             settings: IntegratorSettings = IntegratorSettings(), *, dense: bool = False) -> Trajectory:
    """Integrate the treated system over ``[0, horizon]`` under ``regimen``."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    y = initial_augmented(x0)
    regimen.validate(q, horizon)
    if horizon == 0:
        u0 = regimen.dose_at(0.0) if regimen.covers(0.0) else np.zeros(3)
        return Trajectory(np.zeros(1), y[None, :4].copy(), y[None, 4:].copy(), np.asarray(u0)[None, :])
    seg_t, ua, ub = _segments(regimen, horizon, settings)
    pa, phi, psi = p.as_array(), q.phi_array, q.psi_array
    cap = max(64, 8 * len(seg_t))
    while True:
        yw = y.copy()
        rec_t = np.empty(cap)
        rec_h = np.empty(cap)
        rec_y = np.empty((cap, N_AUG))
        rec_q = np.empty((cap, N_AUG, 4))
        seg_start = np.empty(len(seg_t), dtype=np.int64)
        status, nrec, t = integrate_segments(
            yw, seg_t, ua, ub, pa, phi, psi, settings.rtol, settings.atol, settings.max_step,
            settings.max_steps_per_segment, True, rec_t, rec_h, rec_y, rec_q, seg_start)
        if status == CAPACITY:
            cap *= 4
            continue
        if status != OK:
            _raise_status(status, t)
        break
    times = np.append(rec_t[:nrec], seg_t[-1])
    ys = np.vstack([rec_y[:nrec], yw])
    if np.any(ys[:, :4] <= 0):
        k = int(np.argmax(np.any(ys[:, :4] <= 0, axis=1)))
        raise DivergenceError(f"population left the positive orthant at t={times[k]}", times[k])
    doses = regimen.dose_at_many(times)
    dense_out = None
    if dense:
        dense_out = DenseOutput(rec_t[:nrec].copy(), rec_h[:nrec].copy(), rec_y[:nrec].copy(),
                                rec_q[:nrec].copy(), seg_start)
    return Trajectory(times, ys[:, :4].copy(), ys[:, 4:].copy(), doses, dense_out)


def simulate_terminal(x0, regimen, horizon: float, p: ModelParameters, q: PharmacodynamicsParameters,
                      settings: IntegratorSettings = IntegratorSettings()) -> np.ndarray:
    """Augmented state ``(M, T_C, N, T_R, int M, int u1, int u2, int u3)`` at ``horizon``
    without recording the path."""
    y = initial_augmented(x0)
    regimen.validate(q, horizon)
    seg_t, ua, ub = _segments(regimen, horizon, settings)
    dummy_t = np.empty(0)
    dummy_y = np.empty((0, N_AUG))
    dummy_q = np.empty((0, N_AUG, 4))
    seg_start = np.empty(len(seg_t), dtype=np.int64)
    status, _, t = integrate_segments(
        y, seg_t, ua, ub, p.as_array(), q.phi_array, q.psi_array, settings.rtol, settings.atol,
        settings.max_step, settings.max_steps_per_segment, False, dummy_t, dummy_t, dummy_y, dummy_q,
        seg_start)
    if status != OK:
        _raise_status(status, t)
    return y


def steady_state_check(traj: Trajectory, window: float, tol: float) -> dict:
    """Per population: is the max relative change over the trailing ``window`` below ``tol``?

    The relative change is ``(max - min) / |value at the end|`` over the window.
    """
    if traj.horizon <= window:
        raise ValueError(f"trajectory horizon {traj.horizon} must exceed window {window}")
    t_end = traj.times[-1]
    mask = traj.times >= t_end - window
    if traj.dense is not None:
        ts = np.linspace(t_end - window, t_end, 201)
        vals = traj.dense(ts)[:, :4]
    else:
        vals = traj.states[mask]
    out = {}
    for j, name in enumerate(STATE_NAMES):
        col = vals[:, j]
        ref = abs(col[-1])
        change = (col.max() - col.min()) / ref if ref > 0 else math.inf
        out[name] = bool(change < tol)
    return out
