"""Exhaustive search over constant and piecewise-constant grid regimens.

The piecewise search walks the period tree depth first.  The augmented
state (populations plus running integrals) at every prefix is kept, so each
tree node costs exactly one single-period integration.  Because the
augmented state does not depend on the objective weights, one traversal
scores any number of weight vectors at once.
"""
from __future__ import annotations

import itertools
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Sequence

import numpy as np
from numba import njit

from ..integrator import (
    N_AUG,
    OK,
    IntegrationError,
    initial_augmented,
    integrate_segment,
    simulate,
    simulate_terminal,
)
from ..objective import ObjectiveWeights, evaluate, objective_totals
from ..regimens import Constant, PiecewiseConstant, enumerate_grid
from ..scenario import Scenario
from .result import OptimizationResult

_NO_REC_T = np.empty(0)
_NO_REC_Y = np.empty((0, N_AUG))
_NO_REC_Q = np.empty((0, N_AUG, 4))


def evaluation_settings(scenario: Scenario):
    """Integrator settings with the period switch times as hard breakpoints, so
    every regimen is integrated on the same segment grid as the tree search."""
    return replace(scenario.integrator, breakpoints=scenario.switch_times)


@njit(cache=True)
def _leaf_block(y0, t0, t1, doses, p, phi, psi, rtol, atol, hmax, max_steps, out, status):
    e = np.empty(0)
    ey = np.empty((0, y0.shape[0]))
    eq = np.empty((0, y0.shape[0], 4))
    for c in range(doses.shape[0]):
        y = y0.copy()
        st, _, _ = integrate_segment(y, t0, t1, doses[c], doses[c], p, phi, psi, rtol, atol, hmax,
                                     max_steps, False, e, e, ey, eq, 0)
        status[c] = st
        for i in range(y.shape[0]):
            out[c, i] = y[i]


def _context(scenario: Scenario):
    s = scenario.integrator
    return dict(
        y0=initial_augmented(scenario.x0),
        p=scenario.params.as_array(),
        phi=scenario.pd.phi_array,
        psi=scenario.pd.psi_array,
        cands=enumerate_grid(scenario.grid),
        period=scenario.period,
        n_periods=scenario.n_periods,
        horizon=scenario.horizon,
        rtol=s.rtol,
        atol=s.atol,
        hmax=s.max_step,
        max_steps=s.max_steps_per_segment,
    )


def _period_bounds(ctx, level):
    t0 = level * ctx["period"]
    t1 = ctx["horizon"] if level == ctx["n_periods"] - 1 else (level + 1) * ctx["period"]
    return t0, t1


def _search_subtree(ctx, weights: Sequence[ObjectiveWeights], first: int | None):
    """Best (J, index tuple) per weight vector below first-period branch ``first``
    (all branches if None)."""
    cands = ctx["cands"]
    nc = cands.shape[0]
    n = ctx["n_periods"]
    best_J = [math.inf] * len(weights)
    best_idx: list = [None] * len(weights)
    counts = {"nodes": 0, "failed": 0}
    out = np.empty((nc, N_AUG))
    status = np.empty(nc, dtype=np.int64)

    def leaf(y, prefix, level):
        t0, t1 = _period_bounds(ctx, level)
        _leaf_block(y, t0, t1, cands, ctx["p"], ctx["phi"], ctx["psi"], ctx["rtol"], ctx["atol"],
                    ctx["hmax"], ctx["max_steps"], out, status)
        counts["nodes"] += nc
        ok = status == OK
        if not ok.all():
            counts["failed"] += int((~ok).sum())
        for wi, w in enumerate(weights):
            J = objective_totals(out, w)
            J[~ok] = math.inf
            j = int(np.argmin(J))
            if J[j] < best_J[wi]:
                best_J[wi] = float(J[j])
                best_idx[wi] = prefix + (j,)

    def rec(y, prefix, level):
        if level == n - 1:
            leaf(y, prefix, level)
            return
        t0, t1 = _period_bounds(ctx, level)
        branches = range(nc) if (level > 0 or first is None) else (first,)
        for c in branches:
            yc = y.copy()
            st, _, _ = integrate_segment(yc, t0, t1, cands[c], cands[c], ctx["p"], ctx["phi"], ctx["psi"],
                                         ctx["rtol"], ctx["atol"], ctx["hmax"], ctx["max_steps"], False,
                                         _NO_REC_T, _NO_REC_T, _NO_REC_Y, _NO_REC_Q, 0)
            counts["nodes"] += 1
            if st != OK:
                counts["failed"] += nc ** (n - 1 - level)
                continue
            rec(yc, prefix + (c,), level + 1)

    if n == 1 and first is not None:
        raise ValueError("single-period problems have no first-period branches to split")
    rec(ctx["y0"], (), 0)
    return best_J, best_idx, counts


def _worker(args):
    ctx, weights, first = args
    return first, _search_subtree(ctx, weights, first)


def piecewise_search(scenario: Scenario, weights: Sequence[ObjectiveWeights] | None = None,
                     workers: int | None = 1):
    """Exact minimum over all per-period grid assignments for each weight vector.

    Returns ``(best_J, best_index_tuples, counts)``.  With ``workers > 1`` the
    first-period branches are farmed out to processes; the reduction takes the
    smallest J and breaks ties by lexicographic regimen order.
    """
    if weights is None:
        weights = [scenario.weights]
    weights = list(weights)
    ctx = _context(scenario)
    nc = ctx["cands"].shape[0]
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or ctx["n_periods"] == 1:
        return _search_subtree(ctx, weights, None)
    jobs = [(ctx, weights, c) for c in range(nc)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_worker, jobs))
    best_J = [math.inf] * len(weights)
    best_idx: list = [None] * len(weights)
    counts = {"nodes": 0, "failed": 0}
    for _, (bj, bi, cnt) in sorted(parts, key=lambda item: item[0]):
        counts["nodes"] += cnt["nodes"]
        counts["failed"] += cnt["failed"]
        for wi in range(len(weights)):
            if bi[wi] is None:
                continue
            if best_idx[wi] is None or (bj[wi], bi[wi]) < (best_J[wi], best_idx[wi]):
                best_J[wi], best_idx[wi] = bj[wi], bi[wi]
    return best_J, best_idx, counts


def _regimen_from_indices(scenario: Scenario, idx) -> PiecewiseConstant:
    cands = enumerate_grid(scenario.grid)
    return PiecewiseConstant(scenario.period, cands[list(idx)])


def _finish(method, scenario, weights, regimen, search_J, diagnostics, t_start):
    traj = simulate(scenario.x0, regimen, scenario.horizon, scenario.params, scenario.pd,
                    evaluation_settings(scenario))
    val = evaluate(traj, weights)
    diagnostics = dict(diagnostics, search_J=search_J, wall_time=time.perf_counter() - t_start)
    return OptimizationResult(method, regimen, val, traj.final_state, weights.G, diagnostics, traj)


def piecewise_results(scenario: Scenario, weights: Sequence[ObjectiveWeights],
                      workers: int | None = 1) -> list:
    t_start = time.perf_counter()
    best_J, best_idx, counts = piecewise_search(scenario, weights, workers)
    results = []
    for w, J, idx in zip(weights, best_J, best_idx):
        if idx is None:
            raise IntegrationError("every piecewise candidate failed to integrate", math.nan)
        reg = _regimen_from_indices(scenario, idx)
        results.append(_finish("piecewise", scenario, w, reg, J,
                               {"candidates_evaluated": len(enumerate_grid(scenario.grid)) ** scenario.n_periods,
                                "period_integrations": counts["nodes"],
                                "failed_candidates": counts["failed"],
                                "weights_scored_per_traversal": len(weights)}, t_start))
    return results


def optimize_piecewise(scenario: Scenario, workers: int | None = 1) -> OptimizationResult:
    """Best per-period grid regimen for ``scenario.weights``."""
    return piecewise_results(scenario, [scenario.weights], workers)[0]


def brute_force_piecewise(scenario: Scenario, weights: ObjectiveWeights | None = None):
    """Re-simulate every full candidate from t=0; returns ``(J, index tuple)``."""
    w = weights or scenario.weights
    cands = enumerate_grid(scenario.grid)
    settings = evaluation_settings(scenario)
    best = (math.inf, None)
    for idx in itertools.product(range(len(cands)), repeat=scenario.n_periods):
        reg = PiecewiseConstant(scenario.period, cands[list(idx)])
        try:
            y = simulate_terminal(scenario.x0, reg, scenario.horizon, scenario.params, scenario.pd, settings)
        except IntegrationError:
            continue
        J = float(objective_totals(y[None, :], w)[0])
        if J < best[0]:
            best = (J, idx)
    return best


def constant_results(scenario: Scenario, weights: Sequence[ObjectiveWeights]) -> list:
    t_start = time.perf_counter()
    cands = enumerate_grid(scenario.grid)
    settings = evaluation_settings(scenario)
    Y = np.full((len(cands), N_AUG), np.nan)
    ok = np.zeros(len(cands), dtype=bool)
    for k, dose in enumerate(cands):
        try:
            Y[k] = simulate_terminal(scenario.x0, Constant(dose), scenario.horizon, scenario.params,
                                     scenario.pd, settings)
            ok[k] = True
        except IntegrationError:
            pass
    if not ok.any():
        raise IntegrationError("every constant candidate failed to integrate", math.nan)
    results = []
    for w in weights:
        J = objective_totals(Y, w)
        J[~ok] = math.inf
        j = int(np.argmin(J))
        results.append(_finish("constant", scenario, w, Constant(cands[j]), float(J[j]),
                               {"candidates_evaluated": len(cands),
                                "failed_candidates": int((~ok).sum())}, t_start))
    return results


def optimize_constant(scenario: Scenario) -> OptimizationResult:
    """Best constant grid regimen for ``scenario.weights``."""
    return constant_results(scenario, [scenario.weights])[0]
