"""Continuous optimal control by adjoint gradients and projected descent.

Controls are piecewise linear on a uniform mesh (nodal values are the
unknowns).  The gradient of J with respect to the nodal doses comes from the
costate

    lambda' = -(beta e_M + (df/dx)^T lambda),   lambda(T) = (alpha, 0, 0, 0),

integrated backwards against the forward dense output, together with the
hat-function moments of the control gradient density
``g_i(t) = gamma_i + lambda . df/du_i``.

The descent works in doses normalised by ``u_max`` and uses the lumped-mass
(L2) metric on the mesh, so step sizes and the stopping test do not depend
on the mesh spacing.  Steps follow the projection arc with Barzilai-Borwein
trial lengths and Armijo backtracking; accepted iterates never increase J.
"""
from __future__ import annotations

import math
import time

import numpy as np
from numba import njit

from ..dynamics import jac_u_kernel, jac_x_kernel
from ..integrator import (
    DIVERGED,
    MAX_STEPS,
    OK,
    STEP_UNDERFLOW,
    IntegrationError,
    _E,
    _A,
    _B,
    _C,
    _MAX_FACTOR,
    _MIN_FACTOR,
    _SAFETY,
    _rms_norm,
    _raise_status,
    dense_eval,
    simulate,
)
from ..objective import ObjectiveValue, evaluate
from ..regimens import Sampled, pc_approximate
from ..scenario import Scenario
from .enumeration import evaluation_settings
from .result import OptimizationResult

N_ADJ = 10  # 4 costates + 2 hat moments per drug


@njit(cache=True)
def _adj_rhs(t, z, t0, t1, ua, ub, p, phi, psi, beta, gamma,
             rec_t, rec_h, rec_y, rec_q, nrec, hint, x, u, jx, ju, out):
    """d/ds of (lambda, moments) with s = t1 - t running backwards."""
    dt = t1 - t0
    a = (t - t0) / dt
    for i in range(3):
        u[i] = ua[i] + (ub[i] - ua[i]) * a
    hint = dense_eval(rec_t, rec_h, rec_y, rec_q, nrec, t, hint, x)
    jac_x_kernel(x, u, p, phi, psi, jx)
    jac_u_kernel(x, u, p, phi, psi, ju)
    for j in range(4):
        acc = 0.0
        for i in range(4):
            acc += jx[i, j] * z[i]
        out[j] = acc
    out[0] += beta
    for k in range(3):
        g = gamma[k]
        for i in range(4):
            g += z[i] * ju[i, k]
        out[4 + 2 * k] = g * (1.0 - a)
        out[5 + 2 * k] = g * a
    return hint


@njit(cache=True)
def adjoint_sweep(seg_t, seg_ua, seg_ub, p, phi, psi, alpha, beta, gamma,
                  rec_t, rec_h, rec_y, rec_q, nrec, rtol, atol, max_steps, grad, lam0):
    """Backward sweep; accumulates dJ/du at the mesh nodes into ``grad`` (n_nodes, 3)
    and stores lambda(0) in ``lam0``.  Returns ``(status, t)``."""
    nseg = seg_t.shape[0] - 1
    z = np.zeros(N_ADJ)
    z[0] = alpha
    K = np.empty((7, N_ADJ))
    ztmp = np.empty(N_ADJ)
    znew = np.empty(N_ADJ)
    err = np.empty(N_ADJ)
    f = np.empty(N_ADJ)
    x = np.empty(4)
    u = np.empty(3)
    jx = np.empty((4, 4))
    ju = np.empty((4, 3))
    hint = nrec - 1
    for i in range(grad.shape[0]):
        for k in range(3):
            grad[i, k] = 0.0
    for seg in range(nseg - 1, -1, -1):
        t0 = seg_t[seg]
        t1 = seg_t[seg + 1]
        L = t1 - t0
        ua = seg_ua[seg]
        ub = seg_ub[seg]
        for i in range(4, N_ADJ):
            z[i] = 0.0
        hint = _adj_rhs(t1, z, t0, t1, ua, ub, p, phi, psi, beta, gamma,
                        rec_t, rec_h, rec_y, rec_q, nrec, hint, x, u, jx, ju, f)
        for i in range(N_ADJ):
            K[0, i] = f[i]
        # starting step: a fixed fraction of the segment, refined by the controller
        h = 0.05 * L
        s = 0.0
        steps = 0
        while s < L:
            if steps >= max_steps:
                return MAX_STEPS, t1 - s
            if h < 1e-12 * max(L, 1.0):
                return STEP_UNDERFLOW, t1 - s
            last = False
            if s + 1.0000001 * h >= L:
                h = L - s
                last = True
            for st in range(1, 6):
                for i in range(N_ADJ):
                    acc = 0.0
                    for j in range(st):
                        acc += _A[st, j] * K[j, i]
                    ztmp[i] = z[i] + h * acc
                hint = _adj_rhs(t1 - (s + _C[st] * h), ztmp, t0, t1, ua, ub, p, phi, psi, beta, gamma,
                                rec_t, rec_h, rec_y, rec_q, nrec, hint, x, u, jx, ju, f)
                for i in range(N_ADJ):
                    K[st, i] = f[i]
            for i in range(N_ADJ):
                acc = 0.0
                for j in range(6):
                    acc += _B[j] * K[j, i]
                znew[i] = z[i] + h * acc
            snew = L if last else s + h
            hint = _adj_rhs(t1 - snew, znew, t0, t1, ua, ub, p, phi, psi, beta, gamma,
                            rec_t, rec_h, rec_y, rec_q, nrec, hint, x, u, jx, ju, f)
            finite = True
            for i in range(N_ADJ):
                K[6, i] = f[i]
                if not (math.isfinite(znew[i]) and math.isfinite(f[i])):
                    finite = False
            if not finite:
                return DIVERGED, t1 - s
            for i in range(N_ADJ):
                acc = 0.0
                for j in range(7):
                    acc += _E[j] * K[j, i]
                err[i] = h * acc
            en = _rms_norm(err, z, znew, rtol, atol)
            if en <= 1.0:
                s = snew
                for i in range(N_ADJ):
                    z[i] = znew[i]
                    K[0, i] = K[6, i]
                fac = _MAX_FACTOR if en == 0.0 else min(_MAX_FACTOR, _SAFETY * en ** (-0.2))
                h = h * fac
                steps += 1
            else:
                h = h * max(_MIN_FACTOR, _SAFETY * en ** (-0.2))
        for k in range(3):
            grad[seg, k] += z[4 + 2 * k]
            grad[seg + 1, k] += z[5 + 2 * k]
    for i in range(4):
        lam0[i] = z[i]
    return OK, seg_t[0]


class ControlProblem:
    """Objective and adjoint gradient of the scenario as a function of the
    normalised nodal doses ``v`` (shape ``(n_nodes, 3)``, entries in [0, 1])."""

    def __init__(self, scenario: Scenario, mesh_step: float | None = None):
        self.scenario = scenario
        h = scenario.solver.mesh if mesh_step is None else mesh_step
        n = int(round(scenario.horizon / h))
        if n < 1 or abs(n * h - scenario.horizon) > 1e-9 * scenario.horizon:
            raise ValueError(f"control mesh {h} does not divide the horizon {scenario.horizon}")
        self.mesh = np.linspace(0.0, scenario.horizon, n + 1)
        self.u_max = scenario.pd.u_max_array
        dt = np.diff(self.mesh)
        m = np.zeros(n + 1)
        m[:-1] += dt / 2
        m[1:] += dt / 2
        self.mass = m
        self.settings = evaluation_settings(scenario)
        self.n_evals = 0
        self.n_grads = 0

    @property
    def n_nodes(self) -> int:
        return self.mesh.size

    def regimen(self, v: np.ndarray) -> Sampled:
        return Sampled(self.mesh, np.clip(v, 0.0, 1.0) * self.u_max)

    def _simulate(self, v, dense):
        sc = self.scenario
        return simulate(sc.x0, self.regimen(v), sc.horizon, sc.params, sc.pd, self.settings, dense=dense)

    def objective(self, v) -> float:
        self.n_evals += 1
        traj = self._simulate(v, False)
        return evaluate(traj, self.scenario.weights).total

    def value_and_gradient(self, v):
        """``(J, dJ/dv)`` with the gradient taken with respect to the normalised
        nodal values (plain partial derivatives, not a density)."""
        sc = self.scenario
        w = sc.weights
        self.n_evals += 1
        self.n_grads += 1
        traj = self._simulate(v, True)
        J = evaluate(traj, w).total
        seg_t, ua, ub = self.regimen(v).segments(sc.horizon)
        d = traj.dense
        grad = np.empty((self.n_nodes, 3))
        lam0 = np.empty(4)
        status, t = adjoint_sweep(
            seg_t, ua, ub, sc.params.as_array(), sc.pd.phi_array, sc.pd.psi_array,
            w.alpha, w.beta, np.asarray(w.gamma), d.t, d.h, d.y, d.q, d.t.shape[0],
            self.settings.rtol, self.settings.atol, self.settings.max_steps_per_segment, grad, lam0)
        if status != OK:
            _raise_status(status, t)
        return J, grad * self.u_max

    def gradient_density(self, grad_v):
        """Gradient in the L2 metric of the mesh, scaled by the horizon."""
        return self.scenario.horizon * grad_v / self.mass[:, None]

    def projected_gradient_norm(self, v, grad_v) -> float:
        d = self.gradient_density(grad_v)
        return float(np.max(np.abs(v - np.clip(v - d, 0.0, 1.0))))


def _mass_dot(mass, a, b):
    return float(np.sum(mass[:, None] * a * b))


def projected_gradient(problem: ControlProblem, v0: np.ndarray, callback=None):
    """Projected gradient descent with BB trial steps and Armijo backtracking.

    Returns ``(v, info)``; ``info['history']`` lists J of accepted iterates.
    """
    st = problem.scenario.solver
    v = np.clip(np.array(v0, dtype=float), 0.0, 1.0)
    J, g = problem.value_and_gradient(v)
    d = problem.gradient_density(g)
    history = [J]
    pgn = problem.projected_gradient_norm(v, g)
    step = 1.0
    it = 0
    converged = pgn <= st.tol
    status = "converged" if converged else "max_iter"
    while not converged and it < st.max_iter:
        accepted = False
        for _ in range(st.max_backtracks):
            v_try = np.clip(v - step * d, 0.0, 1.0)
            dv = v_try - v
            if not np.any(dv):
                break
            try:
                J_try = problem.objective(v_try)
            except IntegrationError:
                step *= st.backtrack
                continue
            if J_try <= J + st.armijo_c1 * float(np.sum(g * dv)):
                accepted = True
                break
            step *= st.backtrack
        if not accepted:
            status = "line_search_failed"
            break
        J_new, g_new = problem.value_and_gradient(v_try)
        d_new = problem.gradient_density(g_new)
        s = v_try - v
        y = d_new - d
        sy = _mass_dot(problem.mass, s, y)
        ss = _mass_dot(problem.mass, s, s)
        step = ss / sy if sy > 0 else st.step_max
        step = min(max(step, st.step_min), st.step_max)
        v, J, g, d = v_try, J_new, g_new, d_new
        history.append(J)
        it += 1
        pgn = problem.projected_gradient_norm(v, g)
        if callback is not None:
            callback(it, v, J, pgn)
        if pgn <= st.tol:
            converged = True
            status = "converged"
    info = {
        "iterations": it,
        "projected_gradient_norm": pgn,
        "converged": converged,
        "status": status,
        "history": history,
        "objective_evaluations": problem.n_evals,
        "gradient_evaluations": problem.n_grads,
    }
    return v, info


def optimize_control(scenario: Scenario, v0: np.ndarray | None = None) -> OptimizationResult:
    """Locally optimal continuous regimen (piecewise linear on the solver mesh)."""
    t_start = time.perf_counter()
    problem = ControlProblem(scenario)
    if v0 is None:
        v0 = np.full((problem.n_nodes, 3), scenario.solver.initial_fraction)
    v, info = projected_gradient(problem, v0)
    regimen = problem.regimen(v)
    traj = simulate(scenario.x0, regimen, scenario.horizon, scenario.params, scenario.pd, problem.settings)
    val = evaluate(traj, scenario.weights)
    info["wall_time"] = time.perf_counter() - t_start
    info["mesh_step"] = float(problem.mesh[1] - problem.mesh[0])
    return OptimizationResult("optimal", regimen, val, traj.final_state, scenario.weights.G, info, traj)


def optimize_approximation(scenario: Scenario, optimal: OptimizationResult | None = None) -> OptimizationResult:
    """Period-averaged, grid-rounded version of the optimal control, re-simulated."""
    t_start = time.perf_counter()
    if optimal is None:
        optimal = optimize_control(scenario)
    approx = pc_approximate(optimal.regimen, scenario.period, scenario.grid, scenario.horizon)
    traj = simulate(scenario.x0, approx, scenario.horizon, scenario.params, scenario.pd,
                    evaluation_settings(scenario))
    val = evaluate(traj, scenario.weights)
    diag = {
        "optimal_J": optimal.J,
        "optimal_converged": optimal.diagnostics.get("converged"),
        "wall_time": time.perf_counter() - t_start + optimal.diagnostics.get("wall_time", 0.0),
    }
    return OptimizationResult("approximation", approx, val, traj.final_state, scenario.weights.G, diag, traj)
