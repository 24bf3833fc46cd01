"""Lower-level solves to a requested KKT accuracy.

Bound constraints on ``y`` are folded into the general inequality list as
``l - y <= 0`` (finite ``l`` only) followed by ``y - u <= 0`` (finite ``u``
only), so multiplier vectors are ordered ``[g_1..g_p, lower bounds, upper
bounds]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .problem import BilevelProblem, EvalCounters, PoisonedEvaluation, project_box

H_FD = 1e-7


class AccuracyNotReached(RuntimeError):
    """The oracle could not certify ``kkt_residual <= zeta``; carries the best point found."""

    def __init__(self, zeta: float, best: "LowerLevelSolution"):
        self.zeta = zeta
        self.best = best
        super().__init__(
            f"lower-level KKT residual {best.kkt_residual:.3e} above requested accuracy {zeta:.3e}"
        )


@dataclass(frozen=True)
class LowerLevelSolution:
    y: np.ndarray
    multipliers: np.ndarray
    kkt_residual: float
    lower_objective_value: float
    obj_evals_used: int


class LowerLevelOracle(Protocol):
    name: str

    def solve(self, problem: BilevelProblem, x: np.ndarray, zeta: float,
              warm_start: Optional[np.ndarray] = None) -> LowerLevelSolution: ...


# -- folded constraints and derivatives ----------------------------------

def _bound_masks(problem: BilevelProblem):
    yb = problem.y_bounds
    return np.isfinite(yb.lower), np.isfinite(yb.upper)


def n_folded(problem: BilevelProblem) -> int:
    lo, up = _bound_masks(problem)
    return problem.p + int(lo.sum()) + int(up.sum())


def folded_constraints(problem: BilevelProblem, x, y) -> np.ndarray:
    lo, up = _bound_masks(problem)
    g = [float(gj(x, y)) for gj in problem.lower_constraints]
    vals = np.concatenate([np.asarray(g, dtype=float),
                           problem.y_bounds.lower[lo] - y[lo],
                           y[up] - problem.y_bounds.upper[up]])
    if not np.all(np.isfinite(vals)):
        raise PoisonedEvaluation("g", int(np.flatnonzero(~np.isfinite(vals))[0]))
    return vals


def _general_jacobian(problem: BilevelProblem, x, y, h: float) -> np.ndarray:
    if problem.p == 0:
        return np.zeros((0, problem.n_y))
    if problem.lower_constraint_jacobian is not None:
        return np.atleast_2d(np.asarray(problem.lower_constraint_jacobian(x, y), dtype=float))
    jac = np.empty((problem.p, problem.n_y))
    for i in range(problem.n_y):
        e = np.zeros(problem.n_y)
        e[i] = h
        gp = np.array([gj(x, y + e) for gj in problem.lower_constraints], dtype=float)
        gm = np.array([gj(x, y - e) for gj in problem.lower_constraints], dtype=float)
        jac[:, i] = (gp - gm) / (2 * h)
    return jac


def folded_jacobian(problem: BilevelProblem, x, y, h: float = H_FD) -> np.ndarray:
    lo, up = _bound_masks(problem)
    eye = np.eye(problem.n_y)
    jac = np.vstack([_general_jacobian(problem, x, y, h), -eye[lo], eye[up]])
    if not np.all(np.isfinite(jac)):
        raise PoisonedEvaluation("grad_y g")
    return jac


def lower_gradient(problem: BilevelProblem, x, y, h: float = H_FD) -> tuple[np.ndarray, int]:
    """Gradient of ``f`` w.r.t. ``y`` and the number of objective evaluations it cost."""
    if problem.lower_gradient is not None:
        grad = np.asarray(problem.lower_gradient(x, y), dtype=float).ravel()
        cost = 1
    else:
        grad = np.empty(problem.n_y)
        for i in range(problem.n_y):
            e = np.zeros(problem.n_y)
            e[i] = h
            grad[i] = (problem.lower_objective(x, y + e) - problem.lower_objective(x, y - e)) / (2 * h)
        cost = 2 * problem.n_y
    if not np.all(np.isfinite(grad)):
        raise PoisonedEvaluation("grad_y f")
    return grad, cost


def _residual_parts(grad, jac, gvals, lam) -> float:
    stat = grad + jac.T @ lam if lam.size else grad
    r = float(np.max(np.abs(stat))) if stat.size else 0.0
    if lam.size:
        r = max(r, float(np.max(np.abs(np.maximum(-lam, gvals)))),
                float(np.max(np.maximum(0.0, gvals))))
    return r


def kkt_residual(problem: BilevelProblem, x, y, lam, h_fd: float = H_FD) -> float:
    """max of ||grad_y L||_inf, ||max(-lam, g)||_inf and ||max(0, g)||_inf over folded constraints."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float).ravel()
    if lam.size != n_folded(problem):
        raise ValueError(f"expected {n_folded(problem)} multipliers, got {lam.size}")
    grad, _ = lower_gradient(problem, x, y, h_fd)
    gvals = folded_constraints(problem, x, y)
    jac = folded_jacobian(problem, x, y, h_fd)
    return _residual_parts(grad, jac, gvals, lam)


def recover_multipliers(problem: BilevelProblem, x, y, grad=None, h_fd: float = H_FD,
                        active_tol: float = 1e-10) -> np.ndarray:
    """Least-squares multipliers on the active folded constraints, clipped at 0."""
    if grad is None:
        grad, _ = lower_gradient(problem, x, y, h_fd)
    gvals = folded_constraints(problem, x, y)
    lam = np.zeros(gvals.size)
    active = np.flatnonzero(gvals >= -active_tol)
    if active.size:
        jac = folded_jacobian(problem, x, y, h_fd)[active]
        sol, *_ = np.linalg.lstsq(jac.T, -grad, rcond=None)
        lam[active] = np.maximum(sol, 0.0)
    return lam


# -- oracles ---------------------------------------------------------------

def default_warm_start(previous: Optional[LowerLevelSolution], y_bounds=None):
    if previous is not None:
        return np.array(previous.y, dtype=float)
    if y_bounds is not None:
        return y_bounds.midpoint()
    return None


class AnalyticOracle:
    """Returns the registered closed-form reaction, projected onto the y-box."""

    name = "analytic"

    def __init__(self, h_fd: float = H_FD):
        self.h_fd = h_fd

    def solve(self, problem, x, zeta, warm_start=None):
        if problem.analytic_reaction is None:
            raise ValueError(f"problem {problem.name!r} has no analytic reaction")
        x = np.asarray(x, dtype=float)
        y = project_box(np.asarray(problem.analytic_reaction(x), dtype=float).ravel(), problem.y_bounds)
        fval = float(problem.lower_objective(x, y))
        grad, cost = lower_gradient(problem, x, y, self.h_fd)
        lam = recover_multipliers(problem, x, y, grad, self.h_fd)
        res = _residual_parts(grad, folded_jacobian(problem, x, y, self.h_fd),
                              folded_constraints(problem, x, y), lam)
        sol = LowerLevelSolution(y, lam, res, fval, 1 + cost)
        if res > zeta:
            raise AccuracyNotReached(zeta, sol)
        return sol


@dataclass
class _Tally:
    evals: int = 0


class BuiltinOracle:
    """Augmented Lagrangian over a spectral projected-gradient inner solver.

    General constraints ``g(x, y) <= 0`` are handled by the PHR augmented
    Lagrangian; the y-box is handled exactly by projection. Bound multipliers
    are read off the projected gradient at the final point.
    """

    name = "builtin"

    def __init__(self, h_fd: float = H_FD, max_inner: int = 5000, max_outer: int = 40,
                 penalty0: float = 10.0, memory: int = 10):
        self.h_fd = h_fd
        self.max_inner = max_inner
        self.max_outer = max_outer
        self.penalty0 = penalty0
        self.memory = memory

    def solve(self, problem, x, zeta, warm_start=None):
        if not zeta > 0:
            raise ValueError("zeta must be positive")
        x = np.asarray(x, dtype=float)
        box = problem.y_bounds
        y0 = warm_start if warm_start is not None else box.midpoint()
        y = project_box(np.asarray(y0, dtype=float).ravel(), box)
        tally = _Tally()
        lam_g = np.zeros(problem.p)
        c = self.penalty0
        best = None
        viol_prev = math.inf
        for _ in range(self.max_outer):
            y, grad = self._inner(problem, x, y, lam_g, c, zeta, tally)
            if problem.p:
                g = np.array([gj(x, y) for gj in problem.lower_constraints], dtype=float)
                lam_g = np.maximum(0.0, lam_g + c * g)
                # stationarity w.r.t. the updated multipliers equals the inner gradient
                jg = _general_jacobian(problem, x, y, self.h_fd)
                grad_f = grad - jg.T @ lam_g
            else:
                grad_f = grad
            sol = self._certify(problem, x, y, grad_f, lam_g, tally)
            if best is None or sol.kkt_residual < best.kkt_residual:
                best = sol
            if sol.kkt_residual <= zeta:
                return sol
            if not problem.p:
                break
            viol = float(np.max(np.maximum(0.0, g)))
            if viol > 0.25 * viol_prev:
                c *= 10.0
            viol_prev = viol
        raise AccuracyNotReached(zeta, best)

    def _certify(self, problem, x, y, grad_f, lam_g, tally) -> LowerLevelSolution:
        lo, up = _bound_masks(problem)
        gvals = folded_constraints(problem, x, y)
        jac = folded_jacobian(problem, x, y, self.h_fd)
        r = grad_f + (jac[:problem.p].T @ lam_g if problem.p else 0.0)
        at_lo = np.zeros(problem.n_y, dtype=bool)
        at_up = np.zeros(problem.n_y, dtype=bool)
        at_lo[lo] = y[lo] <= problem.y_bounds.lower[lo]
        at_up[up] = y[up] >= problem.y_bounds.upper[up]
        lam_lo = np.where(at_lo, np.maximum(r, 0.0), 0.0)[lo]
        lam_up = np.where(at_up, np.maximum(-r, 0.0), 0.0)[up]
        lam = np.concatenate([lam_g, lam_lo, lam_up])
        res = _residual_parts(grad_f, jac, gvals, lam)
        tally.evals += 1
        fval = float(problem.lower_objective(x, y))
        return LowerLevelSolution(y.copy(), lam, res, fval, tally.evals)

    def _merit(self, problem, x, y, lam_g, c, tally):
        fval = float(problem.lower_objective(x, y))
        tally.evals += 1
        if not math.isfinite(fval):
            raise PoisonedEvaluation("f")
        if problem.p:
            g = np.array([gj(x, y) for gj in problem.lower_constraints], dtype=float)
            fval += float(np.sum(np.maximum(0.0, lam_g + c * g) ** 2 - lam_g ** 2)) / (2 * c)
        return fval

    def _merit_grad(self, problem, x, y, lam_g, c, tally):
        grad, cost = lower_gradient(problem, x, y, self.h_fd)
        tally.evals += cost
        if problem.p:
            g = np.array([gj(x, y) for gj in problem.lower_constraints], dtype=float)
            grad = grad + _general_jacobian(problem, x, y, self.h_fd).T @ np.maximum(0.0, lam_g + c * g)
        return grad

    def _inner(self, problem, x, y, lam_g, c, zeta, tally):
        """Nonmonotone spectral projected gradient; stops on the box-stationarity measure."""
        box = problem.y_bounds
        tol = zeta if problem.p == 0 else 0.5 * zeta
        phi = self._merit(problem, x, y, lam_g, c, tally)
        grad = self._merit_grad(problem, x, y, lam_g, c, tally)
        history = [phi]
        step = 1.0
        for _ in range(self.max_inner):
            if _box_stationarity(y, grad, box) <= tol:
                break
            d = project_box(y - step * grad, box) - y
            slope = float(grad @ d)
            ref = max(history[-self.memory:])
            slack = 1e-15 * max(1.0, abs(ref))
            t = 1.0
            while True:
                y_new = y + t * d
                phi_new = self._merit(problem, x, y_new, lam_g, c, tally)
                if phi_new <= ref + 1e-4 * t * slope + slack or t < 1e-12:
                    break
                t *= 0.5
            grad_new = self._merit_grad(problem, x, y_new, lam_g, c, tally)
            s = y_new - y
            yk = grad_new - grad
            sy = float(s @ yk)
            step = float(np.clip(s @ s / sy, 1e-10, 1e10)) if sy > 0 else 1.0
            y, grad, phi = y_new, grad_new, phi_new
            history.append(phi)
        return y, grad


def _box_stationarity(y, grad, box) -> float:
    """Stationarity part of the KKT residual with bound multipliers read off ``grad``."""
    r = np.abs(grad)
    r = np.where(y <= box.lower, np.maximum(0.0, -grad), r)
    r = np.where(y >= box.upper, np.maximum(0.0, grad), r)
    return float(r.max()) if r.size else 0.0


def solve_lower(oracle: LowerLevelOracle, problem: BilevelProblem, x, zeta: float,
                warm_start=None, counters: EvalCounters | None = None,
                h_fd: float = H_FD) -> LowerLevelSolution:
    """Solve the follower problem at accuracy ``zeta`` and re-verify the residual."""
    if not zeta > 0:
        raise ValueError("zeta must be positive")
    try:
        sol = oracle.solve(problem, np.asarray(x, dtype=float), zeta, warm_start)
    except AccuracyNotReached as exc:
        if counters is not None:
            counters.lower_solver_calls += 1
            counters.lower_obj_evals += exc.best.obj_evals_used
        raise
    if counters is not None:
        counters.lower_solver_calls += 1
        counters.lower_obj_evals += sol.obj_evals_used
    checked = kkt_residual(problem, x, sol.y, sol.multipliers, h_fd)
    if checked > zeta:
        raise AccuracyNotReached(zeta, LowerLevelSolution(sol.y, sol.multipliers, checked,
                                                          sol.lower_objective_value,
                                                          sol.obj_evals_used))
    return LowerLevelSolution(sol.y, sol.multipliers, checked, sol.lower_objective_value,
                              sol.obj_evals_used)
