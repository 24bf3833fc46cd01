"""Derivative-free linesearch for bilevel problems with adaptive lower-level accuracy.

The upper level is minimized over its box by probing ``+d``/``-d`` along
unit directions and extrapolating while a sufficient-decrease test holds.
The lower level is solved only to KKT accuracy ``zeta``, which is tightened
on unsuccessful iterations whenever the cube of the tentative step drops
below it, never going under the target ``zeta_bar``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .directions import SobolDirectionStream
from .lower import AccuracyNotReached, LowerLevelSolution, default_warm_start, solve_lower
from .penalty import PenaltyState, penalized_value
from .problem import (BilevelProblem, BoxBounds, EvalCounters, PoisonedEvaluation, eval_upper,
                      project_box, upper_violation)

VALID_VIOLATION = 1e-4


class Variant(str, Enum):
    DFN_LLA = "DFN_LLA"
    MS_DFN_LLA = "MS_DFN_LLA"
    MS_DFN_NL_LLA = "MS_DFN_NL_LLA"
    MS_DFN_LLF = "MS_DFN_LLF"

    @property
    def multi_step(self) -> bool:
        return self is not Variant.DFN_LLA


@dataclass
class SolverConfig:
    theta: float = 0.5
    sigma: float = 1e-18
    gamma: float = 1e-6
    delta: float = 0.5
    zeta_bar: float = 1e-6
    zeta0: float = 0.1
    alpha0: Optional[float] = None
    max_upper_evals: int = 1500
    max_wall_time: float = 9000.0
    variant: Variant = Variant.MS_DFN_LLA
    eta0: Optional[float] = None

    def __post_init__(self):
        self.variant = Variant(self.variant)
        for name in ("theta", "sigma", "delta"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.zeta_bar < 0 or self.zeta0 < self.zeta_bar:
            raise ValueError("need zeta0 >= zeta_bar >= 0")
        if self.variant is Variant.MS_DFN_LLF and not self.zeta_bar > 0:
            raise ValueError("the fixed-accuracy variant needs zeta_bar > 0")
        if self.zeta0 <= 0:
            raise ValueError("zeta0 must be positive")
        if self.alpha0 is not None and self.alpha0 < self.initial_zeta ** (1 / 3):
            raise ValueError("alpha0 must be >= zeta0 ** (1/3)")
        if self.eta0 is not None and not self.eta0 > 0:
            raise ValueError("eta0 must be positive")

    @property
    def initial_zeta(self) -> float:
        return self.zeta_bar if self.variant is Variant.MS_DFN_LLF else self.zeta0

    @property
    def initial_step(self) -> float:
        if self.alpha0 is not None:
            return self.alpha0
        return max(1.0, self.initial_zeta ** (1 / 3))

    @property
    def alpha_min(self) -> float:
        return alpha_min(self.sigma, self.zeta_bar)


@dataclass
class IterationRecord:
    k: int
    direction: np.ndarray
    alpha: float
    alpha_tilde: float
    alpha_tilde_max: float
    zeta: float
    success: bool
    P: float
    lower_evals_cum: int
    regenerated: bool = False


@dataclass
class TraceRow:
    k: int
    variant: str
    success: Optional[bool]
    alpha: Optional[float]
    alpha_tilde: Optional[float]
    zeta: float
    P: float
    F: float
    lower_evals_cum: int
    upper_evals_cum: int
    kkt_res: float
    upper_violation: float
    rho: Optional[tuple] = None


@dataclass
class RunResult:
    problem: str
    variant: Variant
    zeta_bar: float
    x_best: np.ndarray
    P_best: float
    F_best: float
    y_best: Optional[np.ndarray]
    kkt_best: float
    violation_best: float
    stop_reason: str
    trace: list
    history: list
    counters: EvalCounters
    rho_log: list = field(default_factory=list)
    error: Optional[str] = None


# -- small formulas -------------------------------------------------------

def alpha_min(sigma: float, zeta_bar: float) -> float:
    return (sigma * zeta_bar) ** (1.0 / 3.0)


def zeta_update(alpha_k: float, alpha_tilde_next: float, zeta_k: float, theta: float,
                zeta_bar: float) -> float:
    """Accuracy after an unsuccessful iteration (``alpha_k == 0``)."""
    cube = alpha_tilde_next ** 3
    if cube < zeta_k:
        return max(zeta_bar, min(theta * zeta_k, cube))
    return zeta_k


def accept_nl(P_trial: float, P_current: float, alpha_tilde: float, gamma: float,
              delta: float):
    """Sufficient-decrease test without extrapolation; an accepted step is enlarged by 1/delta."""
    if P_trial <= P_current - gamma * alpha_tilde ** 2:
        return True, alpha_tilde / delta
    return False, None


def ms_regeneration(steps, eta: float):
    """When every step is below ``eta``: reset all steps to their mean and halve ``eta``."""
    steps = np.asarray(steps, dtype=float)
    if np.all(steps < eta):
        return np.full_like(steps, steps.mean()), 0.5 * eta, True
    return steps, eta, False


def goldstein_epsilon(gamma: float, alpha_min: float, L_F: float, zeta_bar: float) -> float:
    """Stationarity gap ``4 gamma alpha_min + 8 L_F zeta_bar / alpha_min`` of the limit point."""
    if not alpha_min > 0:
        raise ValueError("goldstein_epsilon needs alpha_min > 0")
    return 4.0 * gamma * alpha_min + 8.0 * L_F * zeta_bar / alpha_min


def projected_extrapolation(P: Callable[[np.ndarray], float], x, d, alpha_tilde: float,
                            bounds: BoxBounds, gamma: float = 1e-6, delta: float = 0.5,
                            P_x: Optional[float] = None):
    """Probe ``+d`` then ``-d`` at ``alpha_tilde``; on success extrapolate by ``1/delta``.

    Returns ``(alpha, direction)``; ``alpha == 0`` means neither probe gave
    sufficient decrease and the direction is ``d`` itself.
    """
    x = np.asarray(x, dtype=float)
    d = np.asarray(d, dtype=float)
    if not alpha_tilde > 0:
        raise ValueError("alpha_tilde must be positive")
    if P_x is None:
        P_x = P(x)
    alpha = alpha_tilde
    for p in (d, -d):
        if P(project_box(x + alpha * p, bounds)) <= P_x - gamma * alpha ** 2:
            break
    else:
        return 0.0, d
    current = project_box(x + alpha * p, bounds)
    while True:
        beta = alpha / delta
        trial = project_box(x + beta * p, bounds)
        if np.array_equal(trial, current):
            return alpha, p
        if P(trial) > P_x - gamma * beta ** 2:
            return alpha, p
        alpha, current = beta, trial


# -- objectives ------------------------------------------------------------

def perturbed_objective(problem: BilevelProblem, oracle, x, zeta: float, warm=None,
                        counters: EvalCounters | None = None):
    """``P(x, zeta) = F(x, y~(x, zeta))`` together with the lower-level solution."""
    sol = solve_lower(oracle, problem, x, zeta, warm, counters)
    F, _ = eval_upper(problem, x, sol.y, counters)
    return F, sol


@dataclass
class _Point:
    x: np.ndarray
    value: float
    F: float
    h: np.ndarray
    sol: LowerLevelSolution
    zeta: float


class _Evaluator:
    """Evaluates P or R at fixed (zeta, rho) and appends one trace row per upper evaluation."""

    def __init__(self, problem, oracle, counters, variant):
        self.problem = problem
        self.oracle = oracle
        self.counters = counters
        self.variant = variant.value
        self.penalty: Optional[PenaltyState] = None
        self.rows: list[TraceRow] = []
        self._last_rho = None

    def point(self, x, zeta, warm, k) -> _Point:
        sol = solve_lower(self.oracle, self.problem, x, zeta, warm, self.counters)
        F, h = eval_upper(self.problem, x, sol.y, self.counters)
        if self.problem.m and self.penalty is None:
            self.penalty = PenaltyState.from_initial_violation(h)
        value = penalized_value(F, h, self.penalty.rho) if self.penalty is not None else F
        rho = None
        if self.penalty is not None:
            cur = tuple(float(r) for r in self.penalty.rho)
            if cur != self._last_rho:
                rho = self._last_rho = cur
        self.rows.append(TraceRow(k, self.variant, None, None, None, zeta, value, F,
                                  self.counters.lower_obj_evals, self.counters.upper_evals,
                                  sol.kkt_residual, upper_violation(h), rho))
        return _Point(np.array(x, dtype=float), value, F, h, sol, zeta)


# -- driver ------------------------------------------------------------------

class DFNSolver:
    """Runs one variant on one problem; ``step`` performs one outer iteration."""

    def __init__(self, problem: BilevelProblem, oracle, config: SolverConfig, x0=None):
        self.problem = problem
        self.oracle = oracle
        self.config = config
        self.counters = EvalCounters()
        self.ev = _Evaluator(problem, oracle, self.counters, config.variant)
        self.stream = SobolDirectionStream(problem.n_x)
        self.k = 0
        self.zeta = config.initial_zeta
        self.alpha_min = config.alpha_min
        n = problem.n_x if config.variant.multi_step else 1
        self.steps = np.full(n, config.initial_step)
        self.eta = config.eta0 if config.eta0 is not None else \
            1e-3 * max(1.0, problem.x_bounds.finite_width())
        self.basis = self.stream.next_basis() if config.variant.multi_step else None
        self.cursor = 0
        self.history: list[IterationRecord] = []
        self._stamped = 0
        x0 = problem.x_bounds.midpoint() if x0 is None else np.asarray(x0, dtype=float)
        self.current = self.ev.point(project_box(x0, problem.x_bounds), self.zeta,
                                     default_warm_start(None, problem.y_bounds), 0)
        self.best = self.current

    @property
    def x(self):
        return self.current.x

    def _warm(self):
        return default_warm_start(self.current.sol, self.problem.y_bounds)

    def _refresh(self):
        # cached value is stale once zeta or rho moved
        self.current = self.ev.point(self.x, self.zeta, self._warm(), self.k)

    def step(self) -> IterationRecord:
        cfg = self.config
        k, zeta = self.k, self.zeta
        if self.current.zeta != zeta:
            self._refresh()
        if cfg.variant.multi_step:
            idx = self.cursor
            d = self.basis[:, idx].copy()
        else:
            idx = 0
            d = self.stream.next_direction()
        alpha_tilde = float(self.steps[idx])
        alpha_tilde_max = float(self.steps.max())
        base = self.current
        seen: dict[bytes, _Point] = {}

        def P(z):
            pt = self.ev.point(z, zeta, self._warm(), k)
            seen[z.tobytes()] = pt
            return pt.value

        bounds = self.problem.x_bounds
        if cfg.variant is Variant.MS_DFN_NL_LLA:
            alpha, d_used, next_step = 0.0, d, None
            for p in (d, -d):
                ok, nxt = accept_nl(P(project_box(base.x + alpha_tilde * p, bounds)), base.value,
                                    alpha_tilde, cfg.gamma, cfg.delta)
                if ok:
                    alpha, d_used, next_step = alpha_tilde, p, nxt
                    break
        else:
            alpha, d_used = projected_extrapolation(P, base.x, d, alpha_tilde, bounds,
                                                    cfg.gamma, cfg.delta, P_x=base.value)
            next_step = alpha
        success = alpha > 0
        if success:
            self.current = seen[project_box(base.x + alpha * d_used, bounds).tobytes()]
            self.steps[idx] = next_step
        else:
            self.steps[idx] = max(self.alpha_min, cfg.theta * alpha_tilde)

        regenerated = False
        if cfg.variant.multi_step:
            self.cursor += 1
            if self.cursor == self.problem.n_x:
                self.cursor = 0
                self.steps, self.eta, regenerated = ms_regeneration(self.steps, self.eta)
                if regenerated:
                    self.basis = self.stream.next_basis()
        if cfg.variant is not Variant.MS_DFN_LLF and (not success or regenerated):
            self.zeta = zeta_update(0.0, float(self.steps.max()), zeta, cfg.theta, cfg.zeta_bar)

        if self.ev.penalty is not None:
            h = self.current.h
            if self.ev.penalty.update(h, alpha, alpha_tilde, k):
                self._refresh_after_rho()

        rec = IterationRecord(k, d_used, alpha, alpha_tilde, alpha_tilde_max, zeta, success,
                              self.current.value, self.counters.lower_obj_evals, regenerated)
        for row in self.ev.rows[self._stamped:]:
            row.success, row.alpha, row.alpha_tilde = success, alpha, alpha_tilde
        self._stamped = len(self.ev.rows)
        self.history.append(rec)
        self._track_best()
        self.k += 1
        return rec

    def _refresh_after_rho(self):
        cur = self.current
        value = penalized_value(cur.F, cur.h, self.ev.penalty.rho)
        # force re-evaluation at the start of the next iteration
        self.current = _Point(cur.x, value, cur.F, cur.h, cur.sol, -1.0)

    def _track_best(self):
        def key(pt):
            return (upper_violation(pt.h) > VALID_VIOLATION, pt.value)
        if key(self.current) < key(self.best):
            self.best = self.current

    def stop_reason(self) -> Optional[str]:
        cfg = self.config
        if self.counters.upper_evals >= cfg.max_upper_evals:
            return "eval_budget"
        if self.counters.wall_time >= cfg.max_wall_time:
            return "time_budget"
        if self.alpha_min > 0 and np.all(self.steps <= self.alpha_min):
            return "steps_below_alpha_min"
        return None

    def result(self, stop_reason: str, error: Optional[str] = None) -> RunResult:
        b = self.best
        for row in self.ev.rows:
            if row.success is None and error is None:
                row.success = False
        return RunResult(self.problem.name, self.config.variant, self.config.zeta_bar,
                         b.x.copy(), b.value, b.F, b.sol.y.copy(), b.sol.kkt_residual,
                         upper_violation(b.h), stop_reason, self.ev.rows, self.history,
                         self.counters,
                         list(self.ev.penalty.update_log) if self.ev.penalty else [], error)


def run(problem: BilevelProblem, oracle, config: SolverConfig, x0=None) -> RunResult:
    """Iterate until the evaluation budget, the time budget, or the step floor stops the run."""
    try:
        solver = DFNSolver(problem, oracle, config, x0)
    except (AccuracyNotReached, PoisonedEvaluation) as exc:
        raise RuntimeError(f"cannot evaluate the starting point: {exc}") from exc
    while True:
        reason = solver.stop_reason()
        if reason is not None:
            return solver.result(reason)
        try:
            solver.step()
        except (AccuracyNotReached, PoisonedEvaluation) as exc:
            return solver.result("error", f"{type(exc).__name__}: {exc}")
