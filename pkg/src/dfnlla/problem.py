"""Bilevel problem abstraction shared by every other module.

A problem is a bundle of black-box callables ``F(x, y)``, ``H_i(x, y)``,
``f(x, y)`` and ``g_j(x, y)`` together with box bounds at both levels.
Infinite bounds are allowed and act as no-op sides of the projection.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

Scalar2 = Callable[[np.ndarray, np.ndarray], float]


class PoisonedEvaluation(ArithmeticError):
    """A black box returned a non-finite value."""

    def __init__(self, what: str, index: int | None = None, value: float = math.nan):
        self.what = what
        self.index = index
        self.value = value
        where = what if index is None else f"{what}[{index}]"
        super().__init__(f"non-finite value {value!r} from {where}")


@dataclass(frozen=True)
class BoxBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        up = np.asarray(self.upper, dtype=float).ravel()
        if lo.size == 0 or lo.shape != up.shape:
            raise ValueError("bounds must be non-empty vectors of equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(up)) or np.any(lo > up):
            raise ValueError("every lower bound must be <= its upper bound")
        lo.setflags(write=False)
        up.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @classmethod
    def unbounded(cls, n: int) -> "BoxBounds":
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def is_unbounded(self) -> bool:
        return bool(np.all(np.isinf(self.lower)) and np.all(np.isinf(self.upper)))

    def midpoint(self) -> np.ndarray:
        """Box midpoint, with 0 on coordinates that have an infinite side."""
        finite = np.isfinite(self.lower) & np.isfinite(self.upper)
        return 0.5 * (np.where(finite, self.lower, 0.0) + np.where(finite, self.upper, 0.0))

    def finite_width(self) -> float:
        """Largest finite ``u_i - l_i`` (0 when no coordinate is bounded on both sides)."""
        w = self.upper - self.lower
        w = w[np.isfinite(w)]
        return float(w.max()) if w.size else 0.0


def project_box(x, bounds: BoxBounds) -> np.ndarray:
    """Componentwise ``max(l, min(u, x))``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != bounds.dim:
        raise ValueError(f"dimension mismatch: x has shape {x.shape}, bounds have dim {bounds.dim}")
    return np.maximum(bounds.lower, np.minimum(bounds.upper, x))


def upper_violation(h_values) -> float:
    """Infinity norm of the positive parts of the upper-level constraints."""
    h = np.asarray(h_values, dtype=float).ravel()
    if h.size == 0:
        return 0.0
    return float(max(0.0, h.max()))


@dataclass
class BilevelProblem:
    """Black-box bilevel problem.

    ``lower_gradient`` and ``lower_constraint_jacobian`` are optional analytic
    derivatives w.r.t. ``y``; when absent, central finite differences are used.
    ``analytic_reaction`` maps ``x`` to the selected follower response.
    """

    name: str
    n_x: int
    n_y: int
    upper_objective: Scalar2
    lower_objective: Scalar2
    x_bounds: BoxBounds
    y_bounds: BoxBounds
    upper_constraints: Sequence[Scalar2] = ()
    lower_constraints: Sequence[Scalar2] = ()
    lower_gradient: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    lower_constraint_jacobian: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    analytic_reaction: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.x_bounds.dim != self.n_x or self.y_bounds.dim != self.n_y:
            raise ValueError("bound dimensions do not match n_x / n_y")
        self.upper_constraints = tuple(self.upper_constraints)
        self.lower_constraints = tuple(self.lower_constraints)

    @property
    def m(self) -> int:
        return len(self.upper_constraints)

    @property
    def p(self) -> int:
        return len(self.lower_constraints)

    @property
    def constraint_type(self) -> str:
        if self.m:
            return "general"
        if not self.x_bounds.is_unbounded:
            return "bound"
        return "unconstrained"


@dataclass
class EvalCounters:
    upper_evals: int = 0
    lower_obj_evals: int = 0
    lower_solver_calls: int = 0
    started: float = field(default_factory=time.perf_counter)

    @property
    def wall_time(self) -> float:
        return time.perf_counter() - self.started


def _finite(value, what: str, index: int | None = None) -> float:
    v = float(value)
    if not math.isfinite(v):
        raise PoisonedEvaluation(what, index, v)
    return v


def eval_upper(problem: BilevelProblem, x, y, counters: EvalCounters | None = None):
    """Evaluate ``F(x, y)`` and ``H(x, y)``; counts one upper evaluation."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != problem.n_x or y.size != problem.n_y:
        raise ValueError("dimension mismatch in eval_upper")
    if counters is not None:
        counters.upper_evals += 1
    F = _finite(problem.upper_objective(x, y), "F")
    h = np.array([_finite(H(x, y), "H", i) for i, H in enumerate(problem.upper_constraints)])
    return F, h
