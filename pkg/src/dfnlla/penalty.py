"""Exact penalty treatment of upper-level inequality constraints.

The penalized objective is ``F + max(0, h_1/rho_1, ..., h_m/rho_m)`` with one
penalty parameter per constraint; the scalar-rho form is the ``m == 1`` case.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .lower import solve_lower
from .problem import eval_upper

log = logging.getLogger(__name__)

RHO_SMALL = 1e-3
RHO_LARGE = 1e-1
RHO_SHRINK = 1e-2
RHO_FLOOR = 1e-12


def rho_init(h0) -> np.ndarray:
    h0 = np.asarray(h0, dtype=float).ravel()
    if h0.size == 0:
        raise ValueError("rho_init needs at least one constraint")
    return np.where(np.maximum(0.0, h0) < 1.0, RHO_SMALL, RHO_LARGE)


def penalized_value(F_val: float, h, rho) -> float:
    h = np.asarray(h, dtype=float).ravel()
    rho = np.asarray(rho, dtype=float).ravel()
    if h.shape != rho.shape:
        raise ValueError("h and rho must have the same length")
    if h.size == 0:
        return float(F_val)
    return float(F_val) + max(0.0, float(np.max(h / rho)))


@dataclass
class PenaltyState:
    rho: np.ndarray
    update_log: list = field(default_factory=list)

    @classmethod
    def from_initial_violation(cls, h0) -> "PenaltyState":
        return cls(rho_init(h0))

    def update(self, h, alpha: float, alpha_tilde: float, iteration: int = -1) -> bool:
        """Shrink every rho_i whose weighted violation exceeds ``max(alpha, alpha_tilde)``.

        Returns True when any component changed.
        """
        new = rho_update(self.rho, h, alpha, alpha_tilde)
        changed = False
        for i in np.flatnonzero(new != self.rho):
            if new[i] < RHO_FLOOR:
                log.warning("penalty parameter %d held at %.1e (floor %.0e reached)",
                            i, self.rho[i], RHO_FLOOR)
                new[i] = self.rho[i]
                continue
            self.update_log.append((iteration, int(i), float(self.rho[i]), float(new[i])))
            changed = True
        self.rho = new
        return changed


def rho_update(rho, h, alpha: float, alpha_tilde: float) -> np.ndarray:
    rho = np.asarray(rho, dtype=float).ravel()
    h = np.asarray(h, dtype=float).ravel()
    if rho.shape != h.shape:
        raise ValueError("rho and h must have the same length")
    return np.where(rho * h > max(alpha, alpha_tilde), RHO_SHRINK * rho, rho)


def penalized_objective(problem, oracle, state: PenaltyState, counters=None):
    """Closure ``(x, zeta, warm) -> (R value, lower solution, h)`` reading ``state.rho`` at call time."""
    if problem.m == 0:
        raise ValueError("penalized_objective needs at least one upper-level constraint")

    def R(x, zeta, warm=None):
        sol = solve_lower(oracle, problem, x, zeta, warm, counters)
        F, h = eval_upper(problem, x, sol.y, counters)
        return penalized_value(F, h, state.rho), sol, h

    return R
