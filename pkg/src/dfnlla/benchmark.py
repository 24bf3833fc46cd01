"""Data and performance profiles adapted to bilevel runs.

A recorded point only counts when the upper-level violation is at most
``1e-4`` and the lower-level KKT residual is at most ``zeta_bar``; the cost
metric is the cumulative number of lower-level objective evaluations.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

VIOLATION_TOL = 1e-4
RELAXED_KKT_FACTOR = 1e2


@dataclass(frozen=True)
class TraceRecord:
    lower_evals: int
    F: float
    upper_violation: float
    kkt_residual: float


@dataclass
class RunTrace:
    problem: str
    solver: str
    zeta_bar: float
    n_x: int
    n_y: int
    rows: list[TraceRecord] = field(default_factory=list)

    def check(self):
        evals = [r.lower_evals for r in self.rows]
        if any(b <= a for a, b in zip(evals, evals[1:])):
            raise ValueError(f"{self.problem}/{self.solver}: lower-eval counts must strictly increase")
        return self

    @classmethod
    def from_run(cls, result, n_x: int, n_y: int) -> "RunTrace":
        rows = [TraceRecord(r.lower_evals_cum, r.F, r.upper_violation, r.kkt_res) for r in result.trace]
        return cls(result.problem, result.variant.value, result.zeta_bar, n_x, n_y, rows)


@dataclass
class ProfileResult:
    kind: str  # "data" or "performance"
    tau: float
    zeta_bar: float
    solvers: list[str]
    abscissae: list[float]
    curves: dict[str, list[float]]
    solved_at: dict[str, dict[str, float]]
    excluded: list[str]

    def value(self, solver: str, at: float) -> float:
        """Fraction of problems solved by ``solver`` at abscissa ``at``."""
        vals = list(self.solved_at[solver].values())
        n = len(vals)
        return sum(math.isfinite(v) and v <= at for v in vals) / n if n else 0.0

    def auc(self, solver: str) -> float:
        """Normalized area under the step curve, from 0 (data) or 1 (performance) to the last abscissa."""
        start = 0.0 if self.kind == "data" else 1.0
        if not self.abscissae:
            return 0.0
        end = self.abscissae[-1]
        if end <= start:
            return self.curves[solver][-1]
        area = 0.0
        pts = [a for a in self.abscissae if a >= start]
        for a, b in zip(pts, pts[1:]):
            area += self.value(solver, a) * (b - a)
        return area / (end - start)

    def solved_fraction(self, solver: str) -> float:
        return self.value(solver, math.inf)


def is_valid(row: TraceRecord, zeta_bar: float, kkt_factor: float = 1.0) -> bool:
    return row.upper_violation <= VIOLATION_TOL and row.kkt_residual <= kkt_factor * zeta_bar


def _by_problem(traces: Iterable[RunTrace]) -> dict[str, list[RunTrace]]:
    groups: dict[str, list[RunTrace]] = defaultdict(list)
    for t in traces:
        groups[t.problem].append(t)
    return dict(groups)


def compute_cutoff(traces: Iterable[RunTrace], tau: float, zeta_bar: float) -> Optional[float]:
    """``F_min + tau (F_max - F_min)`` for one problem, or None when no row is valid."""
    strict = [r.F for t in traces for r in t.rows if is_valid(r, zeta_bar)]
    if not strict:
        return None
    relaxed = [r.F for t in traces for r in t.rows if is_valid(r, zeta_bar, RELAXED_KKT_FACTOR)]
    F_min, F_max = min(strict), max(relaxed)
    return F_min + tau * (F_max - F_min)


def compute_cutoffs(traces: Iterable[RunTrace], tau: float, zeta_bar: float) -> dict[str, Optional[float]]:
    return {p: compute_cutoff(ts, tau, zeta_bar) for p, ts in _by_problem(traces).items()}


def first_solved(trace: RunTrace, cutoff: Optional[float], zeta_bar: float) -> float:
    """Cumulative lower-level evaluations at the first valid row with ``F <= cutoff``."""
    if cutoff is None:
        return math.inf
    for r in trace.rows:
        if is_valid(r, zeta_bar) and r.F <= cutoff:
            return float(r.lower_evals)
    return math.inf


def _cost_table(traces, cutoffs, zeta_bar, normalize):
    traces = list(traces)
    solvers = sorted({t.solver for t in traces})
    problems = sorted(p for p, c in cutoffs.items() if c is not None)
    excluded = sorted(p for p, c in cutoffs.items() if c is None)
    cost = {s: {p: math.inf for p in problems} for s in solvers}
    for t in traces:
        if t.problem not in problems:
            continue
        c = first_solved(t, cutoffs[t.problem], zeta_bar)
        if normalize:
            c /= t.n_x * t.n_y + 1
        cost[t.solver][t.problem] = min(cost[t.solver][t.problem], c)
    return solvers, problems, excluded, cost


def _curves(solvers, table):
    finite = sorted({v for s in solvers for v in table[s].values() if math.isfinite(v)})
    curves = {}
    for s in solvers:
        vals = list(table[s].values())
        n = len(vals)
        curves[s] = [sum(v <= a for v in vals) / n if n else 0.0 for a in finite]
    return finite, curves


def data_profile(traces, cutoffs, tau: float, zeta_bar: float) -> ProfileResult:
    solvers, _, excluded, cost = _cost_table(traces, cutoffs, zeta_bar, normalize=True)
    absc, curves = _curves(solvers, cost)
    return ProfileResult("data", tau, zeta_bar, solvers, absc, curves, cost, excluded)


def performance_profile(traces, cutoffs, tau: float, zeta_bar: float) -> ProfileResult:
    solvers, problems, excluded, cost = _cost_table(traces, cutoffs, zeta_bar, normalize=False)
    if len(solvers) < 2:
        raise ValueError("a performance profile needs at least two solvers")
    ratios = {s: {} for s in solvers}
    for p in problems:
        best = min(cost[s][p] for s in solvers)
        for s in solvers:
            t = cost[s][p]
            ratios[s][p] = t / best if math.isfinite(t) else math.inf
    absc, curves = _curves(solvers, ratios)
    return ProfileResult("performance", tau, zeta_bar, solvers, absc, curves, ratios, excluded)


def profile_csv(profile: ProfileResult) -> str:
    head = "kappa" if profile.kind == "data" else "ratio"
    lines = [",".join([head, *profile.solvers])]
    for i, a in enumerate(profile.abscissae):
        lines.append(",".join([fmt(a), *(fmt(profile.curves[s][i]) for s in profile.solvers)]))
    return "\n".join(lines) + "\n"


def profile_summary(profile: ProfileResult) -> list[dict]:
    return [{"kind": profile.kind, "solver": s, "tau": profile.tau, "zeta_bar": profile.zeta_bar,
             "auc": profile.auc(s), "solved_fraction": profile.solved_fraction(s),
             "excluded_problems": len(profile.excluded)}
            for s in profile.solvers]


def fmt(v) -> str:
    """17 significant digits, integers without a trailing exponent when exact."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)
