"""Lower-level evaluations to first reach the tau cutoff: adaptive (LLA) versus fixed (LLF) accuracy."""
from __future__ import annotations

import argparse
import math

from dfnlla.benchmark import RunTrace, compute_cutoffs, first_solved
from dfnlla.lower import BuiltinOracle
from dfnlla.solver import SolverConfig, Variant, run
from dfnlla.suite import builtin_suite


def compare(zeta_bar=1e-9, tau=1e-3, budget=1500):
    traces = []
    for tp in builtin_suite():
        for v in (Variant.MS_DFN_LLA, Variant.MS_DFN_LLF):
            cfg = SolverConfig(zeta_bar=zeta_bar, variant=v, max_upper_evals=budget)
            res = run(tp.problem, BuiltinOracle(), cfg, tp.x0)
            traces.append(RunTrace.from_run(res, tp.problem.n_x, tp.problem.n_y))
    cutoffs = compute_cutoffs(traces, tau, zeta_bar)
    rows = []
    for name, c in cutoffs.items():
        cost = {t.solver: first_solved(t, c, zeta_bar) for t in traces if t.problem == name}
        rows.append((name, cost[Variant.MS_DFN_LLA.value], cost[Variant.MS_DFN_LLF.value]))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--zeta-bar", type=float, default=1e-9)
    ap.add_argument("--tau", type=float, default=1e-3)
    ap.add_argument("--budget", type=int, default=1500)
    a = ap.parse_args()
    rows = compare(a.zeta_bar, a.tau, a.budget)
    both = [(n, lla, llf) for n, lla, llf in rows if math.isfinite(lla) and math.isfinite(llf)]
    wins = sum(lla <= llf for _, lla, llf in both)
    print(f"{'problem':24s} {'LLA':>8s} {'LLF':>8s}")
    for n, lla, llf in rows:
        print(f"{n:24s} {lla:8.0f} {llf:8.0f}")
    if both:
        print(f"LLA <= LLF on {wins}/{len(both)} problems solved by both ({wins / len(both):.0%})")


if __name__ == "__main__":
    main()
