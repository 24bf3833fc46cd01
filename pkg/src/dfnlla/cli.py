"""Command-line entry point: ``dfnlla run | profile | list-problems``.

Every failure prints ``ERROR <CODE>`` on its own line to stderr before any
human-readable message.
"""
from __future__ import annotations

import argparse
import itertools
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .benchmark import (compute_cutoffs, data_profile, performance_profile, profile_csv,
                        profile_summary)
from .lower import AnalyticOracle, BuiltinOracle
from .records import (atomic_write, dumps17, load_traces, parse_config, result_dict, trace_csv)
from .solver import SolverConfig, Variant, run
from .suite import builtin_suite, get_problem, problem_names

DEFAULT_ZETA_BARS = (1e-3, 1e-6, 1e-9)
DEFAULT_TAUS = (1e-3, 1e-6)
ORACLES = {"builtin": BuiltinOracle, "analytic": AnalyticOracle}
CONFIG_KEYS = {"theta": float, "sigma": float, "gamma": float, "delta": float, "zeta0": float,
               "alpha0": float, "eta0": float, "max_upper_evals": int, "max_wall_time": float}


class CliError(Exception):
    def __init__(self, code: str, message: str, status: int = 1):
        self.code = code
        self.status = status
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("E_USAGE", f"{self.prog}: {message}", status=2)


@dataclass
class RunManifest:
    cells: list[tuple[str, str, float]]
    overrides: dict = field(default_factory=dict)
    out: Path = Path("runs")
    lower_solver: str = "builtin"


def cell_stem(problem: str, variant: str, zeta_bar: float) -> str:
    return f"{problem}__{variant}__zb{zeta_bar:g}"


def cmd_run(manifest: RunManifest) -> int:
    failed = 0
    for name, variant, zb in manifest.cells:
        tp = get_problem(name)
        stem = cell_stem(name, variant, zb)
        try:
            cfg = SolverConfig(zeta_bar=zb, variant=variant, **manifest.overrides)
            result = run(tp.problem, ORACLES[manifest.lower_solver](), cfg, tp.x0)
        except (ValueError, RuntimeError) as exc:
            failed += 1
            atomic_write(manifest.out / f"{stem}.json", dumps17(
                {"problem": name, "solver": variant, "zeta_bar": zb, "error": str(exc)}) + "\n")
            continue
        if result.error:
            failed += 1
        atomic_write(manifest.out / f"{stem}.csv", trace_csv(result, tp.problem.m))
        atomic_write(manifest.out / f"{stem}.json",
                     dumps17(result_dict(result, tp.problem, f"{stem}.csv")) + "\n")
        print(f"{stem}: x_best={np.round(result.x_best, 8).tolist()} F={result.F_best:.10g} "
              f"stop={result.stop_reason}")
    if failed:
        raise CliError("E_CELL_FAILED", f"{failed} cell(s) failed; see result JSON files")
    return 0


def cmd_profile(traces_dir: Path, taus, zeta_bar: float, out: Path, kind: str = "both") -> int:
    if not traces_dir.is_dir():
        raise CliError("E_MISSING_TRACES", f"trace directory {traces_dir} does not exist")
    traces = load_traces(traces_dir, zeta_bar)
    if not traces:
        raise CliError("E_MISSING_TRACES", f"no traces with zeta_bar={zeta_bar:g} in {traces_dir}")
    n_solvers = len({t.solver for t in traces})
    if kind == "performance" and n_solvers < 2:
        raise CliError("E_PRECONDITION", "a performance profile needs at least two solvers")
    summary = []
    for tau in taus:
        cutoffs = compute_cutoffs(traces, tau, zeta_bar)
        profiles = []
        if kind in ("data", "both"):
            profiles.append(data_profile(traces, cutoffs, tau, zeta_bar))
        if kind == "performance" or (kind == "both" and n_solvers >= 2):
            profiles.append(performance_profile(traces, cutoffs, tau, zeta_bar))
        for prof in profiles:
            atomic_write(out / f"{prof.kind}_profile_tau{tau:g}.csv", profile_csv(prof))
            summary.extend(profile_summary(prof))
    atomic_write(out / "summary.json", dumps17(summary) + "\n")
    return 0


def cmd_list_problems(kind: str | None = None, out=None) -> int:
    out = sys.stdout if out is None else out
    for tp in builtin_suite():
        p = tp.problem
        if kind is not None and p.constraint_type != kind:
            continue
        print(f"{p.name}\t{p.n_x}\t{p.n_y}\t{p.m}\t{p.constraint_type}", file=out)
    return 0


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be a positive finite number: {text!r}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dfnlla", description="Derivative-free bilevel optimization with adaptive "
                                            "lower-level accuracy.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run solver variants on catalog problems")
    r.add_argument("--problem", action="append", default=[],
                   help="problem name or 'all' (repeatable)")
    r.add_argument("--variant", action="append", choices=[v.value for v in Variant])
    r.add_argument("--zeta-bar", action="append", type=_positive_float)
    r.add_argument("--budget", type=int, help="upper-level evaluation budget")
    r.add_argument("--out", type=Path, default=Path("runs"))
    r.add_argument("--lower-solver", choices=sorted(ORACLES), default="builtin")
    r.add_argument("--config", type=Path, help="key=value file with solver parameters")

    p = sub.add_parser("profile", help="data and performance profiles from a trace directory")
    p.add_argument("--traces", type=Path, required=True)
    p.add_argument("--tau", action="append", type=_positive_float)
    p.add_argument("--zeta-bar", type=_positive_float, required=True)
    p.add_argument("--out", type=Path, help="output directory (default: <traces>/profiles)")
    p.add_argument("--kind", choices=["data", "performance", "both"], default="both")

    lp = sub.add_parser("list-problems", help="print the problem catalog")
    g = lp.add_mutually_exclusive_group()
    g.add_argument("--constrained", action="store_const", const="general", dest="kind",
                   help="only problems with general upper-level constraints")
    g.add_argument("--type", choices=["unconstrained", "bound", "general"], dest="kind")
    return ap


def _overrides(args) -> dict:
    out = {}
    if args.config is not None:
        try:
            raw = parse_config(args.config.read_text())
        except OSError as exc:
            raise CliError("E_CONFIG", f"cannot read config: {exc}")
        except ValueError as exc:
            raise CliError("E_CONFIG", str(exc))
        for key, value in raw.items():
            if key not in CONFIG_KEYS:
                raise CliError("E_CONFIG", f"unknown config key {key!r}")
            try:
                out[key] = CONFIG_KEYS[key](value)
            except ValueError:
                raise CliError("E_CONFIG", f"bad value for {key}: {value!r}")
    if args.budget is not None:
        out["max_upper_evals"] = args.budget
    return out


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "list-problems":
            return cmd_list_problems(args.kind)
        if args.command == "run":
            names = []
            for n in args.problem:
                names.extend(problem_names() if n == "all" else [n])
            unknown = [n for n in names if n not in problem_names()]
            if unknown:
                raise CliError("E_UNKNOWN_PROBLEM", f"unknown problem(s): {', '.join(unknown)}")
            variants = args.variant or [Variant.MS_DFN_LLA.value]
            zetas = args.zeta_bar or list(DEFAULT_ZETA_BARS)
            manifest = RunManifest(list(itertools.product(names, variants, zetas)),
                                   _overrides(args), args.out, args.lower_solver)
            return cmd_run(manifest)
        out = args.out if args.out is not None else args.traces / "profiles"
        return cmd_profile(args.traces, args.tau or list(DEFAULT_TAUS), args.zeta_bar, out, args.kind)
    except CliError as exc:
        print(f"ERROR {exc.code}", file=sys.stderr)
        print(str(exc), file=sys.stderr)
        return exc.status


if __name__ == "__main__":
    sys.exit(main())
