"""Run every variant on the built-in suite and write traces plus profiles per zeta_bar."""
from __future__ import annotations

import argparse
import itertools
from pathlib import Path

from dfnlla.cli import RunManifest, cmd_profile, cmd_run
from dfnlla.solver import Variant
from dfnlla.suite import problem_names


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--zeta-bar", type=float, action="append")
    ap.add_argument("--budget", type=int, default=1500)
    a = ap.parse_args()
    for zb in a.zeta_bar or [1e-3, 1e-6, 1e-9]:
        d = a.out / f"zb{zb:g}"
        cells = list(itertools.product(problem_names(), [v.value for v in Variant], [zb]))
        try:
            cmd_run(RunManifest(cells, {"max_upper_evals": a.budget}, d))
        finally:
            cmd_profile(d, [1e-3, 1e-6], zb, d / "profiles")
        print(f"profiles written to {d / 'profiles'}")


if __name__ == "__main__":
    main()
