#!/usr/bin/env python3
"""Hyperparameter ablations on the desk-default scenario, one axis at a time:

  slope      quality-weighting slope k in {0, 10, 100}
  clip       gradient clipping on/off at a hot step size (eta = 0.8)
  divergence itakura vs euclidean dual geometry

Each axis runs the paced algorithm over the same budget-scaled rounds so
cells are paired.  Results land in one CSV per axis under --out.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from gdpacer.cli import _fmt, render_aggregate_table
from gdpacer.metrics import aggregate_rounds
from gdpacer.pacing import PacingHyperParams
from gdpacer.simulate import default_scenario, run_experiment

AXES = {
    "slope": [("slope_k", v) for v in (0.0, 10.0, 100.0)],
    "clip": [("clip_enabled", v) for v in (False, True)],
    "divergence": [("divergence", v) for v in ("euclidean", "itakura")],
}
# the clipping contrast only separates once steps are large enough to overshoot
AXIS_BASE = {"clip": {"eta": 0.8}}


def run_axis(axis: str, seed: int, rounds: int) -> list[str]:
    lines = ["param,value,metric,mean,std"]
    for name, value in AXES[axis]:
        hyper = PacingHyperParams(**AXIS_BASE.get(axis, {}))
        hyper = replace(hyper, **{name: value})
        cfg = default_scenario(seed=seed, rounds=rounds,
                               algorithms=("rcpacing",), hyperparams=hyper)
        agg = aggregate_rounds(run_experiment(cfg))
        print(f"[{name}={value}]")
        print(render_aggregate_table(agg))
        print()
        for metric, (mean, std) in agg["rcpacing"].items():
            lines.append(f"{name},{value},{metric},{_fmt(mean)},{_fmt(std)}")
    return lines


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--axis", choices=sorted(AXES) + ["all"], default="all")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rounds", type=int, default=20)
    ap.add_argument("--out", default="out/ablations")
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for axis in sorted(AXES) if args.axis == "all" else [args.axis]:
        lines = run_axis(axis, args.seed, args.rounds)
        path = out / f"{axis}.csv"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
