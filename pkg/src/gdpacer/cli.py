"""Operator command line: run experiments, sweep ablation grids, execute the
numeric validation suite, and render comparison tables.

Exit codes are stable: 0 success, 1 config or input problem, 2 runtime
failure, 3 validation-check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from itertools import product
from pathlib import Path

from .metrics import ALGORITHM_ORDER, METRIC_NAMES, MetricsReport, aggregate_rounds
from .simulate import (
    ConfigError,
    ScenarioConfig,
    default_scenario,
    load_scenario_config,
    run_experiment,
    run_experiment_detailed,
    scenario_from_dict,
)

ROUNDS_HEADER = "algorithm,round,delivery_rate,unsmoothness,avg_ctr,regret"
SERIES_HEADER = "campaign,period,series,value"

# lower is better only for these columns
_MINIMIZE = {"unsmoothness", "regret"}


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


# --- file writers ---------------------------------------------------------------


def write_rounds_csv(path: Path, reports: list[MetricsReport]) -> None:
    lines = [ROUNDS_HEADER]
    for r in reports:
        reg = "" if r.regret is None else _fmt(r.regret)
        lines.append(f"{r.algorithm},{r.round_index},{_fmt(r.delivery_rate)},"
                     f"{_fmt(r.unsmoothness)},{_fmt(r.avg_ctr)},{reg}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_rounds_json(path: Path, reports: list[MetricsReport]) -> None:
    objs = []
    for r in reports:
        objs.append({
            "algorithm": r.algorithm,
            "round_index": r.round_index,
            "delivery_rate": r.delivery_rate,
            "unsmoothness": r.unsmoothness,
            "avg_ctr": r.avg_ctr,
            "regret": r.regret,
            "per_period_spend": r.per_period_spend.astype(int).tolist(),
        })
    path.write_text(json.dumps(objs, indent=2) + "\n", encoding="utf-8", newline="\n")


def write_aggregate_csv(path: Path, agg: dict) -> None:
    lines = ["algorithm,metric,mean,std"]
    for algo, row in agg.items():
        for metric, (mean, std) in row.items():
            lines.append(f"{algo},{metric},{_fmt(mean)},{_fmt(std)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def write_aggregate_json(path: Path, agg: dict) -> None:
    obj = {algo: {metric: {"mean": mean, "std": std}
                  for metric, (mean, std) in row.items()}
           for algo, row in agg.items()}
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8", newline="\n")


def write_series_csv(path: Path, traces: dict) -> None:
    """Plot-ready long format from round 0: per-period spend, the dual in
    effect, and the emergency throttle, one series per (algorithm, kind)."""
    lines = [SERIES_HEADER]
    for algo in [a for a in ALGORITHM_ORDER if a in traces] + \
                [a for a in traces if a not in ALGORITHM_ORDER]:
        tr = traces[algo]
        M, T = tr.wins.shape
        for kind, mat in (("spend", tr.wins), ("dual", tr.duals), ("eptr", tr.eptr)):
            for j in range(M):
                cid = int(tr.campaign_ids[j])
                for t in range(T):
                    lines.append(f"{cid},{t},{algo}:{kind},{_fmt(mat[j, t])}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


# --- table rendering ------------------------------------------------------------


def render_aggregate_table(agg: dict) -> str:
    """Aligned text table, one row per algorithm, best value per metric
    column marked with `*`."""
    metrics = [m for m in METRIC_NAMES if any(m in row for row in agg.values())]
    best: dict[str, str] = {}
    for metric in metrics:
        vals = {a: row[metric][0] for a, row in agg.items() if metric in row}
        if vals:
            pick = min if metric in _MINIMIZE else max
            best[metric] = pick(vals, key=vals.get)
    header = ["algorithm"] + metrics
    rows = [header]
    for algo, row in agg.items():
        cells = [algo]
        for metric in metrics:
            if metric in row:
                mean, std = row[metric]
                mark = "*" if best.get(metric) == algo else ""
                cells.append(f"{mean:.4f} +/- {std:.4f}{mark}")
            else:
                cells.append("-")
        rows.append(cells)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    out = []
    for r in rows:
        out.append("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return "\n".join(out)


# --- invocation helpers ---------------------------------------------------------


def _resolve_seed(args, raw_config: dict | None) -> int | None:
    """Precedence: --seed flag, then config file, then GDPACER_SEED, then the
    built-in default (signalled as None)."""
    if args.seed is not None:
        return args.seed
    if raw_config is not None and "seed" in raw_config:
        return int(raw_config["seed"])
    env = os.environ.get("GDPACER_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"GDPACER_SEED must be an integer, got {env!r}") from None
    return None


def _load_config(args) -> ScenarioConfig:
    raw = None
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
    seed = _resolve_seed(args, raw)
    if raw is not None:
        if seed is not None:
            raw = dict(raw, seed=int(seed))
        cfg = scenario_from_dict(raw)
    else:
        cfg = default_scenario(seed=seed if seed is not None else 0)
    if args.algorithms:
        algos = tuple(a.strip() for a in args.algorithms.split(",") if a.strip())
        cfg.algorithms = algos
    cfg.validate()
    return cfg


def _prepare_out(args, filenames: list[str]) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not args.force:
        clashes = [f for f in filenames if (out / f).exists()]
        if clashes:
            raise ConfigError(
                f"refusing to overwrite {', '.join(clashes)} in {out}; pass --force")
    return out


# --- subcommands ----------------------------------------------------------------


def cmd_run(args) -> int:
    try:
        cfg = _load_config(args)
        names = ["series.csv"]
        names.append("rounds.json" if args.format == "json" else "rounds.csv")
        names.append("aggregate.json" if args.format == "json" else "aggregate.csv")
        out = _prepare_out(args, names)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        reports, traces0 = run_experiment_detailed(cfg, jobs=args.jobs)
        agg = aggregate_rounds(reports)
        if args.format == "json":
            write_rounds_json(out / "rounds.json", reports)
            write_aggregate_json(out / "aggregate.json", agg)
        else:
            write_rounds_csv(out / "rounds.csv", reports)
            write_aggregate_csv(out / "aggregate.csv", agg)
        write_series_csv(out / "series.csv", traces0)
    except Exception as exc:  # noqa: BLE001 - map anything mid-run to exit 2
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    print(render_aggregate_table(agg))
    return 0


def cmd_ablate(args) -> int:
    try:
        cfg = _load_config(args)
        if not cfg.ablation:
            raise ConfigError("ablate requires a config with an `ablation` grid")
        out = _prepare_out(args, ["ablation.csv"])
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    keys = list(cfg.ablation)
    grids = [cfg.ablation[k] for k in keys]
    lines = []
    header_metrics = []
    try:
        for cell in product(*grids):
            overrides = dict(zip(keys, cell))
            cell_cfg = dataclasses.replace(cfg)
            cell_cfg.hyperparams = dataclasses.replace(cfg.hyperparams, **overrides)
            cell_cfg.ablation = None
            reports = run_experiment(cell_cfg, jobs=args.jobs)
            agg = aggregate_rounds(reports)
            for algo, row in agg.items():
                if not header_metrics:
                    header_metrics = list(row)
                cells = [str(v) for v in cell] + [algo]
                for metric in header_metrics:
                    mean, std = row.get(metric, (float("nan"), float("nan")))
                    cells.extend([_fmt(mean), _fmt(std)])
                lines.append(",".join(cells))
            label = ", ".join(f"{k}={v}" for k, v in overrides.items())
            print(f"[{label}]")
            print(render_aggregate_table(agg))
            print()
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    header = keys + ["algorithm"]
    for metric in header_metrics:
        header.extend([f"{metric}_mean", f"{metric}_std"])
    (out / "ablation.csv").write_text(
        ",".join(header) + "\n" + "\n".join(lines) + "\n",
        encoding="utf-8", newline="\n")
    return 0


def cmd_validate(args) -> int:
    from .theory import run_validation_suite
    try:
        results = run_validation_suite(narrow=args.narrow)
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    failed = False
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status}  {res.name}: {res.detail}")
        failed = failed or not res.passed
    return 3 if failed else 0


def _parse_rounds_csv(path: str) -> list[MetricsReport]:
    import numpy as np
    reports = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != ROUNDS_HEADER:
            raise ConfigError(f"{path}:1: expected header `{ROUNDS_HEADER}`")
        for ln, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise ConfigError(f"{path}:{ln}: expected 6 fields, got {len(parts)}")
            try:
                reports.append(MetricsReport(
                    algorithm=parts[0],
                    round_index=int(parts[1]),
                    delivery_rate=float(parts[2]),
                    unsmoothness=float(parts[3]),
                    avg_ctr=float(parts[4]),
                    regret=float(parts[5]) if parts[5] else None,
                    per_period_spend=np.zeros((0, 0)),
                ))
            except ValueError as exc:
                raise ConfigError(f"{path}:{ln}: {exc}") from None
    if not reports:
        raise ConfigError(f"{path}: no data rows")
    return reports


def cmd_report(args) -> int:
    try:
        reports = []
        for path in args.rounds:
            reports.extend(_parse_rounds_csv(path))
        agg = aggregate_rounds(reports)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    print(render_aggregate_table(agg))
    if args.out is not None:
        try:
            out = _prepare_out(args, ["aggregate.csv"])
            write_aggregate_csv(out / "aggregate.csv", agg)
        except (ConfigError, OSError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
    return 0


# --- parser ---------------------------------------------------------------------


def _add_common(sub, out_default: str) -> None:
    sub.add_argument("--config", default=None, help="scenario config JSON")
    sub.add_argument("--seed", type=int, default=None,
                     help="seed override (falls back to config, then GDPACER_SEED)")
    sub.add_argument("--out", default=out_default, help="output directory")
    sub.add_argument("--algorithms", default=None,
                     help="comma-separated subset, e.g. dmd,rcpacing")
    sub.add_argument("--format", choices=("json", "csv"), default="csv")
    sub.add_argument("--jobs", type=int, default=1, help="parallel rounds/cells")
    sub.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gdpacer",
        description="Budget-pacing simulation for guaranteed-display delivery")
    subs = parser.add_subparsers(dest="command", required=True)

    p_run = subs.add_parser("run", help="run the configured experiment")
    _add_common(p_run, "out")
    p_run.set_defaults(func=cmd_run)

    p_ab = subs.add_parser("ablate", help="full-factorial hyperparameter sweep")
    _add_common(p_ab, "out")
    p_ab.set_defaults(func=cmd_ablate)

    p_val = subs.add_parser("validate", help="numeric distribution/transform checks")
    p_val.add_argument("--narrow", action="store_true", help="fast subset of checks")
    p_val.set_defaults(func=cmd_validate)

    p_rep = subs.add_parser("report", help="render a comparison table from rounds files")
    p_rep.add_argument("rounds", nargs="+", help="rounds.csv file(s)")
    p_rep.add_argument("--out", default=None, help="also write aggregate.csv here")
    p_rep.add_argument("--force", action="store_true")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    return args.func(args)


def entry() -> None:
    sys.exit(main(sys.argv[1:]))
