"""``vmbo`` command line.

Exit status: 0 success, 2 configuration error, 3 data error, 4 search or
runtime error. Machine-readable results go to files under ``--out``; the
console only gets a short human-readable summary.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import PlanOptions, load_config
from .dataset import ObjectiveKind, load_table, save_table
from .errors import ConfigError, VmboError
from .replay import (
    ReplayPlan,
    cdf_to_csv,
    compare_methods,
    comparison_to_csv,
    quadrant_counts,
    region_counts,
    replay_cells,
    summaries_to_csv,
    summaries_to_json,
    summarize,
    sweep_stopping,
    sweep_to_csv,
)
from .suites import SUITE_SEED, SUITES, generate_suite

EXIT_OK = 0


class _Outputs:
    """Collects files to write so overwrite checks happen before any work."""

    def __init__(self, out_dir: Optional[str], force: bool):
        if out_dir is None:
            raise ConfigError("--out is required for this command")
        self.root = Path(out_dir)
        self.force = force
        self.paths: list = []

    def claim(self, relative: str) -> Path:
        path = self.root / relative
        if path.exists() and not self.force:
            raise ConfigError(f"{path} exists; pass --force to overwrite")
        self.paths.append(path)
        return path

    @staticmethod
    def write(path: Path, text: str) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="\n")


def _plan(table, cfgs, opts: PlanOptions) -> ReplayPlan:
    return ReplayPlan(table, tuple(cfgs), opts.workloads, opts.n_repeats, opts.base_seed)


def _single_config(args) -> tuple:
    if len(args.config) > 1:
        raise ConfigError(f"{args.command} takes at most one --config")
    return load_config(args.config[0] if args.config else None, args.set)


def cmd_run(args) -> int:
    cfg, opts = _single_config(args)
    table = load_table(args.table)
    plan = _plan(table, [cfg], opts)
    out = _Outputs(args.out, args.force)
    trace_paths = {
        (w, r): out.claim(f"traces/{w}/{cfg.name}-r{r:03d}.json")
        for w in plan.workload_ids for r in range(plan.n_repeats)
    }
    summary_csv = out.claim("summary.csv")
    summary_json = out.claim("summary.json")
    cells = replay_cells(plan, args.jobs, keep_traces=True)
    for c in cells:
        out.write(trace_paths[(c.workload_id, c.repeat)], c.trace.to_json() + "\n")
    summaries = summarize(plan, cells)
    out.write(summary_csv, summaries_to_csv(summaries))
    out.write(summary_json, summaries_to_json(summaries))
    counts = region_counts(summaries, cfg.name)
    print(f"{cfg.name}: {len(plan.workload_ids)} workload(s) x {plan.n_repeats} repeat(s); "
          f"regions I/II/III = {counts['I']}/{counts['II']}/{counts['III']}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if not args.config or len(args.config) != 2:
        raise ConfigError("compare needs exactly two --config files (a, then b)")
    cfg_a, opts_a = load_config(args.config[0], args.set)
    cfg_b, opts_b = load_config(args.config[1], args.set)
    if opts_a != opts_b:
        raise ConfigError("the two configs must share workloads, n_repeats and base_seed")
    if cfg_a.name == cfg_b.name:
        cfg_a, cfg_b = replace(cfg_a, label=f"a-{cfg_a.name}"), replace(cfg_b, label=f"b-{cfg_b.name}")
    table = load_table(args.table)
    plan = _plan(table, [cfg_a, cfg_b], opts_a)
    out = _Outputs(args.out, args.force)
    comparison_csv = out.claim("comparison.csv")
    summary_csv = out.claim("summary.csv")
    summary_json = out.claim("summary.json")
    cdf_csv = out.claim("cdf.csv")
    summaries = summarize(plan, replay_cells(plan, args.jobs))
    points = compare_methods(summaries, summaries, cfg_a.name, cfg_b.name)
    out.write(comparison_csv, comparison_to_csv(points))
    out.write(summary_csv, summaries_to_csv(summaries))
    out.write(summary_json, summaries_to_json(summaries))
    out.write(cdf_csv, cdf_to_csv(summaries))
    q = quadrant_counts(points)
    print(f"{cfg_b.name} vs {cfg_a.name}: win {q['win']}, tie {q['tie']}, "
          f"trade-off {q['trade-off']}, loss {q['loss']}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg, opts = _single_config(args)
    table = load_table(args.table)
    plan = _plan(table, [cfg], opts)
    out = _Outputs(args.out, args.force)
    sweep_csv = out.claim("sweep.csv")
    rows = sweep_stopping(plan, cfg, opts.thresholds, jobs=args.jobs)
    out.write(sweep_csv, sweep_to_csv(rows))
    print(f"{'threshold':>9}  {'region':>6}  {'cost':>6}  {'perf':>6}")
    for r in rows:
        print(f"{r.threshold:9g}  {r.region:>6}  {r.mean_search_cost:6.2f}  {r.mean_normalized_performance:6.3f}")
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    if args.suite not in SUITES:
        raise ConfigError(f"unknown suite {args.suite!r}; choose from {', '.join(sorted(SUITES))}")
    out = _Outputs(args.out, args.force)
    path = out.claim(f"{args.suite}.csv")
    table = generate_suite(args.suite, args.seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_table(table, path)
    print(f"wrote {path}: {len(table.catalog)} VMs, {len(table.workloads)} workloads")
    return EXIT_OK


def cmd_validate(args) -> int:
    table = load_table(args.table)
    failed = table.failed_pairs()
    print(f"{len(table.catalog)} VMs, {len(table.workloads)} workloads, {len(failed)} failures")
    width = max(len(w) for w in table.workloads)
    for w in table.workloads:
        best_t = table.optimum(w, ObjectiveKind.TIME)[0]
        best_c = table.optimum(w, ObjectiveKind.COST)[0]
        print(f"  {w:<{width}}  best time: {best_t:<12}  best cost: {best_c}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "gen-synthetic": cmd_gen_synthetic,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vmbo", description="Find the best VM type by model-based search.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, table=True, config=True):
        if table:
            sp.add_argument("--table", required=True, help="measurement table CSV")
        if config:
            sp.add_argument("--config", action="append", default=[], help="key = value config file")
            sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                            help="override a config key (repeatable)")
            sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--force", action="store_true", help="overwrite existing output files")

    common(sub.add_parser("run", help="replay one search configuration"))
    common(sub.add_parser("compare", help="compare two configurations on paired seeds"))
    common(sub.add_parser("sweep", help="sweep a stopping threshold"))
    g = sub.add_parser("gen-synthetic", help="write a reference synthetic table")
    g.add_argument("--suite", default="cliff9", help=f"one of {', '.join(sorted(SUITES))}")
    g.add_argument("--seed", type=int, default=SUITE_SEED)
    common(g, table=False, config=False)
    v = sub.add_parser("validate", help="check a table and show per-workload optima")
    v.add_argument("--table", required=True)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return ConfigError.exit_code
    try:
        return COMMANDS[args.command](args)
    except VmboError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VmboError.exit_code


if __name__ == "__main__":
    sys.exit(main())
