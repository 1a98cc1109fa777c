"""Offline evaluation: seeded repeats of a search over a recorded table.

Repeat ``r`` of every method uses seed ``base_seed + r``, so all methods start
from the same initial VMs. Cells are independent; results are always
aggregated in (workload, method, repeat) order, so running them in parallel
changes nothing but the wall-clock time.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .dataset import MeasurementTable, ObjectiveKind
from .errors import ComparisonError, ConfigError, ReplayError
from .gp import Kernel, KernelVariant
from .optimizer import (
    EiFraction,
    FixedBudget,
    Method,
    PredictionDelta,
    SearchConfig,
    SearchTrace,
    TableEvaluator,
    run_search,
    stopping_check,
)

REGIONS = ("I", "II", "III")


def region_thresholds(catalog_size: int) -> tuple:
    """Median measurements-to-optimal cutoffs for Regions I and II."""
    return math.ceil(catalog_size / 3), math.ceil(2 * catalog_size / 3)


def classify_region(median_mto: float, catalog_size: int) -> str:
    first, second = region_thresholds(catalog_size)
    if median_mto <= first:
        return "I"
    if median_mto <= second:
        return "II"
    return "III"


@dataclass(frozen=True)
class ReplayPlan:
    table: MeasurementTable
    methods: tuple  # of SearchConfig; their own ``seed`` fields are ignored
    workload_ids: Optional[tuple] = None  # None: every workload in the table
    n_repeats: int = 100
    base_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.workload_ids is None:
            object.__setattr__(self, "workload_ids", tuple(self.table.workloads))
        object.__setattr__(self, "workload_ids", tuple(self.workload_ids))
        if not self.methods:
            raise ConfigError("a replay plan needs at least one method")
        if not self.workload_ids:
            raise ConfigError("a replay plan needs at least one workload")
        unknown = [w for w in self.workload_ids if w not in self.table.workloads]
        if unknown:
            raise ConfigError(f"workload(s) not in table: {', '.join(unknown)}")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ConfigError(f"method names must be unique; set distinct labels ({', '.join(names)})")
        if self.n_repeats < 1:
            raise ConfigError("n_repeats must be >= 1")
        if self.base_seed < 0:
            raise ConfigError("base_seed must be nonnegative")
        for m in self.methods:
            m.validate_for(len(self.table.catalog))

    def seeds(self) -> range:
        return range(self.base_seed, self.base_seed + self.n_repeats)

    def check_complete(self) -> None:
        """Failed pairs are only allowed when every method says how to handle them."""
        missing = self.table.failed_pairs(self.workload_ids)
        if not missing:
            return
        strict = [m.name for m in self.methods if m.fail_policy is None]
        if strict:
            w, vm = missing[0]
            raise ReplayError(
                f"workload {w} has no measurement on {vm} ({len(missing)} failed pair(s)); "
                f"set fail_policy for {', '.join(strict)}"
            )


@dataclass(frozen=True)
class RepeatResult:
    seed: int
    measurements_to_optimal: int  # catalog size + 1 when the optimum was never measured
    measurements_used: int
    recommendation: str
    normalized_performance: float

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "measurements_to_optimal": self.measurements_to_optimal,
            "measurements_used": self.measurements_used,
            "recommendation": self.recommendation,
            "normalized_performance": self.normalized_performance,
        }


def evaluate_trace(trace: SearchTrace, optimum_value: float, catalog_size: int, seed: int) -> RepeatResult:
    mto = next((s.step_index for s in trace.steps if s.objective_value <= optimum_value),
               catalog_size + 1)
    return RepeatResult(
        seed=seed,
        measurements_to_optimal=mto,
        measurements_used=trace.measurements_used,
        recommendation=trace.recommendation,
        normalized_performance=trace.best_value / optimum_value,
    )


def _quartiles(values: Sequence[float]) -> tuple:
    q1, med, q3 = np.percentile(np.asarray(values, dtype=float), [25, 50, 75])
    return float(q1), float(med), float(q3)


@dataclass(frozen=True)
class MethodSummary:
    """One method's repeats on one workload."""

    method: str
    config_digest: str
    catalog_size: int
    repeats: tuple  # of RepeatResult, in seed order

    @property
    def measurements_to_optimal(self) -> list:
        return [r.measurements_to_optimal for r in self.repeats]

    @property
    def measurements_used(self) -> list:
        return [r.measurements_used for r in self.repeats]

    @property
    def normalized_performance(self) -> list:
        return [r.normalized_performance for r in self.repeats]

    @property
    def mto_quartiles(self) -> tuple:
        return _quartiles(self.measurements_to_optimal)

    @property
    def median_mto(self) -> float:
        return self.mto_quartiles[1]

    @property
    def iqr_mto(self) -> float:
        q1, _, q3 = self.mto_quartiles
        return q3 - q1

    @property
    def perf_quartiles(self) -> tuple:
        return _quartiles(self.normalized_performance)

    @property
    def median_used(self) -> float:
        return _quartiles(self.measurements_used)[1]

    @property
    def region(self) -> str:
        return classify_region(self.median_mto, self.catalog_size)

    def to_dict(self) -> dict:
        q1, med, q3 = self.mto_quartiles
        p1, pmed, p3 = self.perf_quartiles
        return {
            "method": self.method,
            "config_digest": self.config_digest,
            "region": self.region,
            "measurements_to_optimal": {
                "median": med, "q1": q1, "q3": q3, "values": self.measurements_to_optimal,
            },
            "measurements_used": {"median": self.median_used, "values": self.measurements_used},
            "normalized_performance": {
                "median": pmed, "q1": p1, "q3": p3, "values": self.normalized_performance,
            },
            "seeds": [r.seed for r in self.repeats],
            "recommendations": [r.recommendation for r in self.repeats],
        }


@dataclass(frozen=True)
class WorkloadSummary:
    workload_id: str
    catalog_size: int
    optimum: dict  # objective name -> (vm_name, value)
    methods: dict = field(default_factory=dict)  # method name -> MethodSummary

    def region(self, method: str) -> str:
        return self.methods[method].region

    def to_dict(self) -> dict:
        return {
            "workload_id": self.workload_id,
            "catalog_size": self.catalog_size,
            "optimum": {k: {"vm": v[0], "value": v[1]} for k, v in self.optimum.items()},
            "methods": [m.to_dict() for m in self.methods.values()],
        }


# ---------------------------------------------------------------------------
# running cells

@dataclass(frozen=True)
class CellResult:
    workload_id: str
    method: str
    repeat: int
    trace: SearchTrace
    result: RepeatResult


def _run_block(table: MeasurementTable, workload_id: str, cfg: SearchConfig, seeds: Sequence[int],
               first_repeat: int, keep_traces: bool) -> list:
    _, best = table.optimum(workload_id, cfg.objective)
    n = len(table.catalog)
    out = []
    for i, seed in enumerate(seeds):
        trace = run_search(TableEvaluator(table, workload_id, cfg.objective), table.catalog,
                           cfg.with_seed(seed))
        out.append(CellResult(workload_id, cfg.name, first_repeat + i,
                              trace if keep_traces else None,
                              evaluate_trace(trace, best, n, seed)))
    return out


def replay_cells(plan: ReplayPlan, jobs: int = 1, keep_traces: bool = False) -> list:
    """Every (workload, method, repeat) cell, in that order."""
    plan.check_complete()
    seeds = list(plan.seeds())
    blocks = [(w, cfg) for w in plan.workload_ids for cfg in plan.methods]
    if jobs <= 1:
        results = [_run_block(plan.table, w, cfg, seeds, 0, keep_traces) for w, cfg in blocks]
    else:
        # one task per (workload, method) block; submission order fixes the output order
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_block, plan.table, w, cfg, seeds, 0, keep_traces)
                       for w, cfg in blocks]
            results = [f.result() for f in futures]
    return [cell for block in results for cell in block]


def summarize(plan: ReplayPlan, cells: Iterable[CellResult]) -> list:
    by_key: dict = {}
    for c in cells:
        by_key.setdefault((c.workload_id, c.method), []).append(c)
    n = len(plan.table.catalog)
    out = []
    for w in plan.workload_ids:
        optimum = {}
        methods = {}
        for cfg in plan.methods:
            optimum.setdefault(cfg.objective.value, plan.table.optimum(w, cfg.objective))
            block = sorted(by_key[(w, cfg.name)], key=lambda c: c.repeat)
            methods[cfg.name] = MethodSummary(cfg.name, cfg.digest(), n,
                                              tuple(c.result for c in block))
        out.append(WorkloadSummary(w, n, optimum, methods))
    return out


def run_replay(plan: ReplayPlan, jobs: int = 1) -> list:
    """Run every cell of the plan and aggregate to one summary per workload."""
    return summarize(plan, replay_cells(plan, jobs))


# ---------------------------------------------------------------------------
# aggregate views

def method_names(summaries: Sequence[WorkloadSummary]) -> list:
    return list(summaries[0].methods) if summaries else []


def search_cost_cdf(summaries: Sequence[WorkloadSummary], method: str) -> list:
    """``(x, pct)`` for x in 1..n: share of workloads whose median
    measurements-to-optimal is at most x."""
    if not summaries:
        raise ReplayError("search_cost_cdf needs at least one workload summary")
    n = summaries[0].catalog_size
    medians = np.array([s.methods[method].median_mto for s in summaries])
    return [(x, float(100.0 * np.count_nonzero(medians <= x) / len(medians))) for x in range(1, n + 1)]


def region_counts(summaries: Sequence[WorkloadSummary], method: str) -> dict:
    counts = {r: 0 for r in REGIONS}
    for s in summaries:
        counts[s.region(method)] += 1
    return counts


@dataclass(frozen=True)
class ComparisonPoint:
    workload_id: str
    search_cost_reduction_pct: float
    performance_improvement_pct: float  # positive: b recommends better VMs than a

    @property
    def quadrant(self) -> str:
        return quadrant(self.search_cost_reduction_pct, self.performance_improvement_pct)


ZERO_TOL = 1e-9


def quadrant(cost_reduction: float, perf_improvement: float) -> str:
    """``win`` / ``tie`` / ``loss`` / ``trade-off`` for one comparison point."""
    c = 0.0 if abs(cost_reduction) < ZERO_TOL else cost_reduction
    p = 0.0 if abs(perf_improvement) < ZERO_TOL else perf_improvement
    if c == 0 and p == 0:
        return "tie"
    if c >= 0 and p >= 0:
        return "win"
    if c <= 0 and p <= 0:
        return "loss"
    return "trade-off"


def _only_method(summaries: Sequence[WorkloadSummary], method: Optional[str], side: str) -> str:
    if method is not None:
        return method
    names = method_names(summaries)
    if len(names) != 1:
        raise ComparisonError(f"summaries {side} hold {len(names)} methods; name the one to compare")
    return names[0]


def compare_methods(summaries_a: Sequence[WorkloadSummary], summaries_b: Sequence[WorkloadSummary],
                    method_a: Optional[str] = None, method_b: Optional[str] = None) -> list:
    """Per-workload search-cost reduction and performance improvement of b over a.

    Cost is the number of measurements until each method's own stopping rule
    fired; performance is the normalized objective of the stopped
    recommendation. Both use per-workload medians over the paired repeats.
    """
    method_a = _only_method(summaries_a, method_a, "a")
    method_b = _only_method(summaries_b, method_b, "b")
    ids_a = [s.workload_id for s in summaries_a]
    ids_b = [s.workload_id for s in summaries_b]
    if sorted(ids_a) != sorted(ids_b) or len(set(ids_a)) != len(ids_a):
        raise ComparisonError("the two replays cover different workloads")
    by_id = {s.workload_id: s for s in summaries_b}
    points = []
    for sa in summaries_a:
        a = sa.methods[method_a]
        b = by_id[sa.workload_id].methods[method_b]
        if [r.seed for r in a.repeats] != [r.seed for r in b.repeats]:
            raise ComparisonError(f"workload {sa.workload_id}: repeats are not paired by seed")
        cost_a, cost_b = a.median_used, b.median_used
        perf_a, perf_b = a.perf_quartiles[1], b.perf_quartiles[1]
        points.append(ComparisonPoint(
            sa.workload_id,
            (cost_a - cost_b) / cost_a * 100.0,
            (perf_a - perf_b) / perf_a * 100.0,
        ))
    return points


def quadrant_counts(points: Sequence[ComparisonPoint]) -> dict:
    counts = {"win": 0, "tie": 0, "trade-off": 0, "loss": 0}
    for p in points:
        counts[p.quadrant] += 1
    return counts


# ---------------------------------------------------------------------------
# stopping sweeps

def _sweep_rule(cfg: SearchConfig, threshold: float):
    if cfg.method is Method.AUGMENTED or (cfg.method is Method.HYBRID
                                          and isinstance(cfg.stopping, PredictionDelta)):
        return PredictionDelta(threshold)
    if cfg.method is Method.NAIVE or (cfg.method is Method.HYBRID
                                      and isinstance(cfg.stopping, EiFraction)):
        return EiFraction(threshold)
    raise ConfigError(f"method {cfg.method.value} has no tunable stopping rule to sweep")


def truncate_trace(trace: SearchTrace, config: SearchConfig) -> SearchTrace:
    """The trace ``config`` would have produced, given an unstopped run of the same search.

    Stopping never changes which VM is picked, only when the loop ends, so the
    stop point can be found from the recorded per-step diagnostics.
    """
    rule = config.stopping
    if isinstance(rule, FixedBudget):
        if rule.n is None or rule.n >= trace.measurements_used:
            return replace(trace, config_digest=config.digest())
        steps = list(trace.steps[:rule.n])
        steps[-1] = replace(steps[-1], stopped=True)
        diags = [d for d in trace.diagnostics if d.measured < rule.n]
        return SearchTrace(tuple(steps), config.digest(), tuple(diags), "budget")
    phase = "gp" if isinstance(rule, EiFraction) else "forest"
    for i, diag in enumerate(trace.diagnostics):
        if diag.phase == phase and stopping_check(rule, diag):
            steps = list(trace.steps[:diag.measured])
            steps[-1] = replace(steps[-1], stopped=True)
            diags = list(trace.diagnostics[:i]) + [replace(diag, fired=True)]
            return SearchTrace(tuple(steps), config.digest(), tuple(diags), rule.kind)
    return replace(trace, config_digest=config.digest())


@dataclass(frozen=True)
class SweepRow:
    threshold: float
    region: str  # I, II, III, or "all"
    n_workloads: int
    mean_search_cost: float
    mean_normalized_performance: float


def reference_config(objective: ObjectiveKind) -> SearchConfig:
    """Naive BO, Matern 5/2, exhaustive budget: the run that assigns regions."""
    return SearchConfig(method=Method.NAIVE, kernel=Kernel(KernelVariant.MATERN52),
                        objective=objective, stopping=FixedBudget(None), label="reference")


def sweep_stopping(plan: ReplayPlan, method: SearchConfig, thresholds: Sequence[float],
                   jobs: int = 1, regions: Optional[dict] = None) -> list:
    """Mean search cost and normalized performance per (threshold, region).

    Workloads are placed in regions by a reference Naive BO replay (Matern 5/2,
    exhaustive budget) on the same seeds, unless ``regions`` maps workload id
    to region already. Rows for empty regions are omitted; an ``all`` row per
    threshold covers every workload.
    """
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise ConfigError("sweep needs at least one threshold")
    rules = [_sweep_rule(method, t) for t in thresholds]
    if regions is None:
        ref = reference_config(method.objective)
        ref_plan = replace(plan, methods=(ref,))
        regions = {s.workload_id: s.region(ref.name) for s in run_replay(ref_plan, jobs)}
    # one exhaustive run per cell; each threshold truncates it
    base = replace(method, stopping=FixedBudget(None), label=method.name)
    cells = replay_cells(replace(plan, methods=(base,)), jobs, keep_traces=True)
    n = len(plan.table.catalog)
    optimum = {w: plan.table.optimum(w, method.objective)[1] for w in plan.workload_ids}
    rows = []
    for t, rule in zip(thresholds, rules):
        cfg = replace(method, stopping=rule)
        per_workload: dict = {}
        for c in cells:
            r = evaluate_trace(truncate_trace(c.trace, cfg), optimum[c.workload_id], n, c.result.seed)
            per_workload.setdefault(c.workload_id, []).append(r)
        for region in REGIONS + ("all",):
            ws = [w for w in plan.workload_ids if region == "all" or regions[w] == region]
            if not ws:
                continue
            results = [r for w in ws for r in per_workload[w]]
            rows.append(SweepRow(
                t, region, len(ws),
                float(np.mean([r.measurements_used for r in results])),
                float(np.mean([r.normalized_performance for r in results])),
            ))
    return rows


# ---------------------------------------------------------------------------
# writers

def summaries_to_json(summaries: Sequence[WorkloadSummary]) -> str:
    return json.dumps({"workloads": [s.to_dict() for s in summaries]}, indent=1) + "\n"


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def summaries_to_csv(summaries: Sequence[WorkloadSummary]) -> str:
    header = ("workload_id", "method", "region", "mto_median", "mto_q1", "mto_q3",
              "used_median", "perf_median", "perf_q1", "perf_q3")
    rows = []
    for s in summaries:
        for name, m in s.methods.items():
            q1, med, q3 = m.mto_quartiles
            p1, pmed, p3 = m.perf_quartiles
            rows.append((s.workload_id, name, m.region, med, q1, q3, m.median_used, pmed, p1, p3))
    return _csv(header, rows)


def cdf_to_csv(summaries: Sequence[WorkloadSummary], methods: Optional[Sequence[str]] = None) -> str:
    methods = method_names(summaries) if methods is None else methods
    rows = [(x, pct, m) for m in methods for x, pct in search_cost_cdf(summaries, m)]
    return _csv(("x", "cumulative_pct", "method"), rows)


def comparison_to_csv(points: Sequence[ComparisonPoint]) -> str:
    return _csv(("workload_id", "cost_reduction_pct", "perf_improvement_pct"),
                [(p.workload_id, p.search_cost_reduction_pct, p.performance_improvement_pct)
                 for p in points])


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    return _csv(("threshold", "region", "n_workloads", "mean_search_cost", "mean_normalized_performance"),
                [(r.threshold, r.region, r.n_workloads, r.mean_search_cost, r.mean_normalized_performance)
                 for r in rows])
