import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vmbo.errors import ComparisonError, ConfigError, ReplayError
from vmbo.optimizer import (
    EiFraction,
    FixedBudget,
    PredictionDelta,
    SearchConfig,
    SearchTrace,
    StepRecord,
    TableEvaluator,
    run_search,
)
from vmbo.replay import (
    MethodSummary,
    ReplayPlan,
    RepeatResult,
    WorkloadSummary,
    classify_region,
    compare_methods,
    quadrant,
    quadrant_counts,
    region_counts,
    region_thresholds,
    replay_cells,
    run_replay,
    search_cost_cdf,
    summaries_to_csv,
    summaries_to_json,
    sweep_stopping,
    sweep_to_csv,
    truncate_trace,
    evaluate_trace,
)

from .conftest import make_table

NAIVE_EI = SearchConfig(method="naive", stopping=EiFraction(0.1), label="naive")
AUG_DELTA = SearchConfig(method="augmented", stopping=PredictionDelta(1.1), label="augmented")


def summary(workload, method, used, perf, mto=None, n=18, seeds=None):
    seeds = seeds or list(range(len(used)))
    mto = mto or used
    repeats = tuple(RepeatResult(s, m, u, "vm", p) for s, m, u, p in zip(seeds, mto, used, perf))
    ms = MethodSummary(method, "digest", n, repeats)
    return WorkloadSummary(workload, n, {"time": ("vm", 1.0)}, {method: ms})


class TestRegions:
    def test_thresholds(self):
        assert region_thresholds(18) == (6, 12)
        assert region_thresholds(10) == (4, 7)

    @pytest.mark.parametrize("median,region", [(1, "I"), (6, "I"), (6.5, "II"), (12, "II"),
                                               (12.5, "III"), (19, "III")])
    def test_classify(self, median, region):
        assert classify_region(median, 18) == region

    def test_counts(self):
        sums = [summary(f"w{i}", "m", [m], [1.0]) for i, m in enumerate([2, 7, 7, 19])]
        assert region_counts(sums, "m") == {"I": 1, "II": 2, "III": 1}


class TestEvaluateTrace:
    def _trace(self, values):
        best = np.minimum.accumulate(values)
        steps = tuple(StepRecord(i + 1, f"v{i}", v, b, None) for i, (v, b) in enumerate(zip(values, best)))
        return SearchTrace(steps, "d")

    def test_found(self):
        r = evaluate_trace(self._trace([5.0, 3.0, 2.0, 4.0]), 2.0, 18, seed=4)
        assert r.measurements_to_optimal == 3 and r.measurements_used == 4
        assert r.recommendation == "v2" and r.normalized_performance == 1.0

    def test_missed_optimum_uses_sentinel(self):
        r = evaluate_trace(self._trace([5.0, 3.0]), 2.0, 18, seed=0)
        assert r.measurements_to_optimal == 19
        assert r.normalized_performance == 1.5


class TestCdf:
    def test_example(self):
        sums = [summary(f"w{i}", "m", [m], [1.0]) for i, m in enumerate([2, 5, 5, 19])]
        cdf = dict(search_cost_cdf(sums, "m"))
        assert len(cdf) == 18
        assert cdf[1] == 0.0 and cdf[2] == 25.0 and cdf[4] == 25.0 and cdf[5] == 75.0 and cdf[18] == 75.0

    def test_empty(self):
        with pytest.raises(ReplayError):
            search_cost_cdf([], "m")

    @given(st.lists(st.integers(1, 19), min_size=1, max_size=30))
    def test_nondecreasing_and_bounded(self, medians):
        sums = [summary(f"w{i}", "m", [m], [1.0]) for i, m in enumerate(medians)]
        pct = [p for _, p in search_cost_cdf(sums, "m")]
        assert all(0 <= p <= 100 for p in pct)
        assert pct == sorted(pct)


class TestCompare:
    def test_identical_is_a_tie(self):
        a = [summary("w", "m", [10, 12, 11], [1.0, 1.1, 1.0])]
        (p,) = compare_methods(a, a)
        assert (p.search_cost_reduction_pct, p.performance_improvement_pct) == (0.0, 0.0)
        assert p.quadrant == "tie"

    def test_fewer_measurements_same_pick(self):
        a = [summary("w", "a", [13], [1.0])]
        b = [summary("w", "b", [10], [1.0])]
        (p,) = compare_methods(a, b)
        assert p.search_cost_reduction_pct == pytest.approx(23.1, abs=0.05)
        assert p.performance_improvement_pct == 0.0
        assert p.quadrant == "win"

    def test_unpaired_seeds(self):
        a = [summary("w", "a", [13], [1.0], seeds=[0])]
        b = [summary("w", "b", [10], [1.0], seeds=[1])]
        with pytest.raises(ComparisonError):
            compare_methods(a, b)

    def test_different_workloads(self):
        with pytest.raises(ComparisonError):
            compare_methods([summary("w1", "a", [1], [1.0])], [summary("w2", "a", [1], [1.0])])

    @pytest.mark.parametrize("c,p,q", [(0, 0, "tie"), (5, 0, "win"), (0, 2, "win"), (5, 2, "win"),
                                       (-5, 0, "loss"), (-1, -1, "loss"), (5, -1, "trade-off"),
                                       (-5, 1, "trade-off"), (1e-12, -1e-12, "tie")])
    def test_quadrants(self, c, p, q):
        assert quadrant(c, p) == q

    def test_counts(self):
        a = [summary(f"w{i}", "a", [10], [1.0]) for i in range(3)]
        b = [summary("w0", "b", [10], [1.0]), summary("w1", "b", [8], [1.0]), summary("w2", "b", [12], [1.0])]
        assert quadrant_counts(compare_methods(a, b)) == {"win": 1, "tie": 1, "trade-off": 0, "loss": 1}


class TestPlan:
    def test_defaults_cover_every_workload(self, cliff):
        plan = ReplayPlan(cliff, (NAIVE_EI,), n_repeats=3, base_seed=5)
        assert plan.workload_ids == tuple(cliff.workloads)
        assert list(plan.seeds()) == [5, 6, 7]

    def test_validation(self, cliff):
        with pytest.raises(ConfigError):
            ReplayPlan(cliff, ())
        with pytest.raises(ConfigError):
            ReplayPlan(cliff, (NAIVE_EI,), workload_ids=("nope",))
        with pytest.raises(ConfigError):
            ReplayPlan(cliff, (NAIVE_EI, NAIVE_EI))
        with pytest.raises(ConfigError):
            ReplayPlan(cliff, (NAIVE_EI,), n_repeats=0)

    def test_failed_pairs_need_a_policy(self, catalog):
        table = make_table({"w": {vm.name: 1.0 + i for i, vm in enumerate(catalog)}}, catalog,
                           failed={("w", "m4.large")})
        with pytest.raises(ReplayError, match="m4.large"):
            ReplayPlan(table, (NAIVE_EI,), n_repeats=1).check_complete()
        ok = replace(NAIVE_EI, fail_policy="worst_case")
        ReplayPlan(table, (ok,), n_repeats=1).check_complete()


class TestRunReplay:
    def test_cells_match_direct_runs(self, cliff):
        plan = ReplayPlan(cliff, (NAIVE_EI, AUG_DELTA), ("cliff-1", "cliff-2"), n_repeats=3, base_seed=10)
        cells = replay_cells(plan, keep_traces=True)
        assert [(c.workload_id, c.method, c.repeat) for c in cells] == [
            (w, m, r) for w in ("cliff-1", "cliff-2") for m in ("naive", "augmented") for r in range(3)]
        for c in cells:
            cfg = NAIVE_EI if c.method == "naive" else AUG_DELTA
            direct = run_search(TableEvaluator(cliff, c.workload_id, cfg.objective), cliff.catalog,
                                cfg.with_seed(10 + c.repeat))
            assert c.trace == direct

    def test_paired_methods_share_initial_vms(self, cliff):
        plan = ReplayPlan(cliff, (NAIVE_EI, AUG_DELTA), ("cliff-3",), n_repeats=4)
        cells = replay_cells(plan, keep_traces=True)
        naive = [c.trace.vm_sequence[:3] for c in cells if c.method == "naive"]
        aug = [c.trace.vm_sequence[:3] for c in cells if c.method == "augmented"]
        assert naive == aug

    def test_summary_json_is_deterministic(self, smooth):
        plan = ReplayPlan(smooth, (NAIVE_EI,), ("smooth-1", "smooth-5"), n_repeats=3)
        a, b = summaries_to_json(run_replay(plan)), summaries_to_json(run_replay(plan))
        assert a == b
        data = json.loads(a)
        assert [w["workload_id"] for w in data["workloads"]] == ["smooth-1", "smooth-5"]
        assert data["workloads"][0]["methods"][0]["seeds"] == [0, 1, 2]

    def test_parallel_matches_serial(self, smooth):
        plan = ReplayPlan(smooth, (NAIVE_EI,), ("smooth-1", "smooth-2"), n_repeats=2)
        assert summaries_to_json(run_replay(plan, jobs=2)) == summaries_to_json(run_replay(plan))

    def test_summaries_csv_header(self, smooth):
        plan = ReplayPlan(smooth, (NAIVE_EI,), ("smooth-1",), n_repeats=2)
        header = summaries_to_csv(run_replay(plan)).splitlines()[0]
        assert header.startswith("workload_id,method,region,mto_median")


class TestTruncation:
    @pytest.mark.parametrize("cfg", [
        replace(NAIVE_EI, stopping=EiFraction(0.05)),
        replace(NAIVE_EI, stopping=EiFraction(0.3)),
        replace(AUG_DELTA, stopping=PredictionDelta(1.0)),
        replace(AUG_DELTA, stopping=PredictionDelta(1.3)),
        replace(NAIVE_EI, stopping=FixedBudget(7)),
    ])
    def test_matches_a_direct_stopped_run(self, cliff, cfg):
        for w in ("cliff-1", "cliff-6"):
            for seed in (0, 3):
                f = lambda: TableEvaluator(cliff, w, cfg.objective)
                full = run_search(f(), cliff.catalog, replace(cfg, stopping=FixedBudget(None), seed=seed))
                direct = run_search(f(), cliff.catalog, cfg.with_seed(seed))
                assert truncate_trace(full, cfg.with_seed(seed)) == direct


class TestSweep:
    def test_rows_and_monotone_cost(self, cliff):
        plan = ReplayPlan(cliff, (AUG_DELTA,), ("cliff-1", "cliff-2"), n_repeats=3)
        regions = {"cliff-1": "I", "cliff-2": "III"}
        rows = sweep_stopping(plan, AUG_DELTA, [1.0, 1.2, 1.4], regions=regions)
        assert [(r.threshold, r.region) for r in rows] == [
            (t, g) for t in (1.0, 1.2, 1.4) for g in ("I", "III", "all")]
        costs = [r.mean_search_cost for r in rows if r.region == "all"]
        assert costs == sorted(costs)
        assert sweep_to_csv(rows).splitlines()[0] == (
            "threshold,region,n_workloads,mean_search_cost,mean_normalized_performance")

    def test_needs_thresholds(self, cliff):
        plan = ReplayPlan(cliff, (AUG_DELTA,), ("cliff-1",), n_repeats=1)
        with pytest.raises(ConfigError):
            sweep_stopping(plan, AUG_DELTA, [], regions={"cliff-1": "I"})

    def test_random_has_nothing_to_sweep(self, cliff):
        rnd = SearchConfig(method="random")
        plan = ReplayPlan(cliff, (rnd,), ("cliff-1",), n_repeats=1)
        with pytest.raises(ConfigError):
            sweep_stopping(plan, rnd, [1.1], regions={"cliff-1": "I"})
