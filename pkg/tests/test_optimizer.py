import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vmbo.dataset import ObjectiveKind, VmSpec
from vmbo.errors import ConfigError, ModelStateError, SearchError
from vmbo.forest import ForestParams, forest_fit
from vmbo.optimizer import (
    EiFraction,
    FixedBudget,
    Method,
    PredictionDelta,
    SearchConfig,
    SearchTrace,
    StepDiagnostics,
    TableEvaluator,
    TrialHistory,
    build_pairwise_training,
    predict_unmeasured,
    run_augmented_bo,
    run_hybrid_bo,
    run_naive_bo,
    run_search,
    select_initial,
    stopping_check,
)
from vmbo.suites import aws_catalog

from .conftest import make_table, profile

METHODS = ("naive", "augmented", "hybrid", "random")


def search(table, workload, **kw):
    cfg = SearchConfig(**kw)
    return run_search(TableEvaluator(table, workload, cfg.objective), table.catalog, cfg)


def history_of(table, workload, names, obj="time"):
    h = TrialHistory()
    f = TableEvaluator(table, workload, obj)
    for n in names:
        h.add(n, *f(n))
    return h


class TestInitialDesign:
    def test_whole_catalog_in_order(self, catalog):
        names = [vm.name for vm in catalog]
        for strategy in ("random", "maxmin"):
            assert select_initial(catalog, strategy, len(catalog), seed=5) == names

    def test_explicit(self, catalog):
        picked = ["c4.xlarge", "m4.large", "r3.2xlarge"]
        assert select_initial(catalog, "explicit", 3, 0, picked) == picked

    def test_explicit_unknown_vm(self, catalog):
        with pytest.raises(ConfigError, match="x1.huge"):
            select_initial(catalog, "explicit", 2, 0, ["c4.xlarge", "x1.huge"])

    def test_maxmin_degenerate_distances(self):
        same = tuple(VmSpec(f"v{i}", 1, 2, 2.0, 1, 0.1) for i in range(3))
        a = select_initial(same, "maxmin", 2, seed=3)
        assert len(set(a)) == 2 and a == select_initial(same, "maxmin", 2, seed=3)

    def test_maxmin_spreads_out(self, catalog):
        picked = select_initial(catalog, "maxmin", 3, seed=0)
        assert len(set(picked)) == 3

    @given(st.integers(0, 10_000), st.integers(2, 18))
    def test_random_distinct_and_seeded(self, seed, n):
        catalog = aws_catalog()
        a = select_initial(catalog, "random", n, seed)
        assert len(set(a)) == n
        assert a == select_initial(catalog, "random", n, seed)

    def test_size_bounds(self, catalog):
        with pytest.raises(ConfigError):
            select_initial(catalog, "random", 1, 0)
        with pytest.raises(ConfigError):
            select_initial(catalog, "random", 19, 0)


class TestPairwise:
    def test_three_measured(self, cliff, catalog):
        names = ["c4.xlarge", "m4.large", "r3.2xlarge"]
        h = history_of(cliff, "cliff-1", names)
        X, y = build_pairwise_training(h, catalog)
        assert X.shape == (9, 14) and y.shape == (9,)
        # row t*k + j pairs source j with destination t
        for t in range(3):
            for j in range(3):
                row = X[3 * t + j]
                np.testing.assert_array_equal(row[:4], cliff.vm(names[j]).feature_vector())
                np.testing.assert_array_equal(row[4:10], h.profiles[j].as_array())
                np.testing.assert_array_equal(row[10:], cliff.vm(names[t]).feature_vector())
                assert y[3 * t + j] == h.values[t]

    def test_self_pair_target_is_own_value(self, cliff, catalog):
        h = history_of(cliff, "cliff-2", ["c3.large", "r4.xlarge", "m3.2xlarge", "c4.large"])
        X, y = build_pairwise_training(h, catalog)
        for j in range(4):
            assert y[4 * j + j] == h.values[j]

    def test_without_self_pairs(self, cliff, catalog):
        h = history_of(cliff, "cliff-1", ["c3.large", "r4.xlarge", "m3.2xlarge"])
        X, y = build_pairwise_training(h, catalog, self_pairs=False)
        assert len(y) == 6
        assert not any(np.array_equal(r[:4], r[10:]) for r in X)

    def test_needs_two(self, cliff, catalog):
        with pytest.raises(ModelStateError):
            build_pairwise_training(history_of(cliff, "cliff-1", ["c3.large"]), catalog)

    def test_prediction_averages_sources(self, cliff, catalog):
        h = history_of(cliff, "cliff-1", ["c4.xlarge", "m4.large", "r3.2xlarge"])
        X, y = build_pairwise_training(h, catalog)
        model = forest_fit(X, y, ForestParams(n_trees=20))
        pred = predict_unmeasured(model, h, catalog)
        assert len(pred) == 15
        # recompute one target by hand: three source -> target queries, averaged
        target = cliff.vm("c3.large").feature_vector()
        rows = [np.concatenate([X[j][:10], target]) for j in range(3)]
        assert pred["c3.large"] == pytest.approx(model.predict(np.array(rows))[0].mean(), rel=1e-15)

    def test_constant_sources_predict_the_constant(self, catalog):
        table = make_table({"w": {vm.name: 5.0 for vm in catalog}})
        h = history_of(table, "w", ["c3.large", "m4.xlarge"])
        model = forest_fit(*build_pairwise_training(h, catalog))
        assert set(predict_unmeasured(model, h, catalog).values()) == {5.0}

    def test_search_counts_rows_and_queries(self, cliff):
        trace = search(cliff, "cliff-3", method="augmented", seed=4)
        n = len(cliff.catalog)
        forest_steps = [d for d in trace.diagnostics if d.phase == "forest"]
        assert len(forest_steps) == n - 3
        for d in forest_steps:
            assert d.training_rows == d.measured ** 2
            assert d.n_queries == d.measured * (n - d.measured)


class TestSearch:
    @pytest.mark.parametrize("method", METHODS)
    def test_exhaustive_budget_finds_optimum(self, cliff, method):
        for w in cliff.workloads[:3]:
            trace = search(cliff, w, method=method, objective="cost", seed=11)
            assert sorted(trace.vm_sequence) == sorted(cliff.vm_names)
            assert trace.recommendation == cliff.optimum(w, ObjectiveKind.COST)[0]

    @pytest.mark.parametrize("method", METHODS)
    def test_trace_invariants(self, smooth, method):
        trace = search(smooth, "smooth-2", method=method, seed=3, stopping=FixedBudget(10))
        assert trace.measurements_used == 10 and trace.stop_reason == "budget"
        assert len(set(trace.vm_sequence)) == 10
        best = [s.best_so_far for s in trace.steps]
        assert best == list(np.minimum.accumulate([s.objective_value for s in trace.steps]))
        assert [s.step_index for s in trace.steps] == list(range(1, 11))
        assert trace.steps[-1].stopped and not any(s.stopped for s in trace.steps[:-1])

    @pytest.mark.parametrize("method", METHODS)
    def test_deterministic(self, cliff, method):
        a = search(cliff, "cliff-5", method=method, seed=8)
        b = search(cliff, "cliff-5", method=method, seed=8)
        assert a.to_json() == b.to_json()

    def test_json_round_trip(self, cliff):
        trace = search(cliff, "cliff-5", method="hybrid", seed=2, stopping=EiFraction(0.1))
        assert SearchTrace.from_json(trace.to_json()) == trace

    @pytest.mark.parametrize("method", ("naive", "augmented", "hybrid"))
    def test_affine_invariance(self, cliff, method):
        scaled = cliff.map_objective(7.3)
        for seed in (0, 1):
            a = search(cliff, "cliff-4", method=method, seed=seed)
            b = search(scaled, "cliff-4", method=method, seed=seed)
            assert a.vm_sequence == b.vm_sequence

    def test_paired_seeds_share_initial_design(self, cliff):
        seqs = [search(cliff, "cliff-1", method=m, seed=21).vm_sequence[:3] for m in METHODS]
        assert all(s == seqs[0] for s in seqs)

    def test_hybrid_never_switching_is_naive(self, cliff):
        a = search(cliff, "cliff-2", method="hybrid", switch_step=18, seed=6)
        b = search(cliff, "cliff-2", method="naive", seed=6)
        assert a.vm_sequence == b.vm_sequence

    def test_hybrid_switching_at_once_is_augmented(self, cliff):
        a = search(cliff, "cliff-2", method="hybrid", switch_step=3, seed=6)
        b = search(cliff, "cliff-2", method="augmented", seed=6)
        assert a.vm_sequence == b.vm_sequence

    def test_hybrid_default_starts_with_two_gp_picks(self, cliff):
        h = search(cliff, "cliff-7", method="hybrid", seed=9)
        n = search(cliff, "cliff-7", method="naive", seed=9)
        assert h.vm_sequence[:5] == n.vm_sequence[:5]
        assert [d.phase for d in h.diagnostics[:3]] == ["gp", "gp", "forest"]

    def test_named_entry_points_check_method(self, cliff):
        f = TableEvaluator(cliff, "cliff-1", "time")
        assert run_naive_bo(f, cliff.catalog, SearchConfig(stopping=FixedBudget(4))).measurements_used == 4
        with pytest.raises(ConfigError):
            run_augmented_bo(f, cliff.catalog, SearchConfig(method="naive"))
        with pytest.raises(ConfigError):
            run_hybrid_bo(f, cliff.catalog, SearchConfig(method="random"))

    def test_ei_fraction_stops_where_the_rule_fires(self, smooth):
        trace = search(smooth, "smooth-1", method="naive", seed=1, objective="cost",
                       stopping=EiFraction(0.1))
        fired = trace.diagnostics[-1]
        assert trace.stop_reason == "ei_fraction" and fired.fired
        assert fired.max_ei < 0.1 * abs(fired.best_so_far)
        for d in trace.diagnostics[:-1]:
            assert d.max_ei >= 0.1 * abs(d.best_so_far)

    def test_prediction_delta_stops_where_the_rule_fires(self, cliff):
        trace = search(cliff, "cliff-1", method="augmented", seed=1, objective="cost",
                       stopping=PredictionDelta(1.1))
        last = trace.diagnostics[-1]
        if trace.stop_reason == "prediction_delta":
            assert last.min_prediction > 1.1 * last.best_so_far
            assert last.delta < 1.1
        for d in trace.diagnostics[:-1]:
            assert d.min_prediction <= 1.1 * d.best_so_far

    def test_evaluator_counts_calls(self, cliff):
        f = TableEvaluator(cliff, "cliff-1", "time")
        run_search(f, cliff.catalog, SearchConfig(stopping=FixedBudget(6)))
        assert f.calls == 6


class TestFailures:
    def _table(self, catalog):
        times = {vm.name: 100.0 + i for i, vm in enumerate(catalog)}
        return make_table({"w": times}, catalog, failed={("w", "c3.xlarge")})

    def test_raise_keeps_the_partial_trace(self, catalog):
        table = self._table(catalog)
        with pytest.raises(SearchError) as info:
            search(table, "w", method="random", seed=0, fail_policy="raise")
        assert info.value.trace is not None
        assert "c3.xlarge" not in info.value.trace.vm_sequence

    def test_worst_case_continues(self, catalog):
        table = self._table(catalog)
        trace = search(table, "w", method="naive", seed=0, fail_policy="worst_case",
                       init_strategy="explicit", initial_vms=("c4.large", "m4.large", "r4.large"))
        step = next(s for s in trace.steps if s.vm_name == "c3.xlarge")
        earlier = [s.objective_value for s in trace.steps[:step.step_index - 1]]
        assert step.objective_value == 10 * max(earlier)
        assert trace.measurements_used == 18


def diag(best, min_prediction=None, max_ei=None, unmeasured=5):
    return StepDiagnostics(measured=3, phase="x", best_so_far=best, n_unmeasured=unmeasured,
                           min_prediction=min_prediction, max_ei=max_ei)


class TestStoppingCheck:
    def test_fixed_budget(self):
        assert not stopping_check(FixedBudget(4), diag(1.0))
        assert stopping_check(FixedBudget(3), diag(1.0))
        assert not stopping_check(FixedBudget(None), diag(1.0))

    def test_nothing_left(self):
        assert stopping_check(FixedBudget(None), diag(1.0, unmeasured=0))

    def test_ei_fraction(self):
        assert stopping_check(EiFraction(0.1), diag(10.0, max_ei=0.0))
        assert stopping_check(EiFraction(0.1), diag(10.0, max_ei=0.99))
        assert not stopping_check(EiFraction(0.1), diag(10.0, max_ei=1.0))
        assert not stopping_check(EiFraction(0.1), diag(-10.0, max_ei=1.5))

    def test_delta_boundary_continues(self):
        assert not stopping_check(PredictionDelta(1.0), diag(5.0, min_prediction=5.0))

    def test_delta_continues_while_improvement_is_predicted(self):
        # min_prediction = 0.9 * best: the model still promises a 10 % gain, so keep going
        assert not stopping_check(PredictionDelta(1.3), diag(10.0, min_prediction=9.0))

    def test_delta_stops_when_everything_looks_worse(self):
        assert stopping_check(PredictionDelta(1.1), diag(10.0, min_prediction=11.5))
        assert not stopping_check(PredictionDelta(1.2), diag(10.0, min_prediction=11.5))

    def test_missing_diagnostic(self):
        with pytest.raises(ConfigError):
            stopping_check(EiFraction(0.1), diag(1.0))
        with pytest.raises(ConfigError):
            stopping_check(PredictionDelta(1.1), diag(1.0))

    @given(st.floats(0.01, 1e4), st.floats(0.01, 1e4), st.floats(0.5, 2.0), st.floats(0.0, 1.0))
    def test_delta_monotone_in_theta(self, best, pred, theta, extra):
        small, large = PredictionDelta(theta), PredictionDelta(theta + extra)
        d = diag(best, min_prediction=pred)
        # a larger theta never stops when a smaller one keeps going
        assert not (stopping_check(large, d) and not stopping_check(small, d))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(("naive", "random")), st.integers(3, 18))
def test_budgeted_searches_never_repeat(seed, method, budget):
    from vmbo.suites import shipped_table

    table = shipped_table("smooth9")
    trace = search(table, "smooth-4", method=method, seed=seed, stopping=FixedBudget(budget))
    assert len(set(trace.vm_sequence)) == trace.measurements_used == budget
