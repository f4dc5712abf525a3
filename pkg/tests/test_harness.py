import json

import numpy as np
import pytest

from reszo import (
    AggregateCurve,
    BenchmarkSpec,
    ExperimentConfig,
    ExperimentFailedError,
    OptimizerConfig,
    RunTrace,
    aggregate_trials,
    experiment_from_dict,
    experiment_to_dict,
    export_results,
    grid_search,
    load_curve_csv,
    merge_curves,
    run_experiment,
)
from reszo.harness import queries_to_reach, write_compare_csv


def synthetic_trace(queries, f_values, diverged=False):
    queries = np.asarray(queries, dtype=np.int64)
    n = len(queries)
    return RunTrace(
        iterations=np.arange(n, dtype=np.int64),
        queries=queries,
        f_values=np.asarray(f_values, dtype=np.float64),
        grad_est_norms=np.zeros(n),
        deltas=np.zeros(n),
        solver_paths=np.zeros(n, dtype=np.int8),
        final_x=np.zeros(1),
        diverged=diverged,
        divergence_iteration=n - 1 if diverged else None,
    )


def small_experiment(**kw):
    base = dict(
        benchmark=BenchmarkSpec("ridge", d=4, n_samples=20, seed=3),
        optimizer=OptimizerConfig(
            method="l_reszo",
            eta=1e-4,
            delta=0.01,
            iterations=20,
            window_m=6,
            warm_eta=1e-5,
            warm_delta=0.05,
        ),
        trials=3,
        base_seed=50,
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestAggregateTrials:
    def test_hand_computed_percentiles(self):
        traces = [synthetic_trace([1], [v]) for v in (1.0, 2.0, 3.0, 4.0, 5.0)]
        curve = aggregate_trials(traces, confidence=0.8, optimum_value=0.0)
        assert curve.mean_gap[0] == pytest.approx(3.0)
        assert curve.ci_low[0] == pytest.approx(1.4)
        assert curve.ci_high[0] == pytest.approx(4.6)

    def test_single_trial_degenerate_band(self):
        curve = aggregate_trials(
            [synthetic_trace([1, 2, 3], [5.0, 4.0, 3.0])], 0.8, optimum_value=1.0
        )
        np.testing.assert_array_equal(curve.mean_gap, [4.0, 3.0, 2.0])
        np.testing.assert_array_equal(curve.ci_low, curve.mean_gap)
        np.testing.assert_array_equal(curve.ci_high, curve.mean_gap)

    def test_identical_traces_zero_width(self):
        traces = [synthetic_trace([1, 2], [3.0, 1.0]) for _ in range(6)]
        curve = aggregate_trials(traces, 0.8)
        np.testing.assert_array_equal(curve.ci_low, curve.ci_high)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        traces = [synthetic_trace([1, 2, 3], rng.uniform(1, 2, 3)) for _ in range(7)]
        a = aggregate_trials(traces, 0.8)
        b = aggregate_trials(traces[::-1], 0.8)
        np.testing.assert_array_equal(a.mean_gap, b.mean_gap)
        np.testing.assert_array_equal(a.ci_low, b.ci_low)
        np.testing.assert_array_equal(a.ci_high, b.ci_high)

    def test_forward_fill_alignment(self):
        t1 = synthetic_trace([1, 3], [10.0, 6.0])
        t2 = synthetic_trace([2, 4], [8.0, 2.0])
        curve = aggregate_trials([t1, t2], 0.8)
        np.testing.assert_array_equal(curve.queries, [1, 2, 3, 4])
        # t1 holds 10 at q=2; t2 is backfilled to 8 at q=1.
        np.testing.assert_allclose(curve.mean_gap, [9.0, 9.0, 7.0, 4.0])

    def test_diverged_trials_excluded_but_counted(self):
        good = synthetic_trace([1, 2], [5.0, 4.0])
        bad = synthetic_trace([1], [9.0], diverged=True)
        curve = aggregate_trials([good, bad], 0.8)
        np.testing.assert_array_equal(curve.mean_gap, [5.0, 4.0])
        assert curve.diverged_count == 1
        assert curve.n_trials == 2

    def test_all_diverged_rejected(self):
        with pytest.raises(ValueError):
            aggregate_trials([synthetic_trace([1], [1.0], diverged=True)], 0.8)

    def test_band_contains_mean(self):
        # Extreme skew: plain percentiles would exclude the mean.
        traces = [synthetic_trace([1], [v]) for v in [0.0] * 99 + [1e9]]
        curve = aggregate_trials(traces, 0.8)
        assert curve.ci_low[0] <= curve.mean_gap[0] <= curve.ci_high[0]


class TestRunExperiment:
    def test_trials_are_seeded_independently(self):
        results, curve = run_experiment(small_experiment())
        assert [r.seed for r in results] == [50, 51, 52]
        assert len({tuple(r.trace.f_values[:3]) for r in results}) == 3
        assert curve.n_trials == 3 and curve.diverged_count == 0

    def test_deterministic_across_calls(self):
        _, a = run_experiment(small_experiment())
        _, b = run_experiment(small_experiment())
        np.testing.assert_array_equal(a.mean_gap, b.mean_gap)

    def test_workers_do_not_change_results(self):
        _, a = run_experiment(small_experiment())
        _, b = run_experiment(small_experiment(workers=3))
        np.testing.assert_array_equal(a.mean_gap, b.mean_gap)
        np.testing.assert_array_equal(a.ci_low, b.ci_low)

    def test_all_diverged_raises_experiment_failed(self):
        exp = small_experiment(
            optimizer=OptimizerConfig(
                method="szo", eta=1e9, delta=0.01, iterations=30
            ),
            trials=2,
        )
        with pytest.raises(ExperimentFailedError):
            run_experiment(exp)

    def test_surviving_trials_unaffected_by_divergent_ones(self):
        # A diverging configuration for some seeds must not perturb the
        # per-trial values of the surviving seeds.
        exp = small_experiment(trials=2)
        solo = small_experiment(trials=1)
        full, _ = run_experiment(exp)
        single, _ = run_experiment(solo)
        np.testing.assert_array_equal(
            full[0].trace.f_values, single[0].trace.f_values
        )


class TestGridSearch:
    def test_single_cell_returned(self):
        best, table = grid_search(small_experiment(), [1e-4], [0.01], trials=2)
        assert best.eta == 1e-4 and best.delta == 0.01
        assert len(table) == 1
        assert np.isfinite(best.score)

    def test_divergent_cell_scored_infinite_and_not_selected(self):
        exp = small_experiment(
            optimizer=OptimizerConfig(
                method="szo", eta=1e-6, delta=0.05, iterations=40
            )
        )
        best, table = grid_search(exp, [1e-6, 1e9], [0.05], trials=2)
        scores = {cell.eta: cell.score for cell in table}
        assert scores[1e9] == float("inf")
        assert best.eta == 1e-6

    def test_tie_breaks_prefer_smaller_eta(self):
        exp = small_experiment(
            optimizer=OptimizerConfig(method="szo", eta=1e9, delta=0.05, iterations=10)
        )
        best, _ = grid_search(exp, [2e9, 1e9], [0.05, 0.06], trials=1)
        assert best.eta == 1e9 and best.delta == 0.05


def test_queries_to_reach():
    curve = AggregateCurve(
        queries=np.array([1, 2, 3]),
        mean_gap=np.array([9.0, 4.0, 2.0]),
        ci_low=np.zeros(3),
        ci_high=np.zeros(3),
    )
    assert queries_to_reach(curve, 4.0) == 2
    assert queries_to_reach(curve, 1.0) == float("inf")


class TestExport:
    def test_curve_roundtrip_bit_exact(self, tmp_path):
        results, curve = run_experiment(small_experiment())
        exp = small_experiment()
        paths = export_results(curve, results, tmp_path / "out", exp=exp, version="t")
        loaded = load_curve_csv(paths["curve"])
        np.testing.assert_array_equal(loaded.queries, curve.queries)
        np.testing.assert_array_equal(loaded.mean_gap, curve.mean_gap)
        np.testing.assert_array_equal(loaded.ci_low, curve.ci_low)
        np.testing.assert_array_equal(loaded.ci_high, curve.ci_high)

    def test_trials_csv_columns(self, tmp_path):
        results, curve = run_experiment(small_experiment())
        paths = export_results(curve, results, tmp_path / "out")
        header = (paths["trials"]).read_text().splitlines()[0]
        assert header == "trial,iteration,queries,f_value,grad_est_norm,delta_t"

    def test_trials_csv_gains_diagnostic_columns(self, tmp_path):
        results, curve = run_experiment(small_experiment(record_diagnostics=True))
        paths = export_results(curve, results, tmp_path / "out")
        header = (paths["trials"]).read_text().splitlines()[0]
        assert header.endswith("xi_norm,cd_ratio")

    def test_manifest_reproduces_curve_bit_exactly(self, tmp_path):
        exp = small_experiment()
        results, curve = run_experiment(exp)
        paths = export_results(curve, results, tmp_path / "out", exp=exp, version="t")
        manifest = json.loads(paths["manifest"].read_text())
        rebuilt = experiment_from_dict(manifest)
        _, again = run_experiment(rebuilt)
        np.testing.assert_array_equal(curve.mean_gap, again.mean_gap)
        np.testing.assert_array_equal(curve.queries, again.queries)

    def test_stride_subsamples_rows(self, tmp_path):
        results, curve = run_experiment(small_experiment())
        export_results(curve, results, tmp_path / "a")
        export_results(curve, results, tmp_path / "b", stride=5)
        rows_a = (tmp_path / "a" / "curve.csv").read_text().splitlines()
        rows_b = (tmp_path / "b" / "curve.csv").read_text().splitlines()
        assert len(rows_b) - 1 == (len(rows_a) - 1 + 4) // 5


def test_experiment_dict_roundtrip():
    exp = small_experiment(record_diagnostics=True, stride=2, workers=2)
    again = experiment_from_dict(experiment_to_dict(exp))
    assert again == exp


def test_merge_and_compare_csv(tmp_path):
    c1 = AggregateCurve(
        queries=np.array([1, 3]),
        mean_gap=np.array([4.0, 2.0]),
        ci_low=np.array([4.0, 2.0]),
        ci_high=np.array([4.0, 2.0]),
    )
    c2 = AggregateCurve(
        queries=np.array([2, 4]),
        mean_gap=np.array([5.0, 1.0]),
        ci_low=np.array([5.0, 1.0]),
        ci_high=np.array([5.0, 1.0]),
    )
    grid, merged = merge_curves(["a", "b"], [c1, c2])
    np.testing.assert_array_equal(grid, [1, 2, 3, 4])
    np.testing.assert_array_equal(merged["a"][0], [4.0, 4.0, 2.0, 2.0])
    np.testing.assert_array_equal(merged["b"][0], [5.0, 5.0, 5.0, 1.0])
    path = tmp_path / "cmp.csv"
    write_compare_csv(["a", "b"], [c1, c2], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "queries,a_mean,a_ci_low,a_ci_high,b_mean,b_ci_low,b_ci_high"
    assert len(lines) == 5


class TestGridSearchDeskScale:
    """Grid-search behavior on the flagship ridge configuration."""

    RIDGE = BenchmarkSpec("ridge", d=100, n_samples=1000, lam=0.1, seed=0)

    def test_zero_perturbation_cell_never_selected(self):
        opt = OptimizerConfig(
            method="l_reszo", eta=8e-6, delta=0.002, iterations=1200,
            window_m=110, warm_eta=2.5e-6, warm_delta=0.2,
        )
        exp = ExperimentConfig(benchmark=self.RIDGE, optimizer=opt, base_seed=500)
        best, table = grid_search(exp, [8e-6], [0.002, 0.0], trials=2)
        scores = {cell.delta: cell for cell in table}
        assert scores[0.0].score == float("inf")
        assert scores[0.0].diverged_trials == 2
        assert best.delta == 0.002 and np.isfinite(best.score)

    def test_bracketing_grid_stays_near_reference_cell(self):
        # A small grid around the reference two-point settings must not
        # select anything more than twice worse than that cell.
        opt = OptimizerConfig(method="tzo", eta=1.1e-5, delta=0.002, iterations=600)
        exp = ExperimentConfig(benchmark=self.RIDGE, optimizer=opt, base_seed=900)
        best, table = grid_search(exp, [5e-6, 1.1e-5], [0.002, 0.01], trials=3)
        reference = next(
            c for c in table if c.eta == 1.1e-5 and c.delta == 0.002
        )
        assert np.isfinite(reference.score)
        assert best.score <= 2.0 * reference.score
