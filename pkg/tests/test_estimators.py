import numpy as np
import pytest

from reszo import (
    BenchmarkSpec,
    BlackBoxObjective,
    make_objective,
    make_rng,
    rszo_estimate,
    sample_unit_sphere,
    szo_estimate,
    tzo_estimate,
)


def constant(c, d=1):
    return BlackBoxObjective(d, lambda x: float(c))


class TestSzo:
    def test_constant_function(self):
        out = szo_estimate(constant(2.0), np.zeros(1), np.ones(1), 0.5)
        assert out.gradient_estimate[0] == pytest.approx(4.0, abs=1e-12)
        assert out.evaluations_used == 1

    def test_identity_function(self):
        obj = BlackBoxObjective(1, lambda x: float(x[0]))
        out = szo_estimate(obj, np.zeros(1), np.ones(1), 0.1)
        assert out.gradient_estimate[0] == pytest.approx(1.0, abs=1e-12)

    def test_dimension_factor(self):
        obj = BlackBoxObjective(2, lambda x: float(x[0]))
        out = szo_estimate(obj, np.zeros(2), np.array([1.0, 0.0]), 0.2)
        np.testing.assert_allclose(out.gradient_estimate, [2.0, 0.0], atol=1e-12)

    def test_rejects_nonpositive_delta(self):
        with pytest.raises(ValueError):
            szo_estimate(constant(1.0), np.zeros(1), np.ones(1), 0.0)


class TestRszo:
    def test_constant_function_gives_zero(self):
        obj = constant(3.5, d=4)
        u = sample_unit_sphere(make_rng(1), 4)
        out = rszo_estimate(obj, np.zeros(4), u, 0.3, prev_value=3.5)
        np.testing.assert_array_equal(out.gradient_estimate, np.zeros(4))

    def test_identity_function(self):
        obj = BlackBoxObjective(1, lambda x: float(x[0]))
        out = rszo_estimate(obj, np.zeros(1), np.ones(1), 0.1, prev_value=-0.1)
        assert out.gradient_estimate[0] == pytest.approx(2.0, abs=1e-12)

    def test_chaining_uses_one_evaluation_per_step(self):
        obj = make_objective(BenchmarkSpec("ridge", d=3, n_samples=10, seed=1))
        rng = make_rng(4)
        x = np.zeros(3)
        prev = obj.evaluate(x + 0.1 * sample_unit_sphere(rng, 3))  # seed evaluation
        k = 5
        for _ in range(k):
            out = rszo_estimate(obj, x, sample_unit_sphere(rng, 3), 0.1, prev)
            prev = out.last_value
            x = x - 1e-3 * out.gradient_estimate
        assert obj.query_count == k + 1


class TestTzo:
    def test_quadratic_is_exact(self):
        obj = BlackBoxObjective(1, lambda x: float(x[0] ** 2))
        out = tzo_estimate(obj, np.ones(1), np.ones(1), 0.1)
        assert out.gradient_estimate[0] == pytest.approx(2.0, abs=1e-12)
        assert out.evaluations_used == 2

    def test_constant_gives_zero(self):
        out = tzo_estimate(constant(7.0, d=3), np.zeros(3), np.array([1.0, 0, 0]), 0.2)
        np.testing.assert_array_equal(out.gradient_estimate, np.zeros(3))

    def test_linear_is_exact(self):
        d = 6
        a = make_rng(3).standard_normal(d)
        obj = BlackBoxObjective(d, lambda x: float(a @ x))
        u = sample_unit_sphere(make_rng(9), d)
        out = tzo_estimate(obj, np.zeros(d), u, 0.05)
        np.testing.assert_allclose(out.gradient_estimate, d * (a @ u) * u, rtol=1e-9)


def test_estimates_are_collinear_with_direction():
    obj = make_objective(BenchmarkSpec("ridge", d=5, n_samples=15, seed=2))
    rng = make_rng(12)
    x = 0.1 * np.ones(5)
    for _ in range(10):
        u = sample_unit_sphere(rng, 5)
        for out in (
            szo_estimate(obj, x, u, 0.1),
            rszo_estimate(obj, x, u, 0.1, prev_value=1.0),
            tzo_estimate(obj, x, u, 0.1),
        ):
            est = out.gradient_estimate
            residual = est - (est @ u) * u
            assert np.linalg.norm(residual) <= 1e-12 * (1.0 + np.linalg.norm(est))


class TestSharedExpectation:
    """Monte Carlo check that the three estimators share their mean.

    The residual-feedback previous point is held fixed across draws so
    its offset has zero mean in the direction average.
    """

    def _sample_estimates(self, n=20_000, d=4, delta=0.05, seed=42):
        spec = BenchmarkSpec("ridge", d=d, n_samples=30, seed=3)
        obj = make_objective(spec)
        x = 0.2 * np.ones(d)
        prev_u = sample_unit_sphere(make_rng(1), d)
        prev_value = obj.evaluate(x - 0.01 + delta * prev_u)
        rng = make_rng(seed)
        szo = np.empty((n, d))
        rszo = np.empty((n, d))
        tzo = np.empty((n, d))
        for i in range(n):
            u = sample_unit_sphere(rng, d)
            szo[i] = szo_estimate(obj, x, u, delta).gradient_estimate
            rszo[i] = rszo_estimate(obj, x, u, delta, prev_value).gradient_estimate
            tzo[i] = tzo_estimate(obj, x, u, delta).gradient_estimate
        return szo, rszo, tzo

    def test_pairwise_mean_agreement(self):
        szo, rszo, tzo = self._sample_estimates()
        n = len(szo)
        for a, b in [(szo, rszo), (szo, tzo), (rszo, tzo)]:
            gap = np.abs(a.mean(axis=0) - b.mean(axis=0))
            pooled_se = np.sqrt(a.var(axis=0, ddof=1) / n + b.var(axis=0, ddof=1) / n)
            assert np.all(gap <= 5.0 * pooled_se)

    def test_two_point_variance_is_lower(self):
        szo, _, tzo = self._sample_estimates(n=20_000)
        assert tzo.var(axis=0, ddof=1).sum() < szo.var(axis=0, ddof=1).sum()
