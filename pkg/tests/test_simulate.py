import io

import numpy as np
import pytest

from midqr.middist import population_mid_quantile
from midqr.simulate import (
    REFERENCE_COMPOSITIONS,
    ScenarioSpec,
    conditional_pmf,
    generate,
    mean_true_mid_quantile,
    run_study,
    true_mid_quantile,
    true_slope,
)


class TestScenarioSpec:
    def test_unknown_id(self):
        with pytest.raises(ValueError, match="unknown scenario"):
            ScenarioSpec("9z", 100)

    def test_minimum_n(self):
        with pytest.raises(ValueError):
            ScenarioSpec("1a", 10)

    def test_kinds_and_links(self):
        assert ScenarioSpec("1a", 100).covariate_kinds == ("ordered",)
        assert ScenarioSpec("3b", 100).covariate_kinds == (
            "continuous", "continuous",
        )
        assert ScenarioSpec("3a", 100).link_name == "log"
        assert ScenarioSpec("4b", 100).link_name == "logit"


class TestGenerate:
    def test_homoscedastic_support(self):
        y, W = generate(ScenarioSpec("1a", 2000, seed=1))
        shifted = y - (1 + 2 * W[:, 0])
        assert set(np.unique(shifted)) <= set(range(1, 11))

    def test_heteroscedastic_support(self):
        y, W = generate(ScenarioSpec("2a", 2000, seed=2))
        eps = (y - (1 + 2 * W[:, 0])) / (W[:, 0] + 1)
        assert np.allclose(eps, np.round(eps))
        assert eps.min() >= 1 and eps.max() <= 10

    def test_poisson_counts(self):
        y, W = generate(ScenarioSpec("3a", 3000, seed=3))
        assert np.all(y >= 0) and np.allclose(y, np.round(y))
        for w in (1.0, 2.0, 3.0):
            mu = np.exp(0.5 + 2 * w)
            ybar = y[W[:, 0] == w].mean()
            assert abs(ybar - mu) < 4 * np.sqrt(mu / 900)

    def test_binary_support(self):
        y, W = generate(ScenarioSpec("4a", 500, seed=4))
        assert set(np.unique(y)) <= {0.0, 1.0}

    def test_continuous_covariates(self):
        y, W = generate(ScenarioSpec("1b", 4000, seed=5))
        assert W.shape == (4000, 2)
        assert 0 <= W[:, 0].min() and W[:, 0].max() <= 5
        # second covariate is chi-square(3)/3: mean 1, variance 2/3
        assert abs(W[:, 1].mean() - 1.0) < 0.07

    def test_deterministic(self):
        a = generate(ScenarioSpec("2b", 200, seed=11))
        b = generate(ScenarioSpec("2b", 200, seed=11))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])


class TestTrueMidQuantile:
    def test_homoscedastic_enumeration(self):
        # Y | w=0 is 1 + DU(1, 10); its mid-median is 6.5
        assert true_mid_quantile("1a", 0.0, 0.5) == pytest.approx(6.5)

    def test_binary_median_equals_success_probability(self):
        from scipy.special import expit

        for w in range(6):
            assert true_mid_quantile("4a", float(w), 0.5) == pytest.approx(
                expit(3.0 + w), abs=1e-12
            )

    def test_matches_population_oracle(self):
        pmf = conditional_pmf("3a", 2.0)
        assert true_mid_quantile("3a", 2.0, 0.4) == population_mid_quantile(
            pmf, 0.4
        )

    def test_heteroscedastic_affine_structure(self):
        w = 3.0
        h = true_mid_quantile("2a", w, 0.37)
        base = true_mid_quantile("1a", 0.0, 0.37) - 1.0  # DU(1,10) quantile
        assert h == pytest.approx(1 + 2 * w + (w + 1) * base, rel=1e-12)

    def test_reference_average(self):
        assert mean_true_mid_quantile("1a", 0.5) == pytest.approx(
            11.494, abs=5e-4
        )

    def test_reference_compositions_sum_to_1000(self):
        for values, counts in REFERENCE_COMPOSITIONS.values():
            assert sum(counts) == 1000
            assert len(values) == len(counts)

    def test_true_slopes(self):
        assert true_slope("1a", 0.5) == 2.0
        assert true_slope("3a", 0.3) == 2.0
        assert true_slope("2a", 0.5) == pytest.approx(2.0 + 5.5)
        assert true_slope("1b", 0.5) is None


class TestRunStudy:
    def test_oracle_estimator_zero_bias_rmse(self):
        spec = ScenarioSpec("1a", 60, seed=21)

        def oracle(y, W, p):
            return np.array([
                true_mid_quantile("1a", w, p) for w in W[:, 0]
            ])

        table = run_study(spec, R=3, p_levels=(0.3, 0.5), estimator=oracle)
        np.testing.assert_allclose(table.bias, 0.0, atol=1e-12)
        np.testing.assert_allclose(table.rmse, 0.0, atol=1e-12)

    def test_deterministic(self):
        spec = ScenarioSpec("1a", 80, seed=22)
        a = run_study(spec, R=4, p_levels=(0.5,))
        b = run_study(spec, R=4, p_levels=(0.5,))
        np.testing.assert_array_equal(a.bias, b.bias)
        np.testing.assert_array_equal(a.rmse, b.rmse)
        np.testing.assert_array_equal(a.slope_variance, b.slope_variance)

    def test_rmse_dominates_bias(self):
        spec = ScenarioSpec("2a", 100, seed=23)
        t = run_study(spec, R=6, p_levels=(0.3, 0.5, 0.7))
        assert np.all(t.rmse >= np.abs(t.bias))

    def test_failures_counted_and_excluded(self):
        spec = ScenarioSpec("1a", 60, seed=24)
        calls = {"n": 0}

        def flaky(y, W, p):
            calls["n"] += 1
            if calls["n"] == 1:
                raise RuntimeError("boom")
            return np.array([
                true_mid_quantile("1a", w, p) for w in W[:, 0]
            ])

        t = run_study(spec, R=4, p_levels=(0.5,), estimator=flaky)
        assert t.failures == 1
        np.testing.assert_allclose(t.bias, 0.0, atol=1e-12)

    def test_coverage_levels_must_be_fit(self):
        with pytest.raises(ValueError, match="among the fit levels"):
            run_study(ScenarioSpec("1a", 60, seed=1), R=2,
                      p_levels=(0.5,), coverage_levels=(0.3,))

    def test_minimum_replications(self):
        with pytest.raises(ValueError):
            run_study(ScenarioSpec("1a", 60, seed=1), R=1)

    def test_all_replications_failing_raises(self):
        def doomed(y, W, p):
            raise RuntimeError("nope")

        with pytest.raises(RuntimeError, match="every replication failed"):
            run_study(ScenarioSpec("1a", 60, seed=1), R=3,
                      p_levels=(0.5,), estimator=doomed)


class TestMetricsTable:
    def _table(self):
        return run_study(ScenarioSpec("1a", 80, seed=25), R=3,
                         p_levels=(0.3, 0.5))

    def test_csv_round_trip(self):
        t = self._table()
        buf = io.StringIO()
        t.to_csv(buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0].startswith("scenario,n,R,p,bias")
        assert len(lines) == 3
        first = lines[1].split(",")
        assert first[0] == "1a"
        assert float(first[3]) == 0.3
        assert float(first[4]) == t.bias[0]

    def test_text_layout(self):
        txt = self._table().to_text()
        assert "Bias" in txt and "RMSE" in txt and "Hbar" in txt
        assert "scenario 1a" in txt
