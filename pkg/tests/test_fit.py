import numpy as np
import pytest

from midqr.fit import (
    BracketError,
    InterpolatedMidCdf,
    admissible_range,
    closed_form_fit,
    gradient,
    hessian,
    interpolate,
    locate_bracket,
    numerical_fit,
    objective,
    predict,
)
from midqr.kernel_cdf import (
    Bandwidths,
    ConditionalMidCdfMatrix,
    CovariateSpec,
    conditional_cdf,
    conditional_mid_probabilities,
)
from midqr.links import LinkDomainError, get_link
from midqr.middist import mid_cdf, tabulate
from midqr.model import fit_mid_quantile


def matrix_from_rows(grid, rows):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    return ConditionalMidCdfMatrix(
        np.asarray(grid, dtype=float), rows, np.full_like(rows, 1e-8)
    )


def replicated_marginal(values, n):
    """Identical-rows matrix built from a tabulated sample."""
    mc = mid_cdf(tabulate(values))
    return matrix_from_rows(mc.values, np.tile(mc.midprobs, (n, 1)))


ROW = (0.25, 0.625, 0.875)
GRID = (1.0, 2.0, 3.0)


class TestAdmissibleRange:
    def test_componentwise(self):
        pim = matrix_from_rows(GRID, [[0.1, 0.5, 0.9], [0.2, 0.5, 0.8]])
        rng = admissible_range(pim)
        assert (rng.lo, rng.hi) == (0.2, 0.8)
        assert not rng.empty
        assert rng.contains(0.2) and rng.contains(0.8)
        assert not rng.contains(0.19)

    def test_identical_rows(self):
        pim = replicated_marginal([1, 1, 2, 3], 5)
        rng = admissible_range(pim)
        assert (rng.lo, rng.hi) == (0.25, 0.875)

    def test_empty_flag(self):
        pim = matrix_from_rows(GRID, [[0.1, 0.5, 0.7], [0.8, 0.85, 0.9]])
        assert admissible_range(pim).empty

    def test_zero_inflation_narrows_from_below(self):
        # heavy mass at zero raises every first mid-probability, so the
        # admissible range loses low levels rather than high ones
        rng = np.random.default_rng(26)
        spec = CovariateSpec(("ordered",))
        bw = Bandwidths(np.array([0.2]))
        W = rng.integers(0, 3, 200).astype(float)[:, None]
        base = rng.poisson(4.0, 200).astype(float) + 1.0
        plain = conditional_mid_probabilities(
            conditional_cdf(base, W, bw, spec)
        )
        inflated = base.copy()
        inflated[rng.random(200) < 0.45] = 0.0
        zi = conditional_mid_probabilities(
            conditional_cdf(inflated, W, bw, spec)
        )
        lo_plain = admissible_range(plain).lo
        lo_zi = admissible_range(zi).lo
        assert lo_zi > lo_plain
        assert lo_zi > 0.15
        assert admissible_range(zi).hi > 0.9


class TestInterpolate:
    def _icdf(self):
        return InterpolatedMidCdf.from_matrix(matrix_from_rows(GRID, [ROW]), 0)

    def test_knot_evaluation(self):
        icdf = self._icdf()
        for eta, pi in zip(GRID, ROW):
            assert interpolate(icdf, eta) == pi

    def test_midpoint_linearity(self):
        icdf = self._icdf()
        assert interpolate(icdf, 1.5) == pytest.approx((0.25 + 0.625) / 2)

    def test_flat_tails(self):
        icdf = self._icdf()
        assert interpolate(icdf, 103.0) == 0.875
        assert interpolate(icdf, -50.0) == 0.25


class TestLocateBracket:
    def _icdf(self):
        return InterpolatedMidCdf.from_matrix(matrix_from_rows(GRID, [ROW]), 0)

    def test_first_segment(self):
        assert locate_bracket(self._icdf(), 0.5) == 0

    def test_knot_hit_uses_segment_starting_there(self):
        assert locate_bracket(self._icdf(), 0.625) == 1

    def test_top_knot_uses_last_segment(self):
        assert locate_bracket(self._icdf(), 0.875) == 1

    def test_below_range_raises_with_row(self):
        with pytest.raises(BracketError) as err:
            locate_bracket(self._icdf(), 0.1)
        assert err.value.row == 0


class TestClosedFormFit:
    def test_single_row_inverts_interpolant(self):
        pim = matrix_from_rows(GRID, [ROW])
        beta = closed_form_fit(np.ones((1, 1)), pim, 0.5)
        assert beta[0] == pytest.approx(1 + 0.25 / 0.375)

    def test_identical_rows_intercept_is_common_inverse(self):
        pim = replicated_marginal([1, 1, 2, 3], 8)
        beta = closed_form_fit(np.ones((8, 1)), pim, 0.5)
        assert beta[0] == pytest.approx(1 + 0.25 / 0.375, abs=1e-12)

    def test_saturated_binary_recovers_cell_means(self):
        # mid-median of a binary response equals P(Y=1|x) cell by cell
        y = np.array([0.0, 1, 1, 0, 1, 1, 1, 0, 1, 1, 0, 0])
        cell = np.array([0.0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1])
        cdf = conditional_cdf(
            y, cell[:, None], Bandwidths(np.array([0.0])),
            CovariateSpec(("unordered",)),
        )
        pim = conditional_mid_probabilities(cdf)
        X = np.column_stack([cell == 0, cell == 1]).astype(float)
        beta = closed_form_fit(X, pim, 0.5)
        assert beta[0] == pytest.approx(y[cell == 0].mean())
        assert beta[1] == pytest.approx(y[cell == 1].mean())

    def test_rank_deficiency(self):
        pim = replicated_marginal([1, 1, 2, 3], 6)
        X = np.column_stack([np.ones(6), np.full(6, 2.0)])
        with pytest.raises(np.linalg.LinAlgError):
            closed_form_fit(X, pim, 0.5)

    def test_outside_range_raises_bracket_error(self):
        pim = replicated_marginal([1, 1, 2, 3], 4)
        with pytest.raises(BracketError, match="numerical_fit"):
            closed_form_fit(np.ones((4, 1)), pim, 0.95)

    def test_log_domain_violation_lists_rows(self):
        pim = matrix_from_rows((0.0, 1.0), [[0.2, 0.8]])
        with pytest.raises(LinkDomainError):
            # p = 0.2 inverts exactly to the knot u = 0, outside log's domain
            closed_form_fit(np.ones((1, 1)), pim, 0.2, "log")

    def test_equivariance_under_affine_response(self):
        rng = np.random.default_rng(14)
        y = rng.integers(0, 9, 80).astype(float)
        W = rng.integers(0, 4, 80).astype(float)[:, None]
        spec = CovariateSpec(("ordered",))
        bw = Bandwidths(np.array([0.2]))
        X = np.column_stack([np.ones(80), W[:, 0]])
        a, c = 2.5, -3.0
        for p in (0.3, 0.6):
            pim = conditional_mid_probabilities(conditional_cdf(y, W, bw, spec))
            beta = closed_form_fit(X, pim, p)
            pim2 = conditional_mid_probabilities(
                conditional_cdf(a * y + c, W, bw, spec)
            )
            beta2 = closed_form_fit(X, pim2, p)
            np.testing.assert_allclose(
                beta2, a * beta + np.array([c, 0.0]), atol=1e-9
            )


class TestObjective:
    def test_zero_at_closed_form_when_rows_identical(self):
        pim = replicated_marginal([0, 0, 1, 2, 5], 9)
        X = np.column_stack([np.ones(9), np.linspace(-1, 1, 9)])
        beta = closed_form_fit(X, pim, 0.4)
        assert objective(beta, X, pim, 0.4) <= 1e-20

    def test_flat_tail_plateau_value(self):
        pim = matrix_from_rows(GRID, [ROW, ROW])
        X = np.ones((2, 1))
        val = objective(np.array([100.0]), X, pim, 0.5)
        assert val == pytest.approx((0.5 - 0.875) ** 2)

    def test_perturbing_minimizer_increases_objective(self):
        pim = replicated_marginal([0, 1, 1, 3, 4, 4], 7)
        X = np.column_stack([np.ones(7), np.arange(7.0)])
        beta = closed_form_fit(X, pim, 0.55)
        base = objective(beta, X, pim, 0.55)
        rng = np.random.default_rng(15)
        for _ in range(20):
            d = rng.standard_normal(2) * 0.05
            assert objective(beta + d, X, pim, 0.55) >= base


def random_instance(rng, n=40, q=2, identical=False):
    """Random fitting instance; identical=True shares one row across i."""
    values = rng.integers(0, 10, size=rng.integers(15, 40))
    if identical:
        pim = replicated_marginal(values, n)
    else:
        y = rng.integers(0, 10, n).astype(float)
        W = rng.integers(0, 3, n).astype(float)[:, None]
        cdf = conditional_cdf(
            y, W, Bandwidths(np.array([0.3])), CovariateSpec(("ordered",))
        )
        pim = conditional_mid_probabilities(cdf)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, q - 1))])
    return X, pim


class TestDerivatives:
    def test_gradient_zero_at_zero_residual_minimizer(self):
        rng = np.random.default_rng(16)
        X, pim = random_instance(rng, identical=True)
        beta = closed_form_fit(X, pim, 0.5)
        g = gradient(beta, X, pim, 0.5)
        np.testing.assert_allclose(g, 0.0, atol=1e-12)

    def test_single_observation_formula(self):
        pim = matrix_from_rows(GRID, [ROW])
        X = np.array([[1.0, 2.0]])
        beta = np.array([0.5, 0.55])  # eta = 1.6, inside the first segment
        p = 0.5
        eta = float((X @ beta)[0])
        b = (0.625 - 0.25) / 1.0
        G = 0.25 + b * (eta - 1.0)
        expected = -2.0 * (p - G) * b * X[0]
        np.testing.assert_allclose(gradient(beta, X, pim, p), expected)

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(17)
        for identical in (True, False):
            X, pim = random_instance(rng, identical=identical)
            for link in ("identity", "log"):
                fam = get_link(link)
                p = float(rng.uniform(0.25, 0.75))
                beta = np.array([fam.h(np.median(pim.grid) + 0.6), 0.05])
                g = gradient(beta, X, pim, p, fam)
                fd = np.zeros_like(g)
                for h in range(2):
                    e = np.zeros(2)
                    e[h] = 1e-6 * (1 + abs(beta[h]))
                    fd[h] = (
                        objective(beta + e, X, pim, p, fam)
                        - objective(beta - e, X, pim, p, fam)
                    ) / (2 * e[h])
                np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-10)

    def test_identity_hessian_reduction(self):
        rng = np.random.default_rng(18)
        X, pim = random_instance(rng)
        beta = np.array([np.median(pim.grid), 0.1])
        H = hessian(beta, X, pim, 0.5)
        from midqr.fit import _interp_state

        _, _, _, slope = _interp_state(beta, X, pim, get_link("identity"))
        expected = (2.0 / X.shape[0]) * (X * (slope ** 2)[:, None]).T @ X
        np.testing.assert_allclose(H, expected, rtol=1e-14)

    def test_all_flat_tails_zero_hessian(self):
        pim = matrix_from_rows(GRID, [ROW, ROW])
        X = np.ones((2, 1))
        H = hessian(np.array([500.0]), X, pim, 0.5)
        np.testing.assert_allclose(H, 0.0)

    def test_hessian_matches_differenced_gradient(self):
        rng = np.random.default_rng(19)
        X, pim = random_instance(rng)
        fam = get_link("log")
        p = 0.5
        beta = np.array([np.log(np.median(pim.grid) + 1.2), 0.02])
        H = hessian(beta, X, pim, p, fam)
        fd = np.zeros_like(H)
        for h in range(2):
            e = np.zeros(2)
            e[h] = 1e-6 * (1 + abs(beta[h]))
            fd[:, h] = (
                gradient(beta + e, X, pim, p, fam)
                - gradient(beta - e, X, pim, p, fam)
            ) / (2 * e[h])
        np.testing.assert_allclose(H, fd, rtol=1e-5, atol=1e-9)


class TestNumericalFit:
    def test_agrees_with_closed_form_on_shared_rows(self):
        rng = np.random.default_rng(20)
        for _ in range(10):
            X, pim = random_instance(rng, identical=True)
            rnga = admissible_range(pim)
            p = float(rng.uniform(rnga.lo, rnga.hi))
            b_cf = closed_form_fit(X, pim, p)
            b_nm, diag = numerical_fit(X, pim, p)
            assert diag.converged
            assert np.max(np.abs(b_cf - b_nm)) <= 1e-6

    def test_lower_plateau_returns_upper_edge(self):
        pim = matrix_from_rows(GRID, [ROW, ROW, ROW])
        X = np.ones((3, 1))
        with pytest.warns(RuntimeWarning, match="plateau"):
            beta, diag = numerical_fit(X, pim, 0.1)
        assert diag.lower_plateau
        assert beta[0] == pytest.approx(1.0)  # smallest grid value

    def test_scenario_slope_recovery(self):
        from midqr.simulate import ScenarioSpec, generate
        from midqr.kernel_cdf import select_bandwidths

        y, W = generate(ScenarioSpec("1a", 500, seed=23))
        spec = CovariateSpec(("ordered",))
        bw = select_bandwidths(y, W, spec)
        pim = conditional_mid_probabilities(conditional_cdf(y, W, bw, spec))
        X = np.column_stack([np.ones_like(y), W[:, 0]])
        beta, diag = numerical_fit(X, pim, 0.5)
        assert diag.converged
        assert beta[1] == pytest.approx(2.0, abs=0.3)

    def test_bad_level(self):
        pim = replicated_marginal([1, 2, 3], 3)
        with pytest.raises(ValueError):
            numerical_fit(np.ones((3, 1)), pim, 1.5)


class TestPredict:
    def _model(self, link="identity"):
        rng = np.random.default_rng(24)
        y = rng.integers(1, 9, 60).astype(float)
        W = rng.integers(0, 3, 60).astype(float)[:, None]
        return fit_mid_quantile(
            y, W, (0.3, 0.5), CovariateSpec(("ordered",)), link=link,
            variance=None,
        )

    def test_identity_prediction_is_linear(self):
        m = self._model()
        beta = m.coefficients(0.5)
        x = np.array([1.0, 2.0])
        assert m.predict(x, 0.5) == pytest.approx(float(x @ beta))

    def test_log_prediction_positive(self):
        m = self._model("log")
        for w in (0.0, 1.0, 2.0):
            assert m.predict(np.array([1.0, w]), 0.3) > 0

    def test_linear_scale_option(self):
        m = self._model("log")
        x = np.array([1.0, 1.0])
        lp = m.predict(x, 0.5, scale="linear")
        assert m.predict(x, 0.5) == pytest.approx(np.exp(lp))

    def test_logit_median_prediction_is_probability(self):
        rng = np.random.default_rng(27)
        w = rng.integers(0, 4, 200).astype(float)
        y = rng.binomial(1, 0.25 + 0.15 * w).astype(float)
        m = fit_mid_quantile(
            y, w[:, None], 0.5, CovariateSpec(("ordered",)), link="logit",
            variance=None,
        )
        for wv in range(4):
            pred = m.predict(np.array([1.0, float(wv)]), 0.5)
            assert 0.0 < pred < 1.0

    def test_unknown_level(self):
        m = self._model()
        with pytest.raises(KeyError):
            predict(m, np.array([1.0, 1.0]), 0.9)

    def test_monotone_predictions_across_levels(self):
        rng = np.random.default_rng(25)
        crossings = 0
        total = 0
        for _ in range(100):
            y = rng.integers(0, 12, 50).astype(float)
            W = rng.integers(0, 3, 50).astype(float)[:, None]
            try:
                cdf = conditional_cdf(
                    y, W, Bandwidths(np.array([0.25])),
                    CovariateSpec(("ordered",)),
                )
                pim = conditional_mid_probabilities(cdf)
                rnga = admissible_range(pim)
                levels = np.linspace(
                    rnga.lo + 0.02, rnga.hi - 0.02, 4
                )
                X = np.column_stack([np.ones(50), W[:, 0]])
                x0 = np.array([1.0, 1.0])
                preds = [
                    float(x0 @ closed_form_fit(X, pim, p)) for p in levels
                ]
            except Exception:
                continue
            total += 1
            if np.any(np.diff(preds) < -1e-10):
                crossings += 1
        assert total >= 90
        assert crossings <= 0.01 * total
