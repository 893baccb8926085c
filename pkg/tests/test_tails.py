import math

import numpy as np
import pytest

import oracles
from aqr.quantile import QuantileProfile, batch_transform, compute_quantile_profile
from aqr.tails import (SampledTailEstimate, TailContext, TailRule, TailStrategy, apply_tail_rule,
                       calibrate_average_sample_tails, gaussian_tail_quantiles, normal_cdf, probit)


def ctx_for(T, S, rule):
    return TailContext.from_profiles(np.asarray(T, float), np.asarray(S, float), rule)


T5 = [-3.0, -1.0, 0.0, 1.0, 3.0]
S5 = [-6.0, -2.0, 0.0, 2.0, 6.0]


class TestCalibration:
    def test_constant(self):
        est = calibrate_average_sample_tails(np.full(500, 2.5), 100, 50, rng_seed=1)
        assert (est.low, est.high) == (2.5, 2.5)

    @pytest.mark.parametrize("seed", range(10))
    def test_uniform_expected_extremes(self, seed):
        x = np.random.default_rng(seed).random(100_000)
        est = calibrate_average_sample_tails(x, 100, 1000, rng_seed=seed)
        assert abs(est.low - 1 / 101) < 0.003
        assert abs(est.high - 100 / 101) < 0.003

    def test_full_batch_without_replacement(self):
        x = np.random.default_rng(0).normal(size=64)
        est = calibrate_average_sample_tails(x, 64, 1, rng_seed=0, replace=False)
        assert (est.low, est.high) == (x.min(), x.max())

    def test_deterministic(self):
        x = np.random.default_rng(0).normal(size=1000)
        assert calibrate_average_sample_tails(x, rng_seed=9) == calibrate_average_sample_tails(x, rng_seed=9)

    def test_inner_bias(self):
        x = np.random.default_rng(2).normal(size=5000)
        est = calibrate_average_sample_tails(x, 100, 200, rng_seed=3)
        assert x.min() < est.low < est.high < x.max()

    def test_batch_exceeds_population(self):
        with pytest.raises(ValueError, match="batch exceeds population"):
            calibrate_average_sample_tails(np.arange(10.0), 11, 5)

    def test_estimate_validation(self):
        with pytest.raises(ValueError):
            SampledTailEstimate(1.0, 0.0, 10, 1)
        with pytest.raises(ValueError):
            SampledTailEstimate(0.0, 1.0, 1, 1)


class TestProbit:
    def test_center(self):
        assert probit(0.5) == 0.0

    def test_known_values(self):
        assert probit(0.841344746) == pytest.approx(1.0, abs=1e-6)
        assert probit(0.975) == pytest.approx(1.959964, abs=1e-5)

    @pytest.mark.parametrize("p", [1e-7, 1e-5, 0.001, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.93, 0.999, 1 - 1e-7])
    def test_against_bisection(self, p):
        assert abs(probit(p) - oracles.probit_bisect(p)) <= 1e-9

    def test_dense_against_bisection(self):
        ps = np.concatenate([np.logspace(-7, -1, 40), np.linspace(0.1, 0.9, 41), 1 - np.logspace(-7, -1, 40)])
        got = probit(ps)
        want = np.array([oracles.probit_bisect(p) for p in ps])
        assert np.max(np.abs(got - want)) <= 1e-9

    def test_inverse_of_cdf(self):
        z = np.linspace(-5, 5, 2001)
        p = np.array([oracles.normal_cdf(v) for v in z])
        assert np.max(np.abs(probit(p) - z)) <= 1e-8

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, math.nan])
    def test_domain(self, p):
        with pytest.raises(ValueError, match="probit undefined"):
            probit(p)

    def test_normal_cdf(self):
        assert normal_cdf(0.0) == 0.5
        assert normal_cdf(1.3) == pytest.approx(oracles.normal_cdf(1.3), abs=1e-15)


class TestGaussianTailQuantiles:
    def test_degenerate(self):
        assert gaussian_tail_quantiles(3.0, 0.0, 10) == (3.0, 3.0)

    def test_standard(self):
        z = oracles.probit_bisect(1 / 10001)
        lo, hi = gaussian_tail_quantiles(0.0, 1.0, 10_000)
        assert lo == pytest.approx(-3.719, abs=0.01) and lo == pytest.approx(z, abs=1e-9)
        assert hi == pytest.approx(3.719, abs=0.01)

    def test_affine(self):
        lo, hi = gaussian_tail_quantiles(5.0, 2.0, 10_000)
        assert lo == pytest.approx(5 - 2 * 3.719, abs=0.02)
        assert hi == pytest.approx(5 + 2 * 3.719, abs=0.02)

    def test_errors(self):
        with pytest.raises(ValueError):
            gaussian_tail_quantiles(0.0, 1.0, 1)
        with pytest.raises(ValueError):
            gaussian_tail_quantiles(0.0, -1.0, 10)


class TestApplyTailRule:
    def test_not_calibrated(self):
        rule = TailRule.not_calibrated()
        assert apply_tail_rule(-7.3, rule, ctx_for(T5, S5, rule)) == -7.3

    def test_clipping_sets_boundaries(self):
        rule = TailRule.clipping()
        ctx = ctx_for(T5, S5, rule)
        assert apply_tail_rule(2.0, rule, ctx) == 1.0
        assert apply_tail_rule(50.0, rule, ctx) == 1.0
        assert apply_tail_rule(-2.0, rule, ctx) == -1.0

    def test_interval_anchored_identity(self):
        rule = TailRule.interval_estimation(1.7, 1.7)
        ctx = ctx_for(T5, T5, rule)
        assert apply_tail_rule(-3.0, rule, ctx) == -3.0
        assert apply_tail_rule(1.0, rule, ctx) == 1.0

    def test_interval_slope(self):
        rule = TailRule.interval_estimation(2.0, 1.0)
        ctx = ctx_for(T5, S5, rule)
        assert apply_tail_rule(-4.0, rule, ctx) == -8.0
        assert apply_tail_rule(4.0, rule, ctx) == 8.0

    @pytest.mark.parametrize("target_std", [0.0, 5e-324, 1e-300])
    def test_interval_degenerate_target_spread(self, target_std):
        rule = TailRule.interval_estimation(2.0, target_std)
        ctx = ctx_for(T5, S5, rule)
        assert apply_tail_rule(-4.0, rule, ctx) == S5[0]
        assert apply_tail_rule(4.0, rule, ctx) == S5[-2]

    def test_gaussian_degenerate_target_spread(self):
        rule = TailRule.gaussian_estimation((0.0, 1.0), (0.0, 7.7e-308), 128)
        ctx = ctx_for(T5, S5, rule)
        out = apply_tail_rule(np.array([-4.0, 4.0]), rule, ctx)
        assert np.all(np.isfinite(out)) and out[0] <= S5[1] and out[1] >= S5[-2]

    def test_standard_extreme_segment(self):
        rule = TailRule.standard()
        ctx = ctx_for(T5, S5, rule)
        assert apply_tail_rule(-2.0, rule, ctx) == -4.0
        assert apply_tail_rule(2.0, rule, ctx) == 4.0

    def test_average_sample_tails_uses_calibrated_extremes(self):
        rule = TailRule.average_sample_tails(SampledTailEstimate(-4.0, 4.0, 100, 10))
        ctx = ctx_for(T5, S5, rule)
        assert apply_tail_rule(-3.0, rule, ctx) == -4.0
        assert apply_tail_rule(3.0, rule, ctx) == 4.0

    def test_gaussian_matched_fits_is_identity(self):
        K = 100
        x = np.random.default_rng(0).normal(size=20_000)
        p = compute_quantile_profile(x, K)
        rule = TailRule.gaussian_estimation((x.mean(), x.std()), (x.mean(), x.std()), 128)
        ctx = TailContext.from_profiles(p.knots, p.knots, rule)
        pts = np.concatenate([np.linspace(p.knots[0] - 1, p.knots[1], 50, endpoint=False),
                              np.linspace(p.knots[K - 1], p.knots[K] + 1, 50)])
        assert np.max(np.abs(apply_tail_rule(pts, rule, ctx) - pts)) <= 1e-9

    def test_context_mismatch(self):
        with pytest.raises(ValueError, match="tail context mismatch"):
            TailRule(TailStrategy.INTERVAL_ESTIMATION)
        with pytest.raises(ValueError, match="tail context mismatch"):
            TailRule(TailStrategy.STANDARD, source_std=1.0)
        with pytest.raises(ValueError, match="tail context mismatch"):
            TailContext(0, 1, 2, 3, 0, 2, 1, 3, level_count=4)

    def test_strategy_parse(self):
        assert TailStrategy.parse("Average_Sample_Tails") is TailStrategy.AVERAGE_SAMPLE_TAILS
        with pytest.raises(ValueError):
            TailStrategy.parse("median")

    def test_batch_transform_routes_tails(self):
        tgt = QuantileProfile(np.array(T5), 10)
        src = QuantileProfile(np.array(S5), 10)
        out = batch_transform([-9.0, 0.5, 9.0], tgt, src, TailRule.not_calibrated())
        np.testing.assert_array_equal(out, [-9.0, 1.0, 9.0])

    def test_non_standard_needs_two_segments(self):
        p = QuantileProfile(np.array([0.0, 1.0]), 3)
        with pytest.raises(ValueError):
            batch_transform([0.5], p, p, TailRule.clipping())
