"""Tests for the two-loop assurance estimator and sample-size search."""

import math

import numpy as np
import pytest
from scipy import special, stats

import assure_crt.assurance as assurance_mod
from assure_crt.assurance import (
    AssuranceSpec,
    estimate_assurance,
    find_sample_size,
    modal_sample_size,
    outer_draw,
    repetitions_needed,
)
from assure_crt.errors import (
    InvalidDesignError,
    InvalidParameterError,
    InvalidPriorError,
    NotAchievableError,
    NumericalError,
)
from assure_crt.mcmc import McmcSettings, SuccessRule
from assure_crt.priors import (
    AnalysisPrior,
    CvSizes,
    DesignPrior,
    DirichletSizes,
    EqualSizes,
    Normal,
    PointMass,
    TruncatedNormal,
    VarianceComponents,
)

FAST = McmcSettings(burn_in=200, samples=300)


def small_trial_prior(delta=Normal(1, 1)):
    return DesignPrior(
        lam=Normal(10, 1),
        delta=delta,
        variance=VarianceComponents(TruncatedNormal(2, 0.04), TruncatedNormal(1, 0.01)),
        sizes=DirichletSizes(100),
    )


def steep_prior():
    """Small between-cluster variance, so assurance keeps rising with n_T."""
    return DesignPrior(
        lam=Normal(10, 1),
        delta=Normal(1, 0.01),
        variance=VarianceComponents(TruncatedNormal(0.05, 0.0001), TruncatedNormal(1, 0.01)),
        sizes=DirichletSizes(100),
    )


def spec(L=100, mcmc=FAST, rule=SuccessRule(), seed=0, prior=None, J=10):
    return AssuranceSpec(J, prior or small_trial_prior(), AnalysisPrior(), rule, L, mcmc, seed)


def plurality_probability(p, R):
    """Exact Pr(correct size is the strict plurality) under the one-step error model."""
    q = (1 - p) / 2
    total = 0.0
    for k0 in range(R + 1):
        for k1 in range(R - k0 + 1):
            k2 = R - k0 - k1
            if k0 > k1 and k0 > k2:
                total += stats.multinomial.pmf([k0, k1, k2], R, [p, q, q])
    return total


class TestAssuranceSpec:
    def test_rejects_too_few_clusters(self):
        with pytest.raises(InvalidDesignError):
            spec(J=1)

    def test_rejects_empty_outer_loop(self):
        with pytest.raises(InvalidParameterError):
            spec(L=0)

    def test_rejects_cv_size_prior(self):
        prior = DesignPrior(PointMass(0), PointMass(1), VarianceComponents(PointMass(1), PointMass(1)),
                            CvSizes(PointMass(0.5)))
        with pytest.raises(InvalidPriorError):
            spec(prior=prior)


class TestEstimate:
    def test_result_invariants(self):
        r = estimate_assurance(spec(L=60), 50)
        assert 0 <= r.estimate <= 1 and r.successes <= r.L
        assert r.estimate == r.successes / r.L
        assert r.mc_standard_error == math.sqrt(r.estimate * (1 - r.estimate) / r.L)
        assert r.K == 300 and r.failures == 0 and r.n_T == 50
        assert r.indicators.sum() == r.successes

    def test_vanishing_confidence(self):
        r = estimate_assurance(spec(L=50, rule=SuccessRule(1e-12)), 50)
        assert r.estimate == 1.0

    def test_hopeless_treatment(self):
        prior = DesignPrior(PointMass(0), PointMass(-10), VarianceComponents(PointMass(0.01), PointMass(0.01)),
                            EqualSizes())
        r = estimate_assurance(spec(L=50, prior=prior), 500)
        assert r.estimate == 0.0

    def test_zero_sample_size_uses_prior(self):
        # no data: Pr(delta > 0) is the analysis prior's 0.5, below the 0.95 bar
        r = estimate_assurance(spec(L=20), 0)
        assert r.estimate == 0.0

    def test_rejects_negative_total(self):
        with pytest.raises(InvalidDesignError):
            estimate_assurance(spec(L=5), -1)

    def test_deterministic(self):
        a = estimate_assurance(spec(L=40, seed=5), 50)
        b = estimate_assurance(spec(L=40, seed=5), 50)
        assert np.array_equal(a.probabilities, b.probabilities)

    def test_worker_count_does_not_change_result(self):
        a = estimate_assurance(spec(L=40, seed=6), 50, workers=1)
        b = estimate_assurance(spec(L=40, seed=6), 50, workers=4)
        assert np.array_equal(a.probabilities, b.probabilities)
        assert a.estimate == b.estimate

    def test_outer_draw_matches_estimate(self):
        s = spec(L=5, seed=7)
        r = estimate_assurance(s, 30)
        assert [outer_draw(s, 30, ell) for ell in range(5)] == list(r.probabilities)

    def test_ceiling(self):
        r = estimate_assurance(spec(L=400), 100)
        assert r.estimate <= special.ndtr(1.0) + 3 * r.mc_standard_error

    def test_variance_drops_with_outer_samples(self):
        small = [estimate_assurance(spec(L=10, seed=s), 50).estimate for s in range(20)]
        large = [estimate_assurance(spec(L=300, seed=s), 50).estimate for s in range(20)]
        assert np.std(large, ddof=1) < np.std(small, ddof=1)

    def test_common_random_numbers_monotone(self):
        s = spec(L=200, seed=3, prior=steep_prior())
        grid = [1, 2, 3, 4, 6, 8, 10, 13, 16, 20, 25]
        est = [estimate_assurance(s, 10 * g).estimate for g in grid]
        ok = sum(b >= a for a, b in zip(est, est[1:]))
        assert ok >= 0.9 * (len(grid) - 1)

    def test_failures_excluded(self, monkeypatch):
        real = assurance_mod.run_chain
        calls = {"n": 0}

        def flaky(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] == 1:
                raise NumericalError("boom", {})
            return real(*args, **kwargs)

        monkeypatch.setattr(assurance_mod, "run_chain", flaky)
        r = estimate_assurance(spec(L=200), 50)
        assert r.failures == 1 and r.L == 199
        assert np.isnan(r.probabilities[0])

    def test_too_many_failures_abort(self, monkeypatch):
        def broken(*args, **kwargs):
            raise NumericalError("boom", {})

        monkeypatch.setattr(assurance_mod, "run_chain", broken)
        with pytest.raises(NumericalError) as info:
            estimate_assurance(spec(L=20), 50)
        assert info.value.diagnostic["failures"] == 20


class TestSampleSize:
    def test_certain_success_returns_smallest(self):
        prior = DesignPrior(PointMass(0), PointMass(100), VarianceComponents(PointMass(0.1), PointMass(0.1)),
                            EqualSizes())
        s = spec(L=20, prior=prior, rule=SuccessRule(0.5))
        assert find_sample_size(s, 0.8, [2, 3, 4]) == 20

    def test_target_above_ceiling(self):
        with pytest.raises(NotAchievableError) as info:
            find_sample_size(spec(L=100), 0.99, [1, 5, 10])
        assert 0 < info.value.best < 0.99

    def test_bisection_agrees_on_monotone_curve(self):
        prior = DesignPrior(PointMass(10), PointMass(1), VarianceComponents(PointMass(0.2), PointMass(1)),
                            EqualSizes())
        s = spec(L=100, seed=4, prior=prior)
        grid = list(range(1, 16))
        linear = find_sample_size(s, 0.7, grid)
        bisect = find_sample_size(s, 0.7, grid, method="bisect")
        assert abs(linear - bisect) <= 20

    def test_grid_validation(self):
        with pytest.raises(InvalidDesignError):
            find_sample_size(spec(L=5), 0.5, [])
        with pytest.raises(InvalidDesignError):
            find_sample_size(spec(L=5), 0.5, [3, 2])
        with pytest.raises(InvalidParameterError):
            find_sample_size(spec(L=5), 1.5, [1])

    def test_single_repetition(self):
        prior = DesignPrior(PointMass(0), PointMass(100), VarianceComponents(PointMass(0.1), PointMass(0.1)),
                            EqualSizes())
        res = modal_sample_size(spec(L=10, prior=prior, rule=SuccessRule(0.5)), 0.8, [2, 3], 1)
        assert res.per_run_sizes == [20] and res.modal_size == 20 and res.modal_proportion == 1.0

    def test_ties_go_to_smaller_size(self, monkeypatch):
        sizes = iter([30, 20, 30, 20])

        class Found:
            def __init__(self, n_T):
                self.n_T, self.estimate = n_T, 0.8

        monkeypatch.setattr(assurance_mod, "_search", lambda *a, **k: Found(next(sizes)))
        res = modal_sample_size(spec(L=5), 0.8, [2, 3], 4)
        assert res.modal_size == 20 and res.modal_proportion == 0.5

    def test_repetitions_use_distinct_seeds(self):
        res = modal_sample_size(spec(L=30, prior=steep_prior()), 0.5, range(1, 20), 3)
        assert len(res.per_run_sizes) == 3
        assert res.per_run_sizes.count(res.modal_size) / 3 == res.modal_proportion


class TestRepetitionsNeeded:
    def test_always_correct(self):
        assert repetitions_needed(1.0) == 1

    def test_high_accuracy_needs_one(self):
        assert repetitions_needed(0.95, 0.9) == 1

    @pytest.mark.parametrize("p", [0.55, 0.6, 0.8])
    def test_matches_exact_plurality(self, p):
        R = repetitions_needed(p, 0.9)
        assert R % 2 == 1
        assert plurality_probability(p, R) >= 0.9
        assert plurality_probability(p, R - 2) < 0.9

    def test_coin_flip_never_plural(self):
        with pytest.raises(NotAchievableError):
            repetitions_needed(0.3)

    def test_validation(self):
        with pytest.raises(InvalidParameterError):
            repetitions_needed(0.0)
        with pytest.raises(InvalidParameterError):
            repetitions_needed(0.5, 1.0)
