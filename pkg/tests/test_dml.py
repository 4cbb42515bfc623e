import math

import numpy as np
import pytest
from scipy import stats

from pdml.data import CrossFit, SingleSplit, split
from pdml.datagen import SimSetting, gen_dataset
from pdml.dml import (
    DmlEstimate,
    ResidualPair,
    cross_fit,
    estimate_beta,
    oracle_estimate,
    orientations,
    pooled_estimate,
    standard_error,
    wald_ci,
)
from pdml.errors import ContractError, DegenerateDenominatorError
from pdml.learners import OLS
from pdml.seeds import generator


def pair(eps, delta):
    eps = np.asarray(eps, dtype=float)
    return ResidualPair(eps=eps, delta=np.asarray(delta, dtype=float), fold=np.arange(len(eps)))


class TestEstimateBeta:
    def test_proportional_residuals(self):
        delta = np.array([0.5, -1.2, 2.0, 0.1])
        assert estimate_beta(pair(3.0 * delta, delta)) == pytest.approx(3.0)

    def test_symmetry_zero(self):
        assert estimate_beta(pair([1, -1], [1, 1])) == pytest.approx(0.0)

    def test_hand_arithmetic(self):
        assert estimate_beta(pair([1, 2, 3], [1, 0, -1])) == pytest.approx(-1.0)

    def test_degenerate_denominator(self):
        with pytest.raises(DegenerateDenominatorError):
            estimate_beta(pair([1, 2, 3], [0, 0, 0]))

    def test_permutation_invariance(self, rng):
        eps = rng.standard_normal(30)
        delta = rng.standard_normal(30)
        perm = rng.permutation(30)
        assert estimate_beta(pair(eps, delta)) == pytest.approx(
            estimate_beta(pair(eps[perm], delta[perm]))
        )


class TestStandardError:
    def test_unit_delta_collapse(self):
        eps = np.array([1.0, -2.0, 0.5, 1.5])
        beta = estimate_beta(pair(eps, np.ones(4)))
        r = eps - beta
        expected = math.sqrt(np.sum(r**2)) / 4
        assert standard_error(pair(eps, np.ones(4)), beta) == pytest.approx(expected)

    def test_zero_products(self):
        # residual products all vanish: eps = beta * delta exactly
        delta = np.array([1.0, 2.0, -1.0, 0.5])
        assert standard_error(pair(2 * delta, delta), 2.0) == 0.0

    def test_hand_arithmetic_sqrt2(self):
        se = standard_error(pair([1, 2, 3], [1, 0, -1]), -1.0)
        assert se == pytest.approx(math.sqrt(2.0), abs=1e-12)

    def test_positive_when_any_product_nonzero(self, rng):
        eps, delta = rng.standard_normal(20), rng.standard_normal(20)
        beta = estimate_beta(pair(eps, delta))
        assert standard_error(pair(eps, delta), beta) > 0


class TestWaldCi:
    def test_point_interval_at_zero_se(self):
        assert wald_ci(1.5, 0.0, 0.05) == (1.5, 1.5)

    def test_frozen_quantile(self):
        lo, hi = wald_ci(0.0, 1.0, 0.05)
        assert hi == pytest.approx(1.959963984540054, abs=1e-9)
        assert lo == pytest.approx(-hi)

    def test_nesting_in_alpha(self):
        a1 = wald_ci(0.3, 0.7, 0.01)
        a2 = wald_ci(0.3, 0.7, 0.10)
        assert a1[0] < a2[0] < a2[1] < a1[1]

    def test_alpha_domain(self):
        with pytest.raises(ContractError):
            wald_ci(0.0, 1.0, 0.0)


class TestOracleEstimate:
    def test_noiseless_data_degenerates(self):
        setting = SimSetting(kind="F1", n=20, p=3)
        ds, truth = gen_dataset(setting, generator(1), noise_scale=0.0)
        with pytest.raises(DegenerateDenominatorError):
            oracle_estimate(ds, truth.f, truth.g, np.arange(ds.n))

    def test_clt_recovery_large_n(self):
        setting = SimSetting(kind="F1", n=100_000, p=5)
        ds, truth = gen_dataset(setting, generator(2))
        beta_ora = oracle_estimate(ds, truth.f, truth.g, np.arange(ds.n))
        delta = ds.d - truth.f(ds.x)
        eps = ds.y - truth.g(ds.x)
        score = (eps - beta_ora * delta) * delta
        se = math.sqrt(np.mean(score**2) / (ds.n * np.mean(delta**2) ** 2))
        assert abs(beta_ora - 0.5) < 3 * se

    def test_constant_shift_identity(self):
        setting = SimSetting(kind="F1", n=500, p=4)
        ds, truth = gen_dataset(setting, generator(3))
        idx = np.arange(ds.n)
        c = 0.7
        base = oracle_estimate(ds, truth.f, truth.g, idx)
        shifted = oracle_estimate(ds, truth.f, lambda x: truth.g(x) + c, idx)
        delta = ds.d - truth.f(ds.x)
        expected = base - c * delta.sum() / (delta @ delta)
        assert shifted == pytest.approx(expected, abs=1e-10)

    def test_scale_equivariance(self):
        setting = SimSetting(kind="F1", n=200, p=3)
        ds, truth = gen_dataset(setting, generator(4))
        idx = np.arange(ds.n)
        base = oracle_estimate(ds, truth.f, truth.g, idx)
        from pdml.data import Dataset

        ds2 = Dataset(y=3.0 * ds.y, d=ds.d, x=ds.x)
        scaled = oracle_estimate(ds2, truth.f, lambda x: 3.0 * truth.g(x), idx)
        assert scaled == pytest.approx(3.0 * base, rel=1e-12)


class TestCrossFit:
    def test_single_split_exact_recovery_when_outcome_noiseless(self):
        # e = 0 exactly: after OLS recovers the linear nuisances, eps = beta * delta.
        rng = generator(5)
        n, p, beta = 200, 3, 0.5
        x = rng.uniform(size=(n, p))
        gamma = rng.uniform(size=p)
        mu = rng.uniform(size=p)
        d = x @ gamma + rng.standard_normal(n)
        y = beta * d + x @ mu
        from pdml.data import Dataset

        ds = Dataset(y=y, d=d, x=x)
        fs = split(n, SingleSplit(), generator(6))
        est = cross_fit(ds, OLS(), OLS(), fs, generator(7))
        assert est.beta_hat == pytest.approx(beta, abs=1e-6)

    def test_crossfit_mean_aggregation_identity(self):
        pairs = [pair([1.0, 2.0], [1.0, 1.0]), pair([1.5, 1.5], [1.0, 1.0])]
        est = pooled_estimate(pairs, "mean")
        assert est.beta_hat == pytest.approx(1.5)
        assert est.n_eval == 4

    def test_seed_determinism(self):
        setting = SimSetting(kind="F1", n=60, p=4)
        ds, _ = gen_dataset(setting, generator(8))
        fs = split(ds.n, CrossFit(2), generator(9))
        a = cross_fit(ds, OLS(), OLS(), fs, generator(10))
        b = cross_fit(ds, OLS(), OLS(), fs, generator(10))
        assert a.beta_hat == b.beta_hat and a.se_hat == b.se_hat

    def test_orientations_single_vs_crossfit(self):
        fs = split(10, SingleSplit(), generator(1))
        assert len(orientations(fs)) == 1
        fs2 = split(12, CrossFit(3), generator(1))
        assert len(orientations(fs2)) == 3

    def test_wald_coverage_sanity_standard_normal_residuals(self):
        # true beta = 0 by construction; nominal 95% interval should cover
        # at >= 93% over 2000 synthetic residual draws.
        rng = np.random.default_rng(77)
        n, cover = 500, 0
        reps = 2000
        for _ in range(reps):
            eps = rng.standard_normal(n)
            delta = rng.standard_normal(n)
            r = pair(eps, delta)
            b = estimate_beta(r)
            lo, hi = wald_ci(b, standard_error(r, b), 0.05)
            cover += lo <= 0.0 <= hi
        assert cover / reps >= 0.93
