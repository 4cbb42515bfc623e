import math

import numpy as np
import pytest
from scipy import stats

from pdml.datagen import (
    FUNCTION_LIBRARY,
    SimSetting,
    cyclic_index,
    eval_nonlinear,
    gen_covariates,
    gen_dataset,
    outcome_component,
    treatment_component,
    s1, s2, s3, s4, s5, s6,
)
from pdml.errors import ContractError
from pdml.seeds import generator


class TestFunctionLibrary:
    def test_anchor_values(self):
        assert s1(0.0) == 0.0
        assert s4(1.0 / 3.0) == pytest.approx(0.0)

    def test_cyclic_index_zero_remainder_is_six(self):
        assert cyclic_index(6) == 6
        assert cyclic_index(12) == 6
        assert cyclic_index(7) == 1

    def test_component_assignment_j7(self):
        # j=7: treatment uses s1 (7 mod 6 = 1); outcome uses s3 (9 mod 6 = 3)
        assert treatment_component(7) is s1
        assert outcome_component(7) is s3


class TestCovariates:
    def test_copula_entry(self):
        # A[0, 2] = 0.5^2
        from pdml.datagen import _copula_chol

        chol = _copula_chol(4)
        cov = chol @ chol.T
        assert cov[0, 2] == pytest.approx(0.25)

    def test_entries_in_unit_interval(self, rng):
        x = gen_covariates(100, 5, rng)
        assert np.all((x > 0) & (x < 1))

    def test_p1_marginal_uniform(self):
        x = gen_covariates(10_000, 1, generator(5))
        ks = stats.kstest(x[:, 0], "uniform").statistic
        assert ks < 0.05

    def test_lag1_correlation_matches_independent_mc_oracle(self):
        # Oracle: same Gaussian copula simulated with an independent generator.
        oracle_rng = np.random.default_rng(987_654)
        z = oracle_rng.multivariate_normal([0, 0], [[1, 0.5], [0.5, 1]], size=100_000)
        u = stats.norm.cdf(z)
        oracle_corr = np.corrcoef(u[:, 0], u[:, 1])[0, 1]
        x = gen_covariates(100_000, 2, generator(11))
        got = np.corrcoef(x[:, 0], x[:, 1])[0, 1]
        assert got == pytest.approx(oracle_corr, abs=0.02)
        assert got == pytest.approx(0.48, abs=0.02)


class TestGenDataset:
    def test_noiseless_identity_f1(self):
        setting = SimSetting(kind="F1", n=50, p=5)
        ds, truth = gen_dataset(setting, generator(3), noise_scale=0.0)
        np.testing.assert_allclose(ds.d, ds.x @ truth.gamma, atol=1e-12)
        np.testing.assert_allclose(ds.y, 0.5 * ds.d + ds.x @ truth.mu, atol=1e-12)

    def test_conditional_mean_check_all_settings(self):
        for kind, s in (("F1", None), ("F2", 3), ("F3", None), ("F4", None)):
            setting = SimSetting(kind=kind, n=30, p=6, s=s)
            ds, truth = gen_dataset(setting, generator(4), noise_scale=0.0)
            np.testing.assert_allclose(ds.d - truth.f(ds.x), 0.0, atol=1e-12)
            np.testing.assert_allclose(
                ds.y - setting.beta_true * ds.d - truth.h(ds.x), 0.0, atol=1e-12
            )

    def test_f2_sparsity_leading_positions(self):
        setting = SimSetting(kind="F2", n=20, p=10, s=4)
        _, truth = gen_dataset(setting, generator(9))
        assert np.count_nonzero(truth.gamma) == 4
        assert np.count_nonzero(truth.mu) == 4
        assert np.all(truth.gamma[4:] == 0) and np.all(truth.mu[4:] == 0)

    def test_f2_with_s_equal_p_matches_f1_distribution(self):
        a, _ = gen_dataset(SimSetting(kind="F2", n=25, p=6, s=6), generator(8))
        b, _ = gen_dataset(SimSetting(kind="F1", n=25, p=6), generator(8))
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.d, b.d)

    def test_determinism(self):
        setting = SimSetting(kind="F3", n=40, p=7)
        a, _ = gen_dataset(setting, generator(123))
        b, _ = gen_dataset(setting, generator(123))
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.x, b.x)

    def test_invalid_settings(self):
        with pytest.raises(ContractError):
            SimSetting(kind="F2", n=10, p=5, s=9)
        with pytest.raises(ContractError):
            SimSetting(kind="F5", n=10, p=5)
        with pytest.raises(ContractError):
            SimSetting(kind="F1", n=10, p=5, s=2)


class TestEvalNonlinear:
    def test_f3_p1_zero(self):
        setting = SimSetting(kind="F3", n=10, p=1)
        f_val, _ = eval_nonlinear(setting, np.array([0.0]))
        assert f_val == 0.0

    def test_f4_p2_interaction_bounds(self):
        setting = SimSetting(kind="F4", n=10, p=2)
        a, b = 0.3, 0.7
        f_val, h_val = eval_nonlinear(setting, np.array([a, b]))
        base_f = s1(a) + s2(b)
        assert f_val == pytest.approx(base_f + a * b)
        # h has no triple term at p=2
        assert h_val == pytest.approx(s3(a) + s4(b))

    def test_f3_p6_against_hand_coded_sum(self):
        setting = SimSetting(kind="F3", n=10, p=6)
        z = 0.5
        expected_f = (
            3 * math.sin(z) / 2
            + 2 * math.exp(-z / 2)
            + (z - 1) ** 2 - 25 / 12
            + z - 1 / 3
            + 3 * z / 4
            + z / 2
        )
        f_val, _ = eval_nonlinear(setting, np.full(6, z))
        assert f_val == pytest.approx(expected_f, abs=1e-12)

    def test_contract_error_for_linear_settings(self):
        with pytest.raises(ContractError):
            eval_nonlinear(SimSetting(kind="F1", n=10, p=2), np.array([0.1, 0.2]))

    def test_matches_truth_evaluators(self):
        setting = SimSetting(kind="F4", n=15, p=5)
        ds, truth = gen_dataset(setting, generator(21))
        row = ds.x[3]
        f_val, h_val = eval_nonlinear(setting, row)
        assert truth.f(row[None, :])[0] == pytest.approx(f_val, abs=1e-12)
        assert truth.h(row[None, :])[0] == pytest.approx(h_val, abs=1e-12)
