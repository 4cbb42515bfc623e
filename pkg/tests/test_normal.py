import numpy as np
import pytest
from scipy import stats

from pdml.errors import ContractError
from pdml.normal import normal_cdf, normal_quantile, upper_quantile


def test_cdf_matches_scipy_over_range():
    xs = np.linspace(-8, 8, 400)
    ours = np.array([normal_cdf(x) for x in xs])
    ref = stats.norm.cdf(xs)
    assert np.max(np.abs(ours - ref)) < 1e-12


def test_quantile_matches_scipy():
    qs = np.concatenate([np.linspace(1e-8, 1 - 1e-8, 200), [0.025, 0.975, 0.5, 0.98]])
    for q in qs:
        assert normal_quantile(q) == pytest.approx(stats.norm.ppf(q), abs=1e-10)


def test_quantile_roundtrip():
    # beyond |x| ~ 5 the CDF value itself quantizes away more than 1e-9 of x
    for x in np.linspace(-5, 5, 101):
        assert normal_quantile(normal_cdf(x)) == pytest.approx(x, abs=1e-9)


def test_upper_quantile_convention():
    assert upper_quantile(0.025) == pytest.approx(1.959963984540054, abs=1e-10)


def test_quantile_domain():
    with pytest.raises(ContractError):
        normal_quantile(0.0)
    with pytest.raises(ContractError):
        normal_quantile(1.0)
