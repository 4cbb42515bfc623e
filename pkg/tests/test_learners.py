import stat
import sys
import textwrap

import numpy as np
import pytest

from pdml import lasso
from pdml.errors import ContractError, LearnerError, RankDeficiencyError
from pdml.learners import (
    OLS,
    BasisExpansion,
    External,
    Lasso,
    LassoCvConfig,
    anchored_spec,
    fit_learner,
    predict,
)
from pdml.seeds import generator


class TestOls:
    def test_exact_linear_recovery(self, rng):
        x = rng.standard_normal((50, 4))
        coef = np.array([1.0, -2.0, 0.5, 3.0])
        y = x @ coef
        pred = fit_learner(OLS(), x, y, rng)
        np.testing.assert_allclose(predict(pred, x), y, atol=1e-8)

    def test_dot_product_prediction(self, rng):
        x = np.array([[1.0, 0.0], [0.5, 2.0], [0.0, 1.0], [2.0, 2.0]])
        y = x @ np.array([1.0, 0.0])
        pred = fit_learner(OLS(), x, y, rng)
        rows = np.array([[2.0, 9.0], [3.0, 9.0]])
        np.testing.assert_allclose(predict(pred, rows), [2.0, 3.0], atol=1e-10)

    def test_rank_deficiency_error(self, rng):
        x = rng.standard_normal((30, 3))
        x = np.column_stack([x, x[:, 0] + x[:, 1]])
        with pytest.raises(RankDeficiencyError):
            fit_learner(OLS(), x, rng.standard_normal(30), rng)

    def test_needs_enough_rows(self, rng):
        with pytest.raises(ContractError):
            fit_learner(OLS(), rng.standard_normal((4, 4)), rng.standard_normal(4), rng)

    def test_response_shift_equivariance_with_intercept_column(self, rng):
        x = np.column_stack([np.ones(40), rng.standard_normal((40, 3))])
        y = rng.standard_normal(40)
        a = fit_learner(OLS(), x, y, rng)
        b = fit_learner(OLS(), x, y + 5.0, rng)
        np.testing.assert_allclose(predict(b, x), predict(a, x) + 5.0, atol=1e-9)


class TestLassoLearner:
    def test_lambda_max_gives_constant_predictor(self, rng):
        x = rng.standard_normal((60, 8))
        y = x @ np.array([2.0, 0, 0, 0, 0, 0, 0, 0]) + rng.standard_normal(60)
        lam_max = lasso.lambda_max(x, y)
        spec = Lasso(cv=LassoCvConfig(fixed_lambda=lam_max, center=False))
        pred = fit_learner(spec, x, y, rng)
        np.testing.assert_array_equal(pred.coef, np.zeros(8))
        np.testing.assert_array_equal(predict(pred, x), np.zeros(60))

    def test_centered_null_model_predicts_mean(self, rng):
        x = rng.uniform(size=(60, 5))
        y = rng.standard_normal(60) + 3.0
        spec = Lasso(cv=LassoCvConfig(fixed_lambda=1e6))
        pred = fit_learner(spec, x, y, rng)
        np.testing.assert_allclose(predict(pred, x), np.full(60, y.mean()), atol=1e-12)

    def test_reproducibility(self, rng):
        x = np.random.default_rng(1).standard_normal((80, 10))
        y = x[:, 0] * 2 + np.random.default_rng(2).standard_normal(80)
        a = fit_learner(Lasso(), x, y, generator(5))
        b = fit_learner(Lasso(), x, y, generator(5))
        np.testing.assert_array_equal(a.coef, b.coef)
        assert a.lambda_used == b.lambda_used

    def test_anchored_spec_restricts_grid(self, rng):
        x = np.random.default_rng(3).standard_normal((60, 6))
        y = x[:, 0] + np.random.default_rng(4).standard_normal(60)
        base = fit_learner(Lasso(), x, y, generator(6))
        refit_spec = anchored_spec(Lasso(), base)
        assert refit_spec.cv.fixed_grid is not None
        assert max(refit_spec.cv.fixed_grid) == pytest.approx(base.lambda_used)
        assert min(refit_spec.cv.fixed_grid) == pytest.approx(0.1 * base.lambda_used)
        refit = fit_learner(refit_spec, x, y, generator(7))
        assert refit.lambda_used <= base.lambda_used + 1e-12


class TestBasisExpansion:
    def test_quadratic_in_cubic_span(self):
        rng = generator(8)
        x = rng.uniform(size=(500, 1))
        y = (x[:, 0] - 1.0) ** 2 - 25.0 / 12.0
        pred = fit_learner(BasisExpansion(), x, y, rng)
        rmse = np.sqrt(np.mean((predict(pred, x) - y) ** 2))
        assert rmse < 0.05 * np.std(y)

    def test_training_rows_match_in_fit_values(self, rng):
        x = rng.uniform(size=(100, 2))
        y = np.sin(3 * x[:, 0]) + x[:, 1] + 0.1 * rng.standard_normal(100)
        pred = fit_learner(BasisExpansion(n_knots=3), x, y, rng)
        first = predict(pred, x)
        second = predict(pred, x)
        np.testing.assert_array_equal(first, second)
        assert np.all(np.isfinite(first))

    def test_out_of_range_clamped(self, rng):
        x = rng.uniform(0.2, 0.8, size=(80, 1))
        y = x[:, 0] ** 2
        pred = fit_learner(BasisExpansion(n_knots=2), x, y, rng)
        wide = np.array([[-1.0], [2.0]])
        vals = predict(pred, wide)
        edges = predict(pred, np.array([[x[:, 0].min()], [x[:, 0].max()]]))
        np.testing.assert_allclose(vals, edges, atol=1e-12)

    def test_dimension_mismatch(self, rng):
        x = rng.uniform(size=(50, 2))
        pred = fit_learner(BasisExpansion(n_knots=2), x, x[:, 0], rng)
        with pytest.raises(ContractError):
            predict(pred, rng.uniform(size=(5, 3)))


STUB_LEARNER = textwrap.dedent(
    """\
    #!{python}
    import sys, csv
    import numpy as np

    def read_csv(path):
        with open(path) as fh:
            rows = list(csv.reader(fh))
        header, data = rows[0], np.array(rows[1:], dtype=float)
        return header, data

    mode = sys.argv[1]
    if mode == "fit":
        header, data = read_csv(sys.argv[2])
        y, x = data[:, 0], data[:, 1:]
        x1 = np.column_stack([np.ones(len(y)), x])
        coef, *_ = np.linalg.lstsq(x1, y, rcond=None)
        out = sys.argv[2] + ".model"
        np.savetxt(out, coef)
        print(out)
    elif mode == "predict":
        coef = np.loadtxt(sys.argv[2])
        header, x = read_csv(sys.argv[3])
        preds = np.column_stack([np.ones(len(x)), x]) @ coef
        for v in preds:
            print(repr(float(v)))
    else:
        sys.exit(3)
    """
)


@pytest.fixture
def stub_learner(tmp_path):
    script = tmp_path / "stub_learner.py"
    script.write_text(STUB_LEARNER.format(python=sys.executable), encoding="utf-8")
    script.chmod(script.stat().st_mode | stat.S_IEXEC)
    return External(command=(sys.executable, str(script)))


class TestExternalLearner:
    def test_fit_predict_round_trip(self, stub_learner, rng):
        x = rng.standard_normal((40, 3))
        y = 1.0 + x @ np.array([2.0, -1.0, 0.5]) + 0.01 * rng.standard_normal(40)
        pred = fit_learner(stub_learner, x, y, rng)
        fitted = predict(pred, x)
        assert np.sqrt(np.mean((fitted - y) ** 2)) < 0.05

    def test_failure_surfaces_diagnostics(self, tmp_path, rng):
        bad = tmp_path / "bad.py"
        bad.write_text("import sys; sys.stderr.write('boom'); sys.exit(1)\n", encoding="utf-8")
        spec = External(command=(sys.executable, str(bad)))
        with pytest.raises(LearnerError, match="boom"):
            fit_learner(spec, rng.standard_normal((10, 2)), rng.standard_normal(10), rng)

    def test_anchored_spec_passthrough(self, stub_learner):
        assert anchored_spec(stub_learner, object()) is stub_learner
