"""Nuisance learners: OLS, Lasso, per-coordinate B-spline expansion, external.

Every learner is a least-squares fit within its family, so noise injection
needs nothing beyond refitting on a noise-subtracted response. External
learners run as subprocesses speaking the package CSV dialect:

* ``<command> fit <train.csv> [params...]`` must print a model file path;
  the train file has a ``response`` column followed by covariate columns.
* ``<command> predict <model> <covariates.csv> [params...]`` must print one
  prediction per line.
"""

from __future__ import annotations

import subprocess
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import solve_triangular

from pdml import lasso
from pdml.data import CSV_FLOAT_FORMAT
from pdml.errors import ContractError, LearnerError, RankDeficiencyError


@dataclass(frozen=True)
class LassoCvConfig:
    """How a Lasso-family learner picks its penalty.

    ``fixed_lambda`` skips CV entirely; ``fixed_grid`` restricts CV to an
    explicit decreasing candidate list (used to anchor perturbed refits at
    fractions of the unperturbed choice); otherwise a full log-spaced path
    is cross-validated. ``center`` subtracts training means from columns
    and response before fitting (an implicit intercept, added back at
    prediction time); disable it to solve the raw no-intercept objective.
    """

    n_folds: int = 5
    grid_size: int = 100
    grid_ratio: float = 1e-3
    fixed_grid: tuple[float, ...] | None = None
    fixed_lambda: float | None = None
    center: bool = True


@dataclass(frozen=True)
class OLS:
    pass


@dataclass(frozen=True)
class Lasso:
    cv: LassoCvConfig = field(default_factory=LassoCvConfig)


@dataclass(frozen=True)
class BasisExpansion:
    """Per-coordinate cubic B-spline basis, concatenated and fitted by Lasso.

    Interior knots sit at empirical quantiles of each training column; out
    of range points are clamped to the training range at prediction time.
    """

    n_knots: int = 5
    degree: int = 3
    cv: LassoCvConfig = field(default_factory=LassoCvConfig)

    def __post_init__(self):
        if self.n_knots + self.degree + 1 < 2:
            raise ContractError("basis needs at least 2 functions per coordinate")


@dataclass(frozen=True)
class External:
    command: tuple[str, ...]
    params: tuple[str, ...] = ()


LearnerSpec = OLS | Lasso | BasisExpansion | External


@dataclass
class Predictor:
    """Opaque fitted state plus metadata about how it was trained."""

    kind: str
    n_features: int
    meta: dict
    coef: np.ndarray | None = None
    col_mean: np.ndarray | None = None
    response_mean: float = 0.0
    knots: tuple[np.ndarray, ...] | None = None
    degree: int | None = None
    ranges: np.ndarray | None = None
    command: tuple[str, ...] | None = None
    params: tuple[str, ...] = ()
    model_path: str | None = None
    lambda_used: float | None = None
    _workdir: object = None


def _fit_ols(x: np.ndarray, response: np.ndarray) -> np.ndarray:
    n, p = x.shape
    if n < p + 1:
        raise ContractError(f"OLS needs at least p+1={p + 1} rows, got {n}")
    q, r = np.linalg.qr(x)
    diag = np.abs(np.diag(r))
    if diag.min() <= diag.max() * max(n, p) * np.finfo(np.float64).eps:
        raise RankDeficiencyError("design matrix is numerically rank deficient")
    return solve_triangular(r, q.T @ response)


def _cv_fit_lasso(x, response, cv: LassoCvConfig, rng) -> tuple[np.ndarray, float, np.ndarray, float]:
    if cv.center:
        col_mean = x.mean(axis=0)
        resp_mean = float(response.mean())
        x = x - col_mean
        response = response - resp_mean
    else:
        col_mean = np.zeros(x.shape[1])
        resp_mean = 0.0
    if cv.fixed_lambda is not None:
        lam = float(cv.fixed_lambda)
    else:
        if cv.fixed_grid is not None:
            grid = np.array(sorted(cv.fixed_grid, reverse=True), dtype=np.float64)
        else:
            grid = lasso.default_lambda_grid(lasso.lambda_max(x, response), cv.grid_size, cv.grid_ratio)
        lam, _ = lasso.cv_lambda(x, response, cv.n_folds, grid, rng)
    fit = lasso.fit_lasso(x, response, lam)
    return fit.coef, lam, col_mean, resp_mean


def _spline_knots(col: np.ndarray, n_knots: int, degree: int) -> np.ndarray:
    lo, hi = float(col.min()), float(col.max())
    if hi <= lo:
        hi = lo + 1.0
    interior = np.quantile(col, np.linspace(0, 1, n_knots + 2)[1:-1]) if n_knots else np.array([])
    interior = np.unique(np.clip(interior, lo, hi))
    interior = interior[(interior > lo) & (interior < hi)]
    return np.concatenate([[lo] * (degree + 1), interior, [hi] * (degree + 1)])


def _spline_design(x: np.ndarray, knots: tuple[np.ndarray, ...], degree: int, ranges: np.ndarray) -> np.ndarray:
    blocks = []
    for j, t in enumerate(knots):
        col = np.clip(x[:, j], ranges[j, 0], ranges[j, 1])
        nb = len(t) - degree - 1
        blocks.append(BSpline(t, np.eye(nb), degree)(col))
    return np.hstack(blocks)


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    rows = np.column_stack(columns)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(CSV_FLOAT_FORMAT % v for v in row) + "\n")


def _run_external(args: list[str]) -> str:
    try:
        proc = subprocess.run(args, capture_output=True, text=True, check=False)
    except OSError as exc:
        raise LearnerError(f"external learner failed to launch: {exc}") from exc
    if proc.returncode != 0:
        raise LearnerError(
            f"external learner exited with {proc.returncode}; stderr: {proc.stderr.strip()[:2000]}"
        )
    return proc.stdout


def fit_learner(
    spec: LearnerSpec,
    x: np.ndarray,
    response: np.ndarray,
    rng: np.random.Generator,
    meta: dict | None = None,
) -> Predictor:
    """Least-squares fit of ``response`` on ``x`` within the learner family.

    Deterministic given the generator (CV fold shuffling is the only
    randomness any built-in learner consumes).
    """
    x = np.asarray(x, dtype=np.float64)
    response = np.asarray(response, dtype=np.float64)
    if x.shape[0] != response.shape[0]:
        raise ContractError("x and response must have equal row counts")
    meta = dict(meta or {})
    meta.setdefault("learner", type(spec).__name__)
    if isinstance(spec, OLS):
        coef = _fit_ols(x, response)
        return Predictor(kind="ols", n_features=x.shape[1], meta=meta, coef=coef)
    if isinstance(spec, Lasso):
        coef, lam, col_mean, resp_mean = _cv_fit_lasso(x, response, spec.cv, rng)
        return Predictor(
            kind="lasso", n_features=x.shape[1], meta=meta, coef=coef,
            col_mean=col_mean, response_mean=resp_mean, lambda_used=lam,
        )
    if isinstance(spec, BasisExpansion):
        knots = tuple(_spline_knots(x[:, j], spec.n_knots, spec.degree) for j in range(x.shape[1]))
        ranges = np.column_stack([x.min(axis=0), x.max(axis=0)])
        design = _spline_design(x, knots, spec.degree, ranges)
        coef, lam, col_mean, resp_mean = _cv_fit_lasso(design, response, spec.cv, rng)
        return Predictor(
            kind="basis", n_features=x.shape[1], meta=meta, coef=coef,
            col_mean=col_mean, response_mean=resp_mean,
            knots=knots, degree=spec.degree, ranges=ranges, lambda_used=lam,
        )
    if isinstance(spec, External):
        workdir = tempfile.TemporaryDirectory(prefix="pdml-ext-")
        train = Path(workdir.name) / "train.csv"
        header = ["response"] + [f"x{j + 1}" for j in range(x.shape[1])]
        _write_csv(train, header, [response] + [x[:, j] for j in range(x.shape[1])])
        out = _run_external([*spec.command, "fit", str(train), *spec.params])
        lines = [ln.strip() for ln in out.splitlines() if ln.strip()]
        if not lines:
            raise LearnerError("external learner printed no model path")
        return Predictor(
            kind="external", n_features=x.shape[1], meta=meta,
            command=spec.command, params=spec.params, model_path=lines[-1],
            _workdir=workdir,
        )
    raise ContractError(f"unknown learner spec {spec!r}")


def predict(pred: Predictor, x: np.ndarray) -> np.ndarray:
    """Predictions, one per row of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != pred.n_features:
        raise ContractError(
            f"predictor was trained on {pred.n_features} columns, got {x.shape}"
        )
    if pred.kind == "ols":
        return x @ pred.coef
    if pred.kind == "lasso":
        return (x - pred.col_mean) @ pred.coef + pred.response_mean
    if pred.kind == "basis":
        design = _spline_design(x, pred.knots, pred.degree, pred.ranges)
        return (design - pred.col_mean) @ pred.coef + pred.response_mean
    if pred.kind == "external":
        with tempfile.TemporaryDirectory(prefix="pdml-ext-") as tmp:
            covars = Path(tmp) / "covariates.csv"
            _write_csv(covars, [f"x{j + 1}" for j in range(x.shape[1])], [x[:, j] for j in range(x.shape[1])])
            out = _run_external([*pred.command, "predict", pred.model_path, str(covars), *pred.params])
        values = [ln.strip() for ln in out.splitlines() if ln.strip()]
        if len(values) != x.shape[0]:
            raise LearnerError(f"external learner returned {len(values)} predictions for {x.shape[0]} rows")
        try:
            result = np.array([float(v) for v in values])
        except ValueError as exc:
            raise LearnerError(f"external learner returned a non-numeric prediction: {exc}") from exc
        return result
    raise ContractError(f"unknown predictor kind {pred.kind!r}")


def anchored_spec(spec: LearnerSpec, base: Predictor, r_grid=lasso.PERTURBED_R_GRID) -> LearnerSpec:
    """Spec for perturbed refits: Lasso-family learners restrict CV to the
    grid ``r * lambda_hat`` anchored at the unperturbed penalty; other
    learners retune nothing and are returned unchanged."""
    if isinstance(spec, (Lasso, BasisExpansion)) and base.lambda_used is not None:
        grid = tuple(float(r) * base.lambda_used for r in r_grid)
        return replace(spec, cv=replace(spec.cv, fixed_grid=grid, fixed_lambda=None))
    return spec
