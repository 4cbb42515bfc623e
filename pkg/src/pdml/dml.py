"""Residual-based estimation of the projection coefficient.

The estimator regresses outcome residuals on treatment residuals, both
formed out-of-fold:

    beta_hat = sum(eps_i * delta_i) / sum(delta_i^2)

with a sandwich standard error built from the same residuals. Under
cross-fitting the fold estimates are aggregated (mean by default) and the
standard error is computed from the pooled out-of-fold residuals at the
aggregated estimate, giving the single shared SE the perturbed intervals
reuse.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from pdml.data import Dataset, FoldSplit, SingleSplit
from pdml.errors import ConfigError, ContractError, DegenerateDenominatorError
from pdml.learners import LearnerSpec, Predictor, fit_learner, predict
from pdml.normal import upper_quantile

DEGENERACY_FLOOR = 1e-12


@dataclass(frozen=True)
class ResidualPair:
    """Out-of-fold residuals: eps = y - g_hat(x), delta = d - f_hat(x)."""

    eps: np.ndarray
    delta: np.ndarray
    fold: np.ndarray

    def __post_init__(self):
        if self.eps.shape != self.delta.shape:
            raise ContractError("eps and delta must have equal lengths")
        if not (np.all(np.isfinite(self.eps)) and np.all(np.isfinite(self.delta))):
            raise ContractError("residuals must be finite")

    @property
    def n(self) -> int:
        return self.eps.shape[0]


@dataclass(frozen=True)
class DmlEstimate:
    beta_hat: float
    se_hat: float
    residuals: ResidualPair
    n_eval: int
    fold_betas: tuple[float, ...] = ()


def _check_denominator(delta: np.ndarray) -> float:
    ss = float(delta @ delta)
    if ss < DEGENERACY_FLOOR * delta.shape[0]:
        raise DegenerateDenominatorError(
            f"treatment residual sum of squares {ss:.3e} is numerically zero"
        )
    return ss


def estimate_beta(r: ResidualPair) -> float:
    ss = _check_denominator(r.delta)
    return float(r.eps @ r.delta) / ss


def standard_error(r: ResidualPair, beta_hat: float) -> float:
    """Sandwich standard error of the residual-ratio estimator."""
    n = r.n
    _check_denominator(r.delta)
    score = (r.eps - beta_hat * r.delta) * r.delta
    mean_sq = float(score @ score) / n
    denom = n * (float(r.delta @ r.delta) / n) ** 2
    return float(np.sqrt(mean_sq / denom))


def wald_ci(beta_hat: float, se: float, alpha: float) -> tuple[float, float]:
    if not 0.0 < alpha < 1.0:
        raise ContractError("alpha must lie in (0, 1)")
    z = upper_quantile(alpha / 2.0)
    return (beta_hat - z * se, beta_hat + z * se)


def oracle_estimate(
    ds: Dataset,
    true_f: Callable[[np.ndarray], np.ndarray],
    true_g: Callable[[np.ndarray], np.ndarray],
    eval_fold: np.ndarray,
) -> float:
    """Estimate from exact residuals; simulation-only benchmark."""
    idx = np.asarray(eval_fold)
    x = ds.x[idx]
    pair = ResidualPair(
        eps=ds.y[idx] - np.asarray(true_g(x), dtype=np.float64),
        delta=ds.d[idx] - np.asarray(true_f(x), dtype=np.float64),
        fold=idx,
    )
    return estimate_beta(pair)


def orientations(split: FoldSplit) -> list[tuple[np.ndarray, np.ndarray]]:
    """(evaluation indices, training indices) pairs implied by the scheme.

    A single split yields one orientation (first fold evaluated, second
    trained on); K-fold cross-fitting yields K.
    """
    if isinstance(split.scheme, SingleSplit):
        return [(split.folds[0], split.folds[1])]
    return [(fold, split.complement(k)) for k, fold in enumerate(split.folds)]


def fit_fold_predictors(
    ds: Dataset,
    g_spec: LearnerSpec,
    f_spec: LearnerSpec,
    split: FoldSplit,
    rng: np.random.Generator,
) -> list[tuple[Predictor, Predictor]]:
    """Fit both nuisances on each orientation's training indices."""
    pairs = []
    for k, (_, train) in enumerate(orientations(split)):
        g_pred = fit_learner(g_spec, ds.x[train], ds.y[train], rng, meta={"fold": k, "response": "y"})
        f_pred = fit_learner(f_spec, ds.x[train], ds.d[train], rng, meta={"fold": k, "response": "d"})
        pairs.append((g_pred, f_pred))
    return pairs


def residuals_on(ds: Dataset, g_pred: Predictor, f_pred: Predictor, idx: np.ndarray) -> ResidualPair:
    x = ds.x[idx]
    return ResidualPair(
        eps=ds.y[idx] - predict(g_pred, x),
        delta=ds.d[idx] - predict(f_pred, x),
        fold=np.asarray(idx),
    )


def pooled_estimate(
    fold_pairs: list[ResidualPair],
    aggregate: str = "mean",
) -> DmlEstimate:
    """Aggregate per-fold estimates and compute the pooled standard error."""
    betas = [estimate_beta(r) for r in fold_pairs]
    if aggregate == "mean":
        beta_hat = float(np.mean(betas))
    elif aggregate == "median":
        beta_hat = float(np.median(betas))
    else:
        raise ConfigError(f"unknown aggregation {aggregate!r}")
    pooled = ResidualPair(
        eps=np.concatenate([r.eps for r in fold_pairs]),
        delta=np.concatenate([r.delta for r in fold_pairs]),
        fold=np.concatenate([r.fold for r in fold_pairs]),
    )
    return DmlEstimate(
        beta_hat=beta_hat,
        se_hat=standard_error(pooled, beta_hat),
        residuals=pooled,
        n_eval=pooled.n,
        fold_betas=tuple(betas),
    )


def cross_fit(
    ds: Dataset,
    g_spec: LearnerSpec,
    f_spec: LearnerSpec,
    split: FoldSplit,
    rng: np.random.Generator,
    aggregate: str = "mean",
) -> DmlEstimate:
    """Out-of-fold nuisance fitting followed by residual-ratio estimation.

    With a single split this is the plain train-on-one-half, estimate-on-
    the-other procedure; with K folds the K estimates are aggregated and
    the residuals pooled for the shared standard error.
    """
    predictors = fit_fold_predictors(ds, g_spec, f_spec, split, rng)
    fold_pairs = [
        residuals_on(ds, g_pred, f_pred, eval_idx)
        for (g_pred, f_pred), (eval_idx, _) in zip(predictors, orientations(split))
    ]
    return pooled_estimate(fold_pairs, aggregate)
