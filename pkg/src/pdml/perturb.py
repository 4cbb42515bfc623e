"""Noise-model estimation, perturbed nuisance fitting, and the sweep.

Two injection mechanisms produce the family of perturbed estimates:

* linear path -- draw score-scale noise ``xi, kappa ~ N(0, Sigma_hat + nu I)``
  built from residual-weighted Gram matrices, shift the Lasso linear terms
  by ``n^{-1/2}`` times the draw, and re-solve with a penalty re-selected
  on the restricted grid ``r * lambda_hat``;
* general path -- draw bivariate residual-scale noise per training row from
  ``N(0, Pi_hat)``, subtract it from the responses, and refit the learners.

Each perturbation owns a generator derived from ``(seed, m)``, so sweeps
are reproducible and independent of worker count or scheduling.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from pdml import lasso
from pdml.data import Dataset, FoldSplit
from pdml.dml import (
    DmlEstimate,
    ResidualPair,
    estimate_beta,
    fit_fold_predictors,
    orientations,
    pooled_estimate,
    residuals_on,
)
from pdml.errors import ContractError, DegenerateNoiseError, NumericalError, PdmlError, SweepError
from pdml.learners import LearnerSpec, Predictor, anchored_spec, fit_learner, predict
from pdml.normal import upper_quantile
from pdml.seeds import SeedPath, generator, seed_path

logger = logging.getLogger(__name__)

CHOL_JITTER_SCALE = 1e-8
CHOL_MAX_RETRIES = 3
MAX_FAILURE_FRACTION = 0.2


class SweepPath(enum.Enum):
    LINEAR_LASSO = "linear"
    GENERAL_LEARNER = "general"


@dataclass(frozen=True)
class ScoreNoiseModel:
    """Gaussian model for the score-scale noise of both Lasso problems."""

    sigma_hat: np.ndarray
    lambda_hat: np.ndarray
    nu: float
    nu_prime: float
    chol_sigma: np.ndarray
    chol_lambda: np.ndarray
    jitter: tuple[float, float] = (0.0, 0.0)

    @property
    def p(self) -> int:
        return self.sigma_hat.shape[0]


@dataclass(frozen=True)
class ResidualNoiseModel:
    """2x2 second-moment matrix of the out-of-fold residual pair."""

    pi_hat: np.ndarray
    chol: np.ndarray
    jittered: bool = False


@dataclass(frozen=True)
class PerturbationResult:
    m: int
    beta_m: float
    ci_m: tuple[float, float]
    deviation: float
    penalty_used: tuple
    noise_norms: tuple[float, float]


def _chol_with_jitter(mat: np.ndarray, label: str) -> tuple[np.ndarray, float]:
    jitter = 0.0
    step = CHOL_JITTER_SCALE * np.trace(mat) / mat.shape[0]
    for attempt in range(CHOL_MAX_RETRIES + 1):
        try:
            return np.linalg.cholesky(mat + jitter * np.eye(mat.shape[0])), jitter
        except np.linalg.LinAlgError:
            jitter = step if jitter == 0.0 else jitter * 10.0
    raise NumericalError(
        f"Cholesky of {label} failed after {CHOL_MAX_RETRIES} jitter retries "
        f"(cond ~ {np.linalg.cond(mat):.3e})"
    )


def estimate_score_covariances(
    x_train: np.ndarray,
    y: np.ndarray,
    d: np.ndarray,
    eta_hat: np.ndarray,
    gamma_hat: np.ndarray,
    homoscedastic: bool = False,
) -> ScoreNoiseModel:
    """Residual-weighted Gram matrices with minimum-diagonal ridge.

    ``homoscedastic=True`` replaces the per-observation residual weights by
    their mean square, trading robustness for weaker sparsity requirements.
    """
    x = np.asarray(x_train, dtype=np.float64)
    n = x.shape[0]
    res_y = np.asarray(y, dtype=np.float64) - x @ eta_hat
    res_d = np.asarray(d, dtype=np.float64) - x @ gamma_hat
    if not (np.any(res_y) or np.any(res_d)):
        raise DegenerateNoiseError("all residuals are exactly zero")
    if homoscedastic:
        sigma = float(res_y @ res_y) / n * (x.T @ x) / n
        lam = float(res_d @ res_d) / n * (x.T @ x) / n
    else:
        wy = x * res_y[:, None]
        wd = x * res_d[:, None]
        sigma = wy.T @ wy / n
        lam = wd.T @ wd / n
    nu = float(np.min(np.diag(sigma)))
    nu_prime = float(np.min(np.diag(lam)))
    eye = np.eye(x.shape[1])
    chol_sigma, jit_s = _chol_with_jitter(sigma + nu * eye, "sigma_hat + nu I")
    chol_lambda, jit_l = _chol_with_jitter(lam + nu_prime * eye, "lambda_hat + nu' I")
    return ScoreNoiseModel(
        sigma_hat=sigma, lambda_hat=lam, nu=nu, nu_prime=nu_prime,
        chol_sigma=chol_sigma, chol_lambda=chol_lambda, jitter=(jit_s, jit_l),
    )


def sample_score_noise(model: ScoreNoiseModel, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One (xi, kappa) draw; xi is drawn first, then kappa, independently."""
    xi = model.chol_sigma @ rng.standard_normal(model.p)
    kappa = model.chol_lambda @ rng.standard_normal(model.p)
    return xi, kappa


def perturbed_lasso_pair(
    x_train: np.ndarray,
    y: np.ndarray,
    d: np.ndarray,
    xi: np.ndarray,
    kappa: np.ndarray,
    penalties: tuple[float, float],
    *,
    gram: np.ndarray | None = None,
    xty: np.ndarray | None = None,
    xtd: np.ndarray | None = None,
    warm_eta: np.ndarray | None = None,
    warm_gamma: np.ndarray | None = None,
    tol: float = lasso.DEFAULT_TOL,
    max_iter: int = lasso.DEFAULT_MAX_ITER,
) -> tuple[lasso.LassoFit, lasso.LassoFit]:
    """Solve both nuisance Lassos with their linear terms shifted by
    ``n^{-1/2}`` times the injected noise."""
    n = x_train.shape[0]
    scale = 1.0 / math.sqrt(n)
    if gram is None:
        gram = lasso.gram_matrix(x_train)
    if xty is None:
        xty = lasso.linear_term(x_train, y)
    if xtd is None:
        xtd = lasso.linear_term(x_train, d)
    eta_fit = lasso.fit_lasso(
        lam=penalties[0], gram=gram, linear=xty, offset=scale * xi,
        warm_start=warm_eta, tol=tol, max_iter=max_iter,
    )
    gamma_fit = lasso.fit_lasso(
        lam=penalties[1], gram=gram, linear=xtd, offset=scale * kappa,
        warm_start=warm_gamma, tol=tol, max_iter=max_iter,
    )
    return eta_fit, gamma_fit


def estimate_residual_covariance(eps: np.ndarray, delta: np.ndarray) -> ResidualNoiseModel:
    """Uncentered second moments of the residual pair, with a recorded
    jitter path when the 2x2 matrix is numerically singular."""
    eps = np.asarray(eps, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if eps.shape != delta.shape or eps.shape[0] < 2:
        raise ContractError("eps and delta must share a length of at least 2")
    n = eps.shape[0]
    var_e = float(eps @ eps) / n
    var_d = float(delta @ delta) / n
    cov = float(eps @ delta) / n
    if var_e == 0.0 or var_d == 0.0:
        raise DegenerateNoiseError("zero-variance residuals cannot seed the noise model")
    pi_hat = np.array([[var_e, cov], [cov, var_d]])
    try:
        chol = np.linalg.cholesky(pi_hat)
        jittered = False
    except np.linalg.LinAlgError:
        chol, _ = _chol_with_jitter(pi_hat, "pi_hat")
        jittered = True
    return ResidualNoiseModel(pi_hat=pi_hat, chol=chol, jittered=jittered)


def perturbed_learner_pair(
    g_spec: LearnerSpec,
    f_spec: LearnerSpec,
    x_train: np.ndarray,
    y: np.ndarray,
    d: np.ndarray,
    noise_model: ResidualNoiseModel,
    rng: np.random.Generator,
    *,
    noise_override: tuple[np.ndarray, np.ndarray] | None = None,
    noise_scale: float = 1.0,
) -> tuple[Predictor, Predictor, tuple[float, float]]:
    """Refit both learners on noise-subtracted responses.

    ``noise_override`` substitutes explicit per-row noise vectors for the
    Gaussian draw (a simulation hook for exact-cancellation checks).
    Returns the two predictors and the injected-noise norms.
    """
    n = x_train.shape[0]
    if noise_override is not None:
        eps_m, delta_m = noise_override
    else:
        draw = rng.standard_normal((n, 2)) @ noise_model.chol.T
        eps_m, delta_m = draw[:, 0], draw[:, 1]
    if noise_scale != 1.0:
        eps_m = eps_m * noise_scale
        delta_m = delta_m * noise_scale
    g_pred = fit_learner(g_spec, x_train, y - eps_m, rng, meta={"response": "y", "perturbed": True})
    f_pred = fit_learner(f_spec, x_train, d - delta_m, rng, meta={"response": "d", "perturbed": True})
    norms = (float(np.linalg.norm(eps_m)), float(np.linalg.norm(delta_m)))
    return g_pred, f_pred, norms


@dataclass
class LinearFoldState:
    eval_idx: np.ndarray
    train_idx: np.ndarray
    gram: np.ndarray
    xty: np.ndarray
    xtd: np.ndarray
    eta_coef: np.ndarray
    gamma_coef: np.ndarray
    lambda_eta: float
    lambda_gamma: float
    noise: ScoreNoiseModel
    selector_y: lasso.PenaltySelector | None
    selector_d: lasso.PenaltySelector | None
    x_eval: np.ndarray
    y_eval: np.ndarray
    d_eval: np.ndarray
    n_train: int


@dataclass
class GeneralFoldState:
    eval_idx: np.ndarray
    train_idx: np.ndarray
    x_train: np.ndarray
    y_train: np.ndarray
    d_train: np.ndarray
    g_refit: LearnerSpec
    f_refit: LearnerSpec
    noise: ResidualNoiseModel
    x_eval: np.ndarray
    y_eval: np.ndarray
    d_eval: np.ndarray


@dataclass
class SweepContext:
    """Read-only state shared by every perturbation of one dataset.

    Per-perturbation refits run under ``sweep_tol``/``sweep_max_iter``:
    looser than the unperturbed fits because their output only feeds the
    deviation filter, whose resolution is set by the standard error.
    """

    path: SweepPath
    folds: list
    estimate: DmlEstimate
    aggregate: str = "mean"
    noise_scale: float = 1.0
    fixed_r: float | None = None
    r_grid: tuple[float, ...] = lasso.PERTURBED_R_GRID
    sweep_tol: float = 1e-6
    sweep_max_iter: int = 5_000
    centered: bool = True


def prepare_linear_context(
    ds: Dataset,
    split: FoldSplit,
    rng: np.random.Generator,
    *,
    cv_folds: int = 5,
    grid_size: int = 100,
    grid_ratio: float = 1e-3,
    aggregate: str = "mean",
    fixed_r: float | None = None,
    homoscedastic: bool = False,
    noise_scale: float = 1.0,
    center: bool = True,
    tol: float = lasso.DEFAULT_TOL,
    max_iter: int = lasso.DEFAULT_MAX_ITER,
) -> SweepContext:
    """CV-tuned unperturbed Lasso fits plus everything a sweep reuses:
    Gram matrices, penalty selectors with frozen CV folds, noise models.

    ``center=True`` (the default, echoed in reports) subtracts training-fold
    means from covariates and responses before fitting, the standard
    intercept treatment; residuals are unchanged by it, but the Gram matrix
    loses the shared-mean direction that cripples coordinate descent on
    positive designs.
    """
    states, fold_pairs = [], []
    for eval_idx, train_idx in orientations(split):
        x_tr = np.ascontiguousarray(ds.x[train_idx])
        y_tr, d_tr = ds.y[train_idx], ds.d[train_idx]
        x_ev, y_ev, d_ev = ds.x[eval_idx], ds.y[eval_idx], ds.d[eval_idx]
        if center:
            x_mean = x_tr.mean(axis=0)
            y_mean, d_mean = y_tr.mean(), d_tr.mean()
            x_tr = x_tr - x_mean
            y_tr, d_tr = y_tr - y_mean, d_tr - d_mean
            x_ev = x_ev - x_mean
            y_ev, d_ev = y_ev - y_mean, d_ev - d_mean
        gram = lasso.gram_matrix(x_tr)
        xty = lasso.linear_term(x_tr, y_tr)
        xtd = lasso.linear_term(x_tr, d_tr)
        lam_eta, _ = lasso.cv_lambda(
            x_tr, y_tr, cv_folds,
            lasso.default_lambda_grid(lasso.lambda_max(linear=xty), grid_size, grid_ratio),
            rng,
        )
        lam_gamma, _ = lasso.cv_lambda(
            x_tr, d_tr, cv_folds,
            lasso.default_lambda_grid(lasso.lambda_max(linear=xtd), grid_size, grid_ratio),
            rng,
        )
        eta_fit = lasso.fit_lasso(lam=lam_eta, gram=gram, linear=xty, tol=tol, max_iter=max_iter)
        gamma_fit = lasso.fit_lasso(lam=lam_gamma, gram=gram, linear=xtd, tol=tol, max_iter=max_iter)
        noise = estimate_score_covariances(x_tr, y_tr, d_tr, eta_fit.coef, gamma_fit.coef, homoscedastic)
        if fixed_r is None:
            sel_folds = lasso.make_cv_folds(x_tr.shape[0], cv_folds, rng)
            selector_y = lasso.PenaltySelector(x_tr, y_tr, sel_folds)
            selector_d = lasso.PenaltySelector(x_tr, d_tr, sel_folds)
        else:
            selector_y = selector_d = None
        states.append(LinearFoldState(
            eval_idx=eval_idx, train_idx=train_idx, gram=gram, xty=xty, xtd=xtd,
            eta_coef=eta_fit.coef, gamma_coef=gamma_fit.coef,
            lambda_eta=lam_eta, lambda_gamma=lam_gamma, noise=noise,
            selector_y=selector_y, selector_d=selector_d,
            x_eval=x_ev, y_eval=y_ev, d_eval=d_ev,
            n_train=x_tr.shape[0],
        ))
        fold_pairs.append(ResidualPair(
            eps=y_ev - x_ev @ eta_fit.coef,
            delta=d_ev - x_ev @ gamma_fit.coef,
            fold=eval_idx,
        ))
    estimate = pooled_estimate(fold_pairs, aggregate)
    return SweepContext(
        path=SweepPath.LINEAR_LASSO, folds=states, estimate=estimate,
        aggregate=aggregate, noise_scale=noise_scale, fixed_r=fixed_r,
        centered=center,
    )


def prepare_general_context(
    ds: Dataset,
    split: FoldSplit,
    g_spec: LearnerSpec,
    f_spec: LearnerSpec,
    rng: np.random.Generator,
    *,
    aggregate: str = "mean",
    noise_scale: float = 1.0,
) -> SweepContext:
    """Unperturbed learner fits plus residual-noise models per fold.

    The noise covariance is estimated from the evaluation-fold residuals of
    the unperturbed predictors, and perturbed refits reuse the unperturbed
    penalty anchor for Lasso-family learners.
    """
    predictors = fit_fold_predictors(ds, g_spec, f_spec, split, rng)
    states, fold_pairs = [], []
    for (g_pred, f_pred), (eval_idx, train_idx) in zip(predictors, orientations(split)):
        pair = residuals_on(ds, g_pred, f_pred, eval_idx)
        fold_pairs.append(pair)
        states.append(GeneralFoldState(
            eval_idx=eval_idx, train_idx=train_idx,
            x_train=ds.x[train_idx], y_train=ds.y[train_idx], d_train=ds.d[train_idx],
            g_refit=anchored_spec(g_spec, g_pred), f_refit=anchored_spec(f_spec, f_pred),
            noise=estimate_residual_covariance(pair.eps, pair.delta),
            x_eval=ds.x[eval_idx], y_eval=ds.y[eval_idx], d_eval=ds.d[eval_idx],
        ))
    estimate = pooled_estimate(fold_pairs, aggregate)
    return SweepContext(
        path=SweepPath.GENERAL_LEARNER, folds=states, estimate=estimate,
        aggregate=aggregate, noise_scale=noise_scale,
    )


def _aggregate(betas: list[float], how: str) -> float:
    return float(np.median(betas)) if how == "median" else float(np.mean(betas))


def _linear_perturbation(ctx: SweepContext, rng: np.random.Generator) -> tuple[float, tuple, tuple[float, float]]:
    betas, penalties = [], []
    norm_xi = norm_kappa = 0.0
    for state in ctx.folds:
        xi, kappa = sample_score_noise(state.noise, rng)
        if ctx.noise_scale != 1.0:
            xi = xi * ctx.noise_scale
            kappa = kappa * ctx.noise_scale
        norm_xi += float(xi @ xi)
        norm_kappa += float(kappa @ kappa)
        scale = 1.0 / math.sqrt(state.n_train)
        off_y, off_d = scale * xi, scale * kappa
        if ctx.fixed_r is not None:
            lam_y = ctx.fixed_r * state.lambda_eta
            lam_d = ctx.fixed_r * state.lambda_gamma
        else:
            grid_y = np.array(sorted(ctx.r_grid, reverse=True)) * state.lambda_eta
            grid_d = np.array(sorted(ctx.r_grid, reverse=True)) * state.lambda_gamma
            lam_y, _ = state.selector_y.select(grid_y, off_y, warm_start=state.eta_coef)
            lam_d, _ = state.selector_d.select(grid_d, off_d, warm_start=state.gamma_coef)
        eta_fit = lasso.fit_lasso(lam=lam_y, gram=state.gram, linear=state.xty, offset=off_y,
                                  warm_start=state.eta_coef, tol=ctx.sweep_tol, max_iter=ctx.sweep_max_iter)
        gamma_fit = lasso.fit_lasso(lam=lam_d, gram=state.gram, linear=state.xtd, offset=off_d,
                                    warm_start=state.gamma_coef, tol=ctx.sweep_tol, max_iter=ctx.sweep_max_iter)
        eps = state.y_eval - state.x_eval @ eta_fit.coef
        delta = state.d_eval - state.x_eval @ gamma_fit.coef
        betas.append(ResidualPair(eps=eps, delta=delta, fold=state.eval_idx))
        penalties.append((lam_y, lam_d))
    beta_m = _aggregate([estimate_beta(r) for r in betas], ctx.aggregate)
    return beta_m, tuple(penalties), (math.sqrt(norm_xi), math.sqrt(norm_kappa))


def _general_perturbation(ctx: SweepContext, rng: np.random.Generator) -> tuple[float, tuple, tuple[float, float]]:
    betas, penalties = [], []
    norm_e = norm_d = 0.0
    for state in ctx.folds:
        g_pred, f_pred, norms = perturbed_learner_pair(
            state.g_refit, state.f_refit, state.x_train, state.y_train, state.d_train,
            state.noise, rng, noise_scale=ctx.noise_scale,
        )
        norm_e += norms[0] ** 2
        norm_d += norms[1] ** 2
        eps = state.y_eval - predict(g_pred, state.x_eval)
        delta = state.d_eval - predict(f_pred, state.x_eval)
        betas.append(ResidualPair(eps=eps, delta=delta, fold=state.eval_idx))
        penalties.append((g_pred.lambda_used, f_pred.lambda_used))
    beta_m = _aggregate([estimate_beta(r) for r in betas], ctx.aggregate)
    return beta_m, tuple(penalties), (math.sqrt(norm_e), math.sqrt(norm_d))


def _one_perturbation(ctx: SweepContext, m: int, path_seed: SeedPath, half_width: float) -> PerturbationResult:
    base = ctx.estimate
    if ctx.noise_scale == 0.0:
        # Zero injected noise degenerates to the unperturbed problem; reuse
        # its exact solution rather than re-solving.
        beta_m = base.beta_hat
        penalties = tuple(
            (s.lambda_eta, s.lambda_gamma) if ctx.path is SweepPath.LINEAR_LASSO else (None, None)
            for s in ctx.folds
        )
        norms = (0.0, 0.0)
    elif ctx.path is SweepPath.LINEAR_LASSO:
        beta_m, penalties, norms = _linear_perturbation(ctx, generator(path_seed))
    else:
        beta_m, penalties, norms = _general_perturbation(ctx, generator(path_seed))
    return PerturbationResult(
        m=m,
        beta_m=beta_m,
        ci_m=(beta_m - half_width, beta_m + half_width),
        deviation=abs(beta_m - base.beta_hat),
        penalty_used=penalties,
        noise_norms=norms,
    )


def run_perturbations(
    context: SweepContext,
    M: int,
    path: SweepPath,
    alpha_prime: float,
    seed: int | SeedPath,
    *,
    workers: int = 1,
) -> list[PerturbationResult]:
    """Produce the M perturbed estimates and their shared-width intervals.

    Results come back ordered by the 1-based perturbation index and are
    bitwise independent of ``workers``. Individual failures are logged and
    skipped; more than 20% failures aborts the sweep.
    """
    if M < 1:
        raise ContractError("M must be at least 1")
    if path is not context.path:
        raise ContractError(f"context was prepared for {context.path}, not {path}")
    if not 0.0 < alpha_prime < 1.0:
        raise ContractError("alpha_prime must lie in (0, 1)")
    half_width = upper_quantile(alpha_prime / 2.0) * context.estimate.se_hat
    base = seed if isinstance(seed, tuple) else (int(seed),)
    seeds = [seed_path(base, (m,)) for m in range(1, M + 1)]

    def task(m_and_seed):
        m, sp = m_and_seed
        try:
            return _one_perturbation(context, m, sp, half_width)
        except PdmlError as exc:
            return (m, exc)

    jobs = list(zip(range(1, M + 1), seeds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(task, jobs))
    else:
        raw = [task(j) for j in jobs]
    results, failures = [], []
    for item in raw:
        if isinstance(item, PerturbationResult):
            results.append(item)
        else:
            failures.append(item)
    for m, exc in failures:
        logger.warning("perturbation %d failed: %s", m, exc)
    if len(failures) > MAX_FAILURE_FRACTION * M:
        raise SweepError(f"{len(failures)} of {M} perturbations failed")
    if failures:
        logger.warning("sweep completed with %d of %d perturbations skipped", len(failures), M)
    return results
