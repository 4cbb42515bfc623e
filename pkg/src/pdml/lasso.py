"""Gram-form Lasso: coordinate descent, CV paths, and perturbed-penalty search.

The solver minimizes

    (1/2n) u' X'X u - u' ((1/n) X'y - offset) + lam * ||u||_1

by cyclic coordinate descent. The ``offset`` term is the hook used by the
perturbation machinery: injected score noise enters the optimization only
through this linear-term shift, so the Gram matrix can be shared across an
entire perturbation sweep. There is no intercept and no internal column
standardization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pdml.errors import ConfigError, ContractError
from pdml.solver import cd_solve

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 100_000
# Search fits (CV paths, penalty grids) are scored, not published, so they
# run under a looser, response-scaled tolerance and a hard sweep cap;
# unconverged search fits are acceptable caller policy. Published fits keep
# the tight defaults above.
CV_TOL = 1e-5
CV_TOL_SCALE = 1e-4
CV_MAX_ITER = 100
PERTURBED_R_GRID = tuple(np.round(np.arange(1, 11) * 0.1, 10))


@dataclass(frozen=True)
class LassoProblem:
    """Quadratic form handed to the kernel: Gram matrix, linear term, penalty."""

    gram: np.ndarray
    target_linear: np.ndarray
    lam: float

    def __post_init__(self):
        if self.target_linear.shape[0] != self.gram.shape[0]:
            raise ContractError("target_linear length must match Gram dimension")
        if self.lam < 0:
            raise ContractError("lambda must be nonnegative")


@dataclass
class LassoFit:
    coef: np.ndarray
    lambda_used: float
    n_iterations: int
    converged: bool

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.coef))


def gram_matrix(x: np.ndarray) -> np.ndarray:
    """(1/n) X'X as a C-contiguous float64 array."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return x.T @ x / x.shape[0]


def linear_term(x: np.ndarray, response: np.ndarray) -> np.ndarray:
    """(1/n) X'response."""
    return x.T @ np.asarray(response, dtype=np.float64) / x.shape[0]


def lasso_objective(problem: LassoProblem, coef: np.ndarray) -> float:
    """Penalized objective value at ``coef``."""
    return float(
        0.5 * coef @ problem.gram @ coef
        - coef @ problem.target_linear
        + problem.lam * np.abs(coef).sum()
    )


def kkt_residual(gram: np.ndarray, linear: np.ndarray, lam: float, coef: np.ndarray) -> float:
    """Largest violation of the subgradient stationarity conditions.

    For zero coordinates the gradient must lie in [-lam, lam]; for active
    coordinates it must equal -sign(coef) * lam.
    """
    grad = gram @ coef - linear
    zero = coef == 0.0
    viol_zero = np.maximum(np.abs(grad[zero]) - lam, 0.0)
    viol_active = np.abs(grad[~zero] + np.sign(coef[~zero]) * lam)
    worst = 0.0
    if viol_zero.size:
        worst = max(worst, float(viol_zero.max()))
    if viol_active.size:
        worst = max(worst, float(viol_active.max()))
    return worst


def _resolve_problem(x, response, lam, offset, gram, linear):
    if gram is None:
        if x is None:
            raise ContractError("either x or gram must be provided")
        gram = gram_matrix(x)
    if linear is None:
        if x is None or response is None:
            raise ContractError("either (x, response) or linear must be provided")
        if x.shape[0] != np.shape(response)[0]:
            raise ContractError(
                f"x has {x.shape[0]} rows but response has {np.shape(response)[0]}"
            )
        linear = linear_term(x, response)
    if offset is not None:
        offset = np.asarray(offset, dtype=np.float64)
        if offset.shape != linear.shape:
            raise ContractError("offset length must match the number of columns")
        linear = linear - offset
    return LassoProblem(gram, np.ascontiguousarray(linear, dtype=np.float64), float(lam))


def fit_lasso(
    x: np.ndarray | None = None,
    response: np.ndarray | None = None,
    lam: float = 0.0,
    offset: np.ndarray | None = None,
    *,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    gram: np.ndarray | None = None,
    linear: np.ndarray | None = None,
    warm_start: np.ndarray | None = None,
) -> LassoFit:
    """Solve the (optionally offset-shifted) Lasso.

    Either the raw design ``(x, response)`` or precomputed ``gram`` and
    ``linear`` arrays may be supplied; the precomputed path is what the
    perturbation sweep uses to share one Gram matrix across all fits.
    Convergence means the largest coefficient change in a full sweep fell
    below ``tol``; otherwise the fit is returned with ``converged=False``
    and the caller decides.
    """
    if tol <= 0:
        raise ContractError("tol must be positive")
    problem = _resolve_problem(x, response, lam, offset, gram, linear)
    p = problem.gram.shape[0]
    if warm_start is not None:
        coef = np.array(warm_start, dtype=np.float64, copy=True)
        if coef.shape[0] != p:
            raise ContractError("warm_start length must match the number of columns")
    else:
        coef = np.zeros(p, dtype=np.float64)
    n_iter, converged = cd_solve(problem.gram, problem.target_linear, problem.lam, coef, tol, int(max_iter))
    return LassoFit(coef=coef, lambda_used=problem.lam, n_iterations=int(n_iter), converged=bool(converged))


def lambda_max(
    x: np.ndarray | None = None,
    response: np.ndarray | None = None,
    offset: np.ndarray | None = None,
    linear: np.ndarray | None = None,
) -> float:
    """Smallest penalty at which the solution is exactly zero."""
    if linear is None:
        linear = linear_term(x, response)
    if offset is not None:
        linear = linear - offset
    return float(np.max(np.abs(linear)))


def default_lambda_grid(lam_max: float, size: int = 100, ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced decreasing grid from ``lam_max`` down to ``ratio * lam_max``."""
    if lam_max <= 0:
        raise ContractError("lam_max must be positive")
    return lam_max * np.logspace(0.0, np.log10(ratio), size)


def make_cv_folds(n: int, n_folds: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle 0..n-1 and cut into ``n_folds`` nearly equal validation folds."""
    if n_folds < 2:
        raise ConfigError("cross-validation needs at least 2 folds")
    if n < n_folds:
        raise ConfigError(f"{n} rows cannot be split into {n_folds} folds")
    perm = rng.permutation(n)
    return [np.sort(chunk) for chunk in np.array_split(perm, n_folds)]


def _best_on_grid(grid: np.ndarray, scores: np.ndarray) -> float:
    """Grid value with the smallest score; ties go to the smallest penalty."""
    best = scores.min()
    tied = np.flatnonzero(scores == best)
    return float(min(grid[i] for i in tied))


class PenaltySelector:
    """K-fold CV machinery for offset-shifted Lasso problems.

    Per-fold training Grams and linear terms are precomputed once, so a
    perturbation sweep can re-run the selection for every noise draw while
    paying only the coordinate-descent cost.
    """

    def __init__(self, x: np.ndarray, response: np.ndarray, folds: list[np.ndarray]):
        x = np.ascontiguousarray(x, dtype=np.float64)
        response = np.asarray(response, dtype=np.float64)
        n = x.shape[0]
        part_gram = [x[f].T @ x[f] for f in folds]
        part_lin = [x[f].T @ response[f] for f in folds]
        tot_gram = sum(part_gram)
        tot_lin = sum(part_lin)
        self.folds = folds
        self.x_val = [x[f] for f in folds]
        self.y_val = [response[f] for f in folds]
        self.n_train = [n - len(f) for f in folds]
        self.train_gram = [
            np.ascontiguousarray((tot_gram - pg) / nt)
            for pg, nt in zip(part_gram, self.n_train)
        ]
        self.train_linear = [
            (tot_lin - pl) / nt for pl, nt in zip(part_lin, self.n_train)
        ]
        self.default_tol = max(CV_TOL, CV_TOL_SCALE * float(np.std(response)))

    def cv_scores(
        self,
        grid: np.ndarray,
        offset: np.ndarray | None = None,
        warm_start: np.ndarray | None = None,
        tol: float | None = None,
        max_iter: int = CV_MAX_ITER,
    ) -> np.ndarray:
        """Mean held-out score per grid value, fitting along the grid with warm starts.

        The offset shifts the linear term during fitting only; candidates
        are scored by out-of-fold prediction error against the observed
        response (as ``0.5 u'G_v u - u' l_v``, the squared error up to a
        constant). Scoring against the data rather than the shifted
        objective keeps noise-chasing fits from looking good: an injected
        draw is rewarded only when removing it genuinely helps predict
        held-out observations, which is exactly the near-cancellation case.
        """
        if tol is None:
            tol = self.default_tol
        p = self.train_gram[0].shape[0]
        scores = np.zeros(len(grid))
        for k in range(len(self.folds)):
            linear = self.train_linear[k]
            if offset is not None:
                linear = np.ascontiguousarray(linear - offset)
            gram = self.train_gram[k]
            x_val, y_val = self.x_val[k], self.y_val[k]
            n_val = x_val.shape[0]
            coef = (
                np.zeros(p) if warm_start is None else np.array(warm_start, dtype=np.float64)
            )
            for i, lam in enumerate(grid):
                cd_solve(gram, linear, float(lam), coef, tol, int(max_iter))
                pred = x_val @ coef
                scores[i] += 0.5 * (pred @ pred) / n_val - (pred @ y_val) / n_val
        return scores / len(self.folds)

    def select(self, grid: np.ndarray, offset: np.ndarray | None = None, **kw) -> tuple[float, np.ndarray]:
        scores = self.cv_scores(np.asarray(grid, dtype=np.float64), offset, **kw)
        return _best_on_grid(np.asarray(grid, dtype=np.float64), scores), scores


def cv_lambda(
    x: np.ndarray,
    response: np.ndarray,
    n_folds: int,
    grid: np.ndarray,
    rng: np.random.Generator,
    *,
    tol: float | None = None,
    max_iter: int = CV_MAX_ITER,
) -> tuple[float, np.ndarray]:
    """Pick the penalty minimizing mean out-of-fold squared prediction error.

    The grid must be strictly decreasing; fits are warm-started along it.
    Returns the winning penalty (smallest among exact ties) and the CV curve.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0 or np.any(np.diff(grid) >= 0):
        raise ConfigError("grid must be nonempty and strictly decreasing")
    folds = make_cv_folds(x.shape[0], n_folds, rng)
    selector = PenaltySelector(x, response, folds)
    scores = selector.cv_scores(grid, offset=None, tol=tol, max_iter=max_iter)
    return _best_on_grid(grid, scores), scores


def select_perturbed_penalty(
    lambda_base: float,
    x: np.ndarray,
    response: np.ndarray,
    offset: np.ndarray | None,
    rng: np.random.Generator,
    *,
    n_folds: int = 5,
    r_grid: tuple[float, ...] = PERTURBED_R_GRID,
    tol: float | None = None,
    max_iter: int = CV_MAX_ITER,
) -> float:
    """CV over the restricted grid ``r * lambda_base`` for the shifted problem.

    Candidates are fitted with the offset and scored by raw out-of-fold
    prediction error (see ``PenaltySelector.cv_scores``); with
    ``offset=None`` the selection coincides with ``cv_lambda`` run on the
    same grid. Ties, including the degenerate all-null case where the
    offset cancels the linear term at a large enough base penalty, go to
    the smallest candidate.
    """
    if lambda_base <= 0:
        raise ContractError("lambda_base must be positive")
    folds = make_cv_folds(x.shape[0], n_folds, rng)
    selector = PenaltySelector(x, response, folds)
    grid = np.array(sorted(r_grid, reverse=True), dtype=np.float64) * lambda_base
    best, _ = selector.select(grid, offset, tol=tol, max_iter=max_iter)
    return best
