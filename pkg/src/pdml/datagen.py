"""Synthetic data generators for the built-in simulation settings.

Four nuisance regimes over Gaussian-copula uniform covariates:

* F1 -- dense linear nuisances, uniform(0,1) coefficients;
* F2 -- sparse linear nuisances (first ``s`` coordinates active);
* F3 -- additive nonlinear nuisances, cyclically assigned from a fixed
  library of six univariate functions;
* F4 -- F3 plus pairwise (treatment) and triple (outcome) interactions.

Every generator also returns exact evaluators of the true conditional
means so that oracle diagnostics can be computed without re-deriving the
data generating process.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import ndtr

from pdml.data import Dataset
from pdml.errors import ContractError


@dataclass(frozen=True)
class SimSetting:
    kind: str
    n: int
    p: int
    s: int | None = None
    beta_true: float = 0.5

    def __post_init__(self):
        if self.kind not in ("F1", "F2", "F3", "F4"):
            raise ContractError(f"unknown setting kind {self.kind!r}")
        if self.kind == "F2":
            if self.s is None or not (1 <= self.s <= self.p):
                raise ContractError("F2 requires 1 <= s <= p")
        elif self.s is not None:
            raise ContractError(f"sparsity s only applies to F2, not {self.kind}")
        if not np.isfinite(self.beta_true):
            raise ContractError("beta_true must be finite")
        if self.n < 1 or self.p < 1:
            raise ContractError("n and p must be positive")


def s1(z):
    return 3.0 * np.sin(z) / 2.0


def s2(z):
    return 2.0 * np.exp(-z / 2.0)


def s3(z):
    return (z - 1.0) ** 2 - 25.0 / 12.0


def s4(z):
    return z - 1.0 / 3.0


def s5(z):
    return 3.0 * z / 4.0


def s6(z):
    return z / 2.0


FUNCTION_LIBRARY: tuple[Callable, ...] = (s1, s2, s3, s4, s5, s6)


def cyclic_index(k: int) -> int:
    """Remainder of k upon 6, with a zero remainder recorded as 6."""
    r = k % 6
    return 6 if r == 0 else r


def treatment_component(j: int) -> Callable:
    """Univariate function applied to coordinate j (1-based) in f."""
    return FUNCTION_LIBRARY[cyclic_index(j) - 1]


def outcome_component(j: int) -> Callable:
    """Univariate function applied to coordinate j (1-based) in h."""
    return FUNCTION_LIBRARY[cyclic_index(j + 2) - 1]


@functools.lru_cache(maxsize=8)
def _copula_chol(p: int) -> np.ndarray:
    idx = np.arange(p)
    cov = 0.5 ** np.abs(idx[:, None] - idx[None, :])
    chol = np.linalg.cholesky(cov)
    chol.setflags(write=False)
    return chol


def gen_covariates(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """Correlated uniforms: rows of N(0, A) with A[k,l] = 0.5^|k-l| pushed
    through the standard normal CDF."""
    if n < 1 or p < 1:
        raise ContractError("n and p must be positive")
    w = rng.standard_normal((n, p)) @ _copula_chol(p).T
    return ndtr(w)


def _nonlinear_f(kind: str, x: np.ndarray) -> np.ndarray:
    p = x.shape[1]
    out = np.zeros(x.shape[0])
    for j in range(1, p + 1):
        out += treatment_component(j)(x[:, j - 1])
    if kind == "F4":
        for j in range(p - 1):
            out += x[:, j] * x[:, j + 1]
    return out


def _nonlinear_h(kind: str, x: np.ndarray) -> np.ndarray:
    p = x.shape[1]
    out = np.zeros(x.shape[0])
    for j in range(1, p + 1):
        out += outcome_component(j)(x[:, j - 1])
    if kind == "F4":
        for j in range(p - 2):
            out += x[:, j] * x[:, j + 1] * x[:, j + 2]
    return out


def eval_nonlinear(setting: SimSetting, x: np.ndarray) -> tuple[float, float]:
    """Exact (f, h) values at one covariate row for the F3/F4 forms."""
    if setting.kind not in ("F3", "F4"):
        raise ContractError("eval_nonlinear applies to F3 and F4 only")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != setting.p:
        raise ContractError(f"x must be a length-{setting.p} vector")
    row = x[None, :]
    return float(_nonlinear_f(setting.kind, row)[0]), float(_nonlinear_h(setting.kind, row)[0])


@dataclass(frozen=True)
class TrueNuisances:
    """Exact evaluators of the data generating conditional means.

    ``f`` is the treatment mean, ``h`` the outcome adjustment, and
    ``g = beta * f + h`` the outcome mean; all accept an (n, p) matrix.
    For the linear settings the coefficient vectors are also exposed.
    """

    beta: float
    f: Callable[[np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    gamma: np.ndarray | None = None
    mu: np.ndarray | None = None

    def g(self, x: np.ndarray) -> np.ndarray:
        return self.beta * self.f(x) + self.h(x)

    @property
    def eta(self) -> np.ndarray | None:
        """Coefficients of the outcome mean in the linear settings."""
        if self.gamma is None:
            return None
        return self.beta * self.gamma + self.mu


def gen_dataset(
    setting: SimSetting,
    rng: np.random.Generator,
    noise_scale: float = 1.0,
) -> tuple[Dataset, TrueNuisances]:
    """Draw one dataset from the partially linear model
    ``D = f(X) + delta``, ``Y = beta * D + h(X) + e`` with standard normal
    noise (scaled by ``noise_scale``; zero gives the exact noiseless model).

    Draw order is fixed (coefficients, covariates, treatment noise, outcome
    noise) so identical seeds give identical datasets bit for bit.
    """
    kind, n, p, beta = setting.kind, setting.n, setting.p, setting.beta_true
    if kind in ("F1", "F2"):
        gamma = rng.uniform(0.0, 1.0, size=p)
        mu = rng.uniform(0.0, 1.0, size=p)
        if kind == "F2":
            gamma[setting.s:] = 0.0
            mu[setting.s:] = 0.0
        truth = TrueNuisances(
            beta=beta,
            f=lambda x, _g=gamma: x @ _g,
            h=lambda x, _m=mu: x @ _m,
            gamma=gamma,
            mu=mu,
        )
    else:
        truth = TrueNuisances(
            beta=beta,
            f=lambda x, _k=kind: _nonlinear_f(_k, x),
            h=lambda x, _k=kind: _nonlinear_h(_k, x),
        )
    x = gen_covariates(n, p, rng)
    delta = noise_scale * rng.standard_normal(n)
    e = noise_scale * rng.standard_normal(n)
    d = truth.f(x) + delta
    y = beta * d + truth.h(x) + e
    labels = tuple(f"x{j + 1}" for j in range(p))
    return Dataset(y=y, d=d, x=x, labels=labels), truth
