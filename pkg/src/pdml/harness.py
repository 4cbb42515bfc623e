"""Monte Carlo driver: replications, benchmark intervals, reports.

One replication generates a dataset, runs the unperturbed estimator, the
perturbation sweep, filtering and the union set, then records coverage and
length for every method next to the oracle diagnostics. Ensembles of
replications are aggregated into a report whose JSON serialization is
byte-identical for a fixed master seed regardless of worker count
(wall-clock timings are therefore kept out of the default output).
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from threadpoolctl import threadpool_limits

import pdml
from pdml.data import CrossFit, Dataset, SingleSplit, SplitScheme, split
from pdml.datagen import SimSetting, gen_dataset
from pdml.dml import oracle_estimate, wald_ci
from pdml.errors import ConfigError, ContractError, DegenerateNoiseError, PdmlError, SimulationError
from pdml.filtering import FilterRule, QuantileRule, RadiusRule, apply_filter, compute_rho_n, union_ci
from pdml.learners import OLS, BasisExpansion, External, Lasso, LearnerSpec
from pdml.normal import normal_cdf, upper_quantile
from pdml.perturb import (
    SweepPath,
    prepare_general_context,
    prepare_linear_context,
    run_perturbations,
)
from pdml.seeds import SeedPath, generator, seed_path

SCHEMA_VERSION = 1

STREAM_DATA = 0
STREAM_SPLIT = 1
STREAM_FIT = 2
STREAM_SWEEP = 3


@dataclass(frozen=True)
class RunConfig:
    """Everything one replication needs besides the setting and the seed."""

    path: str = "linear"
    g_spec: LearnerSpec | None = None
    f_spec: LearnerSpec | None = None
    scheme: SplitScheme = field(default_factory=lambda: CrossFit(2))
    M: int = 500
    alpha: float = 0.05
    alpha0: float = 0.01
    filter_rule: FilterRule = field(default_factory=lambda: QuantileRule(0.95))
    cv_folds: int = 5
    grid_size: int = 100
    grid_ratio: float = 1e-3
    fixed_r: float | None = None
    aggregate: str = "mean"
    noise_scale: float = 1.0
    homoscedastic: bool = False
    center: bool = True
    bias_bound: tuple[float, int, int] | None = None

    def __post_init__(self):
        if self.path not in ("linear", "general"):
            raise ConfigError(f"unknown path {self.path!r}")
        if self.path == "general" and (self.g_spec is None or self.f_spec is None):
            raise ConfigError("general path needs g_spec and f_spec")
        if not 0.0 <= self.alpha0 < self.alpha < 1.0:
            raise ConfigError("need 0 <= alpha0 < alpha < 1")

    @property
    def alpha_prime(self) -> float:
        return self.alpha - self.alpha0


@dataclass
class RepResult:
    rep: int
    beta_hat: float
    se_hat: float
    beta_ora: float | None
    ci_wald: tuple[float, float]
    ci_union: "pdml.ConfidenceSet | None"
    ci_bias_bound: tuple[float, float] | None
    m_star: int | None
    beta_mstar: float | None
    covers: dict
    lengths: dict
    n_retained: int | None


@dataclass
class RepFailure:
    rep: int
    reason: str


def ci_bias_bound(beta_hat: float, se_hat: float, alpha: float, rho_n: float) -> tuple[float, float]:
    """Wald interval symmetrically enlarged by the bias bound."""
    if rho_n < 0:
        raise ContractError("rho_n must be nonnegative")
    lo, hi = wald_ci(beta_hat, se_hat, alpha)
    return (lo - rho_n, hi + rho_n)


def noncentral_chisq1_cv(alpha: float, b_squared: float) -> float:
    """1-alpha quantile of a noncentral chi-square with 1 df, found by
    root-finding P((Z+B)^2 <= c) = 1 - alpha on the normal CDF."""
    if not 0.0 < alpha < 1.0:
        raise ContractError("alpha must lie in (0, 1)")
    if b_squared < 0:
        raise ContractError("noncentrality must be nonnegative")
    b = math.sqrt(b_squared)

    def prob(c: float) -> float:
        r = math.sqrt(c)
        return normal_cdf(r - b) - normal_cdf(-r - b)

    hi = (b + upper_quantile(alpha / 4.0) + 10.0) ** 2
    return float(brentq(lambda c: prob(c) - (1.0 - alpha), 1e-12, hi, xtol=1e-10))


@dataclass(frozen=True)
class ObaResult:
    bias: float
    se_emp: float
    cv: float
    chi: float
    intervals: tuple[tuple[float, float], ...]


def oba_ci(beta_hats: Sequence[float], beta_true: float, alpha: float) -> ObaResult:
    """Bias-aware benchmark built from the Monte Carlo ensemble.

    The empirical bias and population-style empirical SE define a shared
    half-width ``chi``; each replication's interval is its estimate plus or
    minus ``chi``.
    """
    betas = np.asarray(beta_hats, dtype=np.float64)
    if betas.shape[0] < 2:
        raise ContractError("OBA needs at least 2 replications")
    bias = float(betas.mean() - beta_true)
    se_emp = float(np.sqrt(np.mean((betas - betas.mean()) ** 2)))
    if se_emp == 0.0:
        raise DegenerateNoiseError("degenerate ensemble: empirical SE is zero")
    cv = noncentral_chisq1_cv(alpha, (bias / se_emp) ** 2)
    chi = se_emp * math.sqrt(cv)
    return ObaResult(
        bias=bias, se_emp=se_emp, cv=cv, chi=chi,
        intervals=tuple((b - chi, b + chi) for b in betas),
    )


def find_mstar(results: list, beta_ora: float) -> tuple[int, float]:
    """Perturbation index closest to the oracle estimate (smallest on ties)."""
    if not results:
        raise ContractError("results must be nonempty")
    gaps = np.array([abs(r.beta_m - beta_ora) for r in results])
    k = int(np.argmin(gaps))
    return results[k].m, results[k].beta_m


def _eval_indices(split_obj) -> np.ndarray:
    if isinstance(split_obj.scheme, SingleSplit):
        return split_obj.folds[0]
    return np.sort(np.concatenate(split_obj.folds))


def run_replication(
    setting: SimSetting,
    config: RunConfig,
    seed: int | SeedPath,
    compute_oracle: bool = True,
) -> RepResult:
    """One end-to-end replication; deterministic given the seed path."""
    base = seed if isinstance(seed, tuple) else (int(seed),)
    ds, truth = gen_dataset(setting, generator(base, (STREAM_DATA,)))
    fold_split = split(ds.n, config.scheme, generator(base, (STREAM_SPLIT,)))
    fit_rng = generator(base, (STREAM_FIT,))
    if config.path == "linear":
        ctx = prepare_linear_context(
            ds, fold_split, fit_rng,
            cv_folds=config.cv_folds, grid_size=config.grid_size, grid_ratio=config.grid_ratio,
            aggregate=config.aggregate, fixed_r=config.fixed_r,
            homoscedastic=config.homoscedastic, noise_scale=config.noise_scale,
            center=config.center,
        )
        sweep_path = SweepPath.LINEAR_LASSO
    else:
        ctx = prepare_general_context(
            ds, fold_split, config.g_spec, config.f_spec, fit_rng,
            aggregate=config.aggregate, noise_scale=config.noise_scale,
        )
        sweep_path = SweepPath.GENERAL_LEARNER
    est = ctx.estimate
    beta_true = setting.beta_true
    wald = wald_ci(est.beta_hat, est.se_hat, config.alpha)
    covers = {"wald": wald[0] <= beta_true <= wald[1]}
    lengths = {"wald": wald[1] - wald[0]}

    cib = None
    if config.bias_bound is not None:
        c_star, s_eta, s_gamma = config.bias_bound
        rho = compute_rho_n(c_star, s_eta, s_gamma, setting.p, ds.n)
        cib = ci_bias_bound(est.beta_hat, est.se_hat, config.alpha, rho)
        covers["bias_bound"] = cib[0] <= beta_true <= cib[1]
        lengths["bias_bound"] = cib[1] - cib[0]

    union = None
    n_retained = None
    m_star = beta_mstar = None
    beta_ora = None
    if compute_oracle:
        beta_ora = oracle_estimate(ds, truth.f, truth.g, _eval_indices(fold_split))
    if config.M >= 1:
        results = run_perturbations(
            ctx, config.M, sweep_path, config.alpha_prime, seed_path(base, (STREAM_SWEEP,)),
        )
        retained = apply_filter(results, config.filter_rule, est.se_hat, p=setting.p, n=ds.n)
        union = union_ci(results, retained, alpha=config.alpha)
        n_retained = len(retained)
        covers["union"] = union.contains(beta_true)
        lengths["union"] = union.hull_length
        lengths["union_measure"] = union.total_measure
        if beta_ora is not None:
            m_star, beta_mstar = find_mstar(results, beta_ora)
    return RepResult(
        rep=base[-1] if len(base) > 1 else 0,
        beta_hat=est.beta_hat, se_hat=est.se_hat, beta_ora=beta_ora,
        ci_wald=wald, ci_union=union, ci_bias_bound=cib,
        m_star=m_star, beta_mstar=beta_mstar,
        covers=covers, lengths=lengths, n_retained=n_retained,
    )


def _replication_task(args) -> RepResult | RepFailure:
    setting, config, master_seed, rep = args
    with threadpool_limits(limits=1):
        try:
            result = run_replication(setting, config, seed_path((master_seed, rep)))
            result.rep = rep
            return result
        except PdmlError as exc:
            return RepFailure(rep=rep, reason=f"{type(exc).__name__}: {exc}")


def _mean(values) -> float | None:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def _estimator_stats(values: list[float], beta_true: float) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    return {
        "abs_bias": float(abs(arr.mean() - beta_true)),
        "empirical_se": float(np.sqrt(np.mean((arr - arr.mean()) ** 2))),
    }


@dataclass
class SimReport:
    setting: SimSetting
    config: RunConfig
    master_seed: int
    reps_requested: int
    results: list[RepResult]
    failures: list[RepFailure]
    oba: ObaResult | None
    runtime_seconds: float | None = None

    def methods_summary(self) -> dict:
        out: dict = {}
        res = self.results
        beta_true = self.setting.beta_true
        out["wald"] = {
            "coverage": _mean([r.covers["wald"] for r in res]),
            "mean_length": _mean([r.lengths["wald"] for r in res]),
            "mean_estimated_se": _mean([r.se_hat for r in res]),
        }
        if res and "union" in res[0].covers:
            out["union"] = {
                "coverage": _mean([r.covers["union"] for r in res]),
                "mean_length": _mean([r.lengths["union"] for r in res]),
                "mean_total_measure": _mean([r.lengths["union_measure"] for r in res]),
                "mean_retained": _mean([r.n_retained for r in res]),
            }
        if res and "bias_bound" in res[0].covers:
            out["bias_bound"] = {
                "coverage": _mean([r.covers["bias_bound"] for r in res]),
                "mean_length": _mean([r.lengths["bias_bound"] for r in res]),
            }
        if self.oba is not None:
            cover = [lo <= beta_true <= hi for (lo, hi) in self.oba.intervals]
            out["oba"] = {
                "coverage": float(np.mean(cover)),
                "mean_length": 2.0 * self.oba.chi,
                "bias": self.oba.bias,
                "empirical_se": self.oba.se_emp,
                "cv": self.oba.cv,
            }
        return out

    def estimators_summary(self) -> dict:
        res = self.results
        beta_true = self.setting.beta_true
        out = {"dml": _estimator_stats([r.beta_hat for r in res], beta_true)}
        if res and res[0].beta_ora is not None:
            out["oracle"] = _estimator_stats([r.beta_ora for r in res], beta_true)
        if res and res[0].beta_mstar is not None:
            out["mstar"] = _estimator_stats([r.beta_mstar for r in res], beta_true)
        return out

    def to_dict(self, include_runtime: bool = False) -> dict:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "software_version": pdml.__version__,
            "master_seed": self.master_seed,
            "config": config_echo(self.setting, self.config),
            "reps_requested": self.reps_requested,
            "reps_completed": len(self.results),
            "reps_failed": len(self.failures),
            "failure_reasons": [f.reason for f in self.failures],
            "methods": self.methods_summary(),
            "estimators": self.estimators_summary(),
            "per_rep": [
                {
                    "rep": r.rep,
                    "beta_hat": r.beta_hat,
                    "se_hat": r.se_hat,
                    "beta_ora": r.beta_ora,
                    "beta_mstar": r.beta_mstar,
                    "m_star": r.m_star,
                    "ci_wald": list(r.ci_wald),
                    "union_segments": [list(s) for s in r.ci_union.segments] if r.ci_union else None,
                    "n_retained": r.n_retained,
                    "covers": {k: bool(v) for k, v in r.covers.items()},
                    "lengths": r.lengths,
                }
                for r in self.results
            ],
        }
        if include_runtime:
            doc["runtime_seconds"] = self.runtime_seconds
        return doc


def _spec_echo(spec: LearnerSpec | None) -> dict | None:
    if spec is None:
        return None
    if isinstance(spec, OLS):
        return {"kind": "ols"}
    if isinstance(spec, Lasso):
        return {"kind": "lasso", "n_folds": spec.cv.n_folds, "grid_size": spec.cv.grid_size}
    if isinstance(spec, BasisExpansion):
        return {"kind": "basis", "n_knots": spec.n_knots, "degree": spec.degree}
    if isinstance(spec, External):
        return {"kind": "external", "command": list(spec.command), "params": list(spec.params)}
    return {"kind": "unknown"}


def config_echo(setting: SimSetting | None, config: RunConfig) -> dict:
    rule = config.filter_rule
    if isinstance(rule, QuantileRule):
        filt = {"rule": "quantile", "pi_star": rule.pi_star}
    else:
        filt = {"rule": "radius", "c_star": rule.c_star, "s_eta": rule.s_eta, "s_gamma": rule.s_gamma}
    scheme = (
        {"scheme": "single"}
        if isinstance(config.scheme, SingleSplit)
        else {"scheme": "crossfit", "k": config.scheme.k}
    )
    return {
        "setting": None if setting is None else {
            "kind": setting.kind, "n": setting.n, "p": setting.p,
            "s": setting.s, "beta_true": setting.beta_true,
        },
        "path": config.path,
        "learner_g": _spec_echo(config.g_spec),
        "learner_f": _spec_echo(config.f_spec),
        **scheme,
        "M": config.M,
        "alpha": config.alpha,
        "alpha0": config.alpha0,
        "filter": filt,
        "cv_folds": config.cv_folds,
        "grid_size": config.grid_size,
        "grid_ratio": config.grid_ratio,
        "fixed_r": config.fixed_r,
        "aggregate": config.aggregate,
        "noise_scale": config.noise_scale,
        "homoscedastic": config.homoscedastic,
        "center": config.center,
        "bias_bound": list(config.bias_bound) if config.bias_bound else None,
    }


def run_simulation(
    setting: SimSetting,
    config: RunConfig,
    reps: int,
    master_seed: int,
    workers: int = 1,
) -> SimReport:
    """Replicated simulation with deterministic per-replication seeding.

    More than 10% failed replications aborts; failures are otherwise
    excluded from the averages and counted in the report.
    """
    if reps < 1:
        raise ConfigError("reps must be at least 1")
    t0 = time.perf_counter()
    tasks = [(setting, config, master_seed, rep) for rep in range(reps)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_replication_task, tasks, chunksize=1))
    else:
        outcomes = [_replication_task(t) for t in tasks]
    results = [o for o in outcomes if isinstance(o, RepResult)]
    failures = [o for o in outcomes if isinstance(o, RepFailure)]
    if len(failures) > 0.1 * reps:
        raise SimulationError(f"{len(failures)} of {reps} replications failed")
    oba = None
    if len(results) >= 2:
        oba = oba_ci([r.beta_hat for r in results], setting.beta_true, config.alpha)
    return SimReport(
        setting=setting, config=config, master_seed=master_seed,
        reps_requested=reps, results=results, failures=failures, oba=oba,
        runtime_seconds=time.perf_counter() - t0,
    )


def run_filter_sweep(
    setting: SimSetting,
    config: RunConfig,
    c_stars: Sequence[float],
    master_seed: int,
    s_eta: int | None = None,
    s_gamma: int | None = None,
) -> dict:
    """Radius-rule comparison on a single replication.

    The perturbation sweep runs once; every ``c_star`` candidate re-filters
    the same results, so differences across rows isolate the filtering
    threshold (union set) against the additive enlargement (bias-bound
    interval).
    """
    if s_eta is None or s_gamma is None:
        if setting.s is None:
            raise ConfigError("filter sweep needs sparsity levels (s_eta, s_gamma)")
        s_eta = s_eta if s_eta is not None else setting.s
        s_gamma = s_gamma if s_gamma is not None else setting.s
    base = seed_path((master_seed, 0))
    ds, truth = gen_dataset(setting, generator(base, (STREAM_DATA,)))
    fold_split = split(ds.n, config.scheme, generator(base, (STREAM_SPLIT,)))
    ctx = prepare_linear_context(
        ds, fold_split, generator(base, (STREAM_FIT,)),
        cv_folds=config.cv_folds, grid_size=config.grid_size, grid_ratio=config.grid_ratio,
        aggregate=config.aggregate, fixed_r=config.fixed_r, center=config.center,
    )
    est = ctx.estimate
    results = run_perturbations(
        ctx, config.M, SweepPath.LINEAR_LASSO, config.alpha_prime, seed_path(base, (STREAM_SWEEP,)),
    )
    rows = []
    for c_star in c_stars:
        rho = compute_rho_n(c_star, s_eta, s_gamma, setting.p, ds.n)
        cib = ci_bias_bound(est.beta_hat, est.se_hat, config.alpha, rho)
        try:
            retained = apply_filter(
                results, RadiusRule(c_star, s_eta, s_gamma), est.se_hat, p=setting.p, n=ds.n,
            )
            union = union_ci(results, retained, alpha=config.alpha)
            union_len, union_measure, n_ret = union.hull_length, union.total_measure, len(retained)
        except PdmlError:
            union_len = union_measure = None
            n_ret = 0
        rows.append({
            "c_star": c_star, "rho_n": rho,
            "bias_bound_length": cib[1] - cib[0],
            "union_length": union_len, "union_measure": union_measure,
            "n_retained": n_ret,
        })
    return {
        "schema_version": SCHEMA_VERSION,
        "master_seed": master_seed,
        "config": config_echo(setting, config),
        "beta_hat": est.beta_hat,
        "se_hat": est.se_hat,
        "max_deviation": float(max(r.deviation for r in results)),
        "rows": rows,
    }


def run_fit(
    ds: Dataset,
    config: RunConfig,
    master_seed: int,
    workers: int = 1,
) -> dict:
    """Real-data path: point estimate, Wald interval, filtered union.

    No oracle or ensemble benchmarks; those need the data generating
    process.
    """
    base = seed_path((master_seed,))
    fold_split = split(ds.n, config.scheme, generator(base, (STREAM_SPLIT,)))
    if config.path == "linear":
        ctx = prepare_linear_context(
            ds, fold_split, generator(base, (STREAM_FIT,)),
            cv_folds=config.cv_folds, grid_size=config.grid_size, grid_ratio=config.grid_ratio,
            aggregate=config.aggregate, fixed_r=config.fixed_r,
            homoscedastic=config.homoscedastic, center=config.center,
        )
        sweep_path = SweepPath.LINEAR_LASSO
    else:
        ctx = prepare_general_context(
            ds, fold_split, config.g_spec, config.f_spec, generator(base, (STREAM_FIT,)),
            aggregate=config.aggregate,
        )
        sweep_path = SweepPath.GENERAL_LEARNER
    est = ctx.estimate
    wald = wald_ci(est.beta_hat, est.se_hat, config.alpha)
    results = run_perturbations(
        ctx, config.M, sweep_path, config.alpha_prime, seed_path(base, (STREAM_SWEEP,)),
        workers=workers,
    )
    retained = apply_filter(results, config.filter_rule, est.se_hat, p=ds.p, n=ds.n)
    union = union_ci(results, retained, alpha=config.alpha)
    return {
        "schema_version": SCHEMA_VERSION,
        "software_version": pdml.__version__,
        "master_seed": master_seed,
        "config": config_echo(None, config),
        "n": ds.n,
        "p": ds.p,
        "beta_hat": est.beta_hat,
        "se_hat": est.se_hat,
        "wald": list(wald),
        "union": {
            "segments": [list(s) for s in union.segments],
            "hull": list(union.hull),
            "total_measure": union.total_measure,
            "retained": list(union.retained),
        },
    }


def emit_report(report: SimReport, path, format: str = "json", include_runtime: bool = False) -> None:
    """Serialize a report; JSON carries the full nested document, CSV one
    row per (method, metric) plus seed and config rows for replay."""
    doc = report.to_dict(include_runtime=include_runtime)
    if format == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    elif format == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "metric", "value"])
            writer.writerow(["meta", "master_seed", report.master_seed])
            writer.writerow(["meta", "schema_version", SCHEMA_VERSION])
            writer.writerow(["meta", "config", json.dumps(doc["config"], sort_keys=True)])
            for method, metrics in doc["methods"].items():
                for metric, value in metrics.items():
                    writer.writerow([method, metric, value])
            for estimator, metrics in doc["estimators"].items():
                for metric, value in metrics.items():
                    writer.writerow([f"estimator:{estimator}", metric, value])
    else:
        raise ConfigError(f"unknown report format {format!r}")
