"""Filtering of perturbed estimates and union confidence sets.

Two filtering rules decide which perturbed Wald intervals survive:

* ``QuantileRule(pi_star)`` keeps the intervals whose center deviates from
  the unperturbed estimate by no more than the empirical pi_star-quantile
  of those deviations (order statistic at rank ceil(pi_star * M), ties
  kept inclusively, so at least ceil(pi_star * M) survive);
* ``RadiusRule(c_star, s_eta, s_gamma)`` keeps deviations within
  ``1.01 * rho_n + se_hat`` where ``rho_n`` is the sparsity-based bias
  bound. The 1.01 factor is a fixed small slack constant, not a tunable.

The union of surviving intervals is reduced to disjoint sorted segments;
both the total measure and the convex hull are reported, with the hull as
the headline length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pdml.errors import ContractError, EmptyFilterError

RADIUS_SLACK = 1.01


@dataclass(frozen=True)
class QuantileRule:
    pi_star: float

    def __post_init__(self):
        if not 0.0 < self.pi_star <= 1.0:
            raise ContractError("pi_star must lie in (0, 1]")


@dataclass(frozen=True)
class RadiusRule:
    c_star: float
    s_eta: int
    s_gamma: int

    def __post_init__(self):
        if self.c_star <= 0 or self.s_eta < 1 or self.s_gamma < 1:
            raise ContractError("radius rule needs c_star > 0 and sparsities >= 1")


FilterRule = QuantileRule | RadiusRule


@dataclass(frozen=True)
class ConfidenceSet:
    """Union of intervals as sorted disjoint segments."""

    segments: tuple[tuple[float, float], ...]
    hull: tuple[float, float]
    total_measure: float
    retained: tuple[int, ...]
    alpha: float | None = None

    @property
    def hull_length(self) -> float:
        return self.hull[1] - self.hull[0]

    def contains(self, value: float) -> bool:
        return any(lo <= value <= hi for lo, hi in self.segments)


def compute_rho_n(c_star: float, s_eta: int, s_gamma: int, p: int, n: int) -> float:
    """Bias bound ``c_star * (s_gamma + sqrt(s_eta * s_gamma)) * log(p) / n``."""
    if min(c_star, s_eta, s_gamma, p, n) <= 0:
        raise ContractError("all rho_n arguments must be positive")
    return c_star * (s_gamma + math.sqrt(s_eta * s_gamma)) * math.log(p) / n


def deviation_quantile(deviations: np.ndarray, pi_star: float) -> float:
    """Order statistic at rank ceil(pi_star * M), 1-indexed."""
    m = deviations.shape[0]
    rank = math.ceil(pi_star * m)
    return float(np.sort(deviations)[rank - 1])


def apply_filter(
    results: list,
    rule: FilterRule,
    se_hat: float,
    *,
    p: int | None = None,
    n: int | None = None,
) -> tuple[int, ...]:
    """Indices ``m`` whose estimates survive the rule.

    The radius rule needs the problem dimensions ``p`` and ``n`` to
    evaluate its bias bound, and raises ``EmptyFilterError`` when nothing
    survives (the union would be undefined). The quantile rule always
    retains at least ceil(pi_star * M) entries.
    """
    if not results:
        raise ContractError("results must be nonempty")
    deviations = np.array([r.deviation for r in results])
    if isinstance(rule, QuantileRule):
        threshold = deviation_quantile(deviations, rule.pi_star)
    else:
        if p is None or n is None:
            raise ContractError("radius filtering needs p and n")
        rho_n = compute_rho_n(rule.c_star, rule.s_eta, rule.s_gamma, p, n)
        threshold = RADIUS_SLACK * rho_n + se_hat
    retained = tuple(r.m for r, dev in zip(results, deviations) if dev <= threshold)
    if not retained:
        raise EmptyFilterError(
            f"radius threshold {threshold:.3e} excluded all {len(results)} perturbations"
        )
    return retained


def union_ci(results: list, retained: tuple[int, ...], alpha: float | None = None) -> ConfidenceSet:
    """Merge the retained intervals into disjoint sorted segments."""
    if not retained:
        raise ContractError("retained index set must be nonempty")
    keep = set(retained)
    intervals = sorted(r.ci_m for r in results if r.m in keep)
    if len(intervals) != len(keep):
        raise ContractError("retained indices must match result entries")
    merged = [list(intervals[0])]
    for lo, hi in intervals[1:]:
        if lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    segments = tuple((lo, hi) for lo, hi in merged)
    total = sum(hi - lo for lo, hi in segments)
    return ConfidenceSet(
        segments=segments,
        hull=(segments[0][0], segments[-1][1]),
        total_measure=total,
        retained=tuple(sorted(keep)),
        alpha=alpha,
    )
