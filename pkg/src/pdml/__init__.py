"""Perturbed double machine learning.

Confidence sets for the projection coefficient of a partially linear model
that stay valid when nuisance regressions are estimated too slowly for the
standard Wald interval: perturb the nuisance fits with injected noise,
filter the resulting estimates, and take the union of their Wald intervals.
"""

__version__ = "0.1.0"

from pdml.data import CrossFit, Dataset, FoldSplit, SingleSplit, load_csv, split
from pdml.datagen import SimSetting, gen_covariates, gen_dataset
from pdml.dml import DmlEstimate, ResidualPair, cross_fit, estimate_beta, standard_error, wald_ci
from pdml.filtering import ConfidenceSet, QuantileRule, RadiusRule, apply_filter, compute_rho_n, union_ci
from pdml.learners import LearnerSpec, fit_learner, predict
from pdml.perturb import run_perturbations

__all__ = [
    "__version__",
    "Dataset",
    "FoldSplit",
    "SingleSplit",
    "CrossFit",
    "load_csv",
    "split",
    "SimSetting",
    "gen_covariates",
    "gen_dataset",
    "DmlEstimate",
    "ResidualPair",
    "estimate_beta",
    "standard_error",
    "wald_ci",
    "cross_fit",
    "ConfidenceSet",
    "QuantileRule",
    "RadiusRule",
    "compute_rho_n",
    "apply_filter",
    "union_ci",
    "LearnerSpec",
    "fit_learner",
    "predict",
    "run_perturbations",
]
