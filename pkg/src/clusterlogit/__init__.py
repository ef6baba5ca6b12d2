"""Cluster-conditional sparse logistic regression.

PAM clustering on Gower dissimilarities with bootstrap choice of k, an
overlapping group-LASSO logistic model with cluster x feature interactions
under strong hierarchy, cluster-conditional odds ratios and BCa bootstrap
intervals.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .dataset import Dataset, StandardizationReport, VariableSchema, load_csv, standardize_continuous
from .design import FCoding, GroupedDesign, build_design, fcode_row
from .effects import EffectEstimate, conditional_log_or, effect_table, interpret, ror_from_ors
from .glasso import (AlphaParams, CVResult, FitPath, ModelParams, cv_select, fista_solve, lambda_max,
                     negloglik, prox_group, recover_params)
from .glm import fit_unpenalized
from .gower import DissimilarityMatrix, gower_dissimilarity
from .pam import Partition, assign_nearest_medoid, pam_build, pam_fit, pam_swap
from .stability import StabilityReport, jaccard, stability_curve
from .bootstrap import BootstrapSummary, bca_interval, bootstrap_run, inclusion_screen, significance_table

__all__ = [
    "AlphaParams", "BootstrapSummary", "CVResult", "Dataset", "DissimilarityMatrix", "EffectEstimate",
    "FCoding", "FitPath", "GroupedDesign", "ModelParams", "Partition", "StabilityReport",
    "StandardizationReport", "VariableSchema", "assign_nearest_medoid", "bca_interval", "bootstrap_run",
    "build_design", "conditional_log_or", "cv_select", "effect_table", "fcode_row", "fista_solve",
    "fit_unpenalized", "gower_dissimilarity", "inclusion_screen", "interpret", "jaccard", "lambda_max",
    "load_csv", "negloglik", "pam_build", "pam_fit", "pam_swap", "prox_group", "recover_params",
    "ror_from_ors", "significance_table", "stability_curve", "standardize_continuous",
]
