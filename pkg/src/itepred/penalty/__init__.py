"""Penalized maximum likelihood: elastic net, hierarchical group lasso, paths and CV."""
from .path import CvResult, LambdaPath, cv_select, fold_ids, heldout_deviance, lambda_grid, lambda_path
from .solvers import (
    PenaltyConfig,
    elastic_net_kkt,
    fit_elastic_net,
    fit_hgl,
    fit_penalized,
    hgl_kkt,
    lambda_max,
    latent_groups,
    penalty_factors,
)

__all__ = [
    "CvResult", "LambdaPath", "PenaltyConfig", "cv_select", "elastic_net_kkt", "fit_elastic_net",
    "fit_hgl", "fit_penalized", "fold_ids", "heldout_deviance", "hgl_kkt", "lambda_grid",
    "lambda_max", "lambda_path", "latent_groups", "penalty_factors",
]
