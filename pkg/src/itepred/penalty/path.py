"""Warm-started lambda paths and k-fold cross-validated lambda selection."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import SolverError
from ..glm import FitResult
from ..tabular import DesignMatrix
from .solvers import PenaltyConfig, fit_penalized, lambda_max


@dataclass(frozen=True)
class LambdaPath:
    lambdas: np.ndarray
    fits: tuple  # FitResult, or None where the solver failed


@dataclass(frozen=True)
class CvResult:
    fold_assignments: np.ndarray
    lambdas: np.ndarray
    mean_deviance: np.ndarray
    chosen_lambda: float
    chosen_fit: FitResult
    path: LambdaPath

    @property
    def chosen_index(self) -> int:
        return int(np.flatnonzero(self.lambdas == self.chosen_lambda)[0])


def lambda_grid(lam_max: float, path_length: int, ratio: float) -> np.ndarray:
    if path_length < 1:
        raise ValueError("path_length must be positive")
    if path_length == 1:
        return np.array([lam_max])
    return lam_max * np.geomspace(1.0, ratio, path_length)


def lambda_path(design: DesignMatrix, outcome, config: PenaltyConfig,
                lambdas: Optional[np.ndarray] = None, skip_failures: bool = False,
                tol: Optional[float] = None) -> LambdaPath:
    """Fit every lambda on a geometric grid from lambda_max downwards.

    Each fit is warm-started from the previous successful one.  With
    ``skip_failures`` a solver error leaves ``None`` in that slot instead of
    raising.
    """
    if lambdas is None:
        if config.path_length < 2:
            raise ValueError("path_length must be at least 2")
        lam_max = lambda_max(design, outcome, config)
        lambdas = lambda_grid(lam_max, config.path_length, config.lambda_min_ratio)
    lambdas = np.asarray(lambdas, dtype=float)
    fits, warm = [], None
    for lam in lambdas:
        try:
            fit = fit_penalized(design, outcome, config.with_lambda(lam), warm, tol)
        except SolverError:
            if not skip_failures:
                raise
            fits.append(None)
            continue
        fits.append(fit)
        warm = fit
    return LambdaPath(lambdas, tuple(fits))


def fold_ids(n: int, k: int, seed) -> np.ndarray:
    """Seeded permutation cut into ``k`` near-equal blocks; ids run 1..k."""
    if k < 2 or n < k:
        raise ValueError(f"need 2 <= k <= n (k={k}, n={n})")
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=np.int64)
    for f, block in enumerate(np.array_split(perm, k), start=1):
        ids[block] = f
    return ids


def heldout_deviance(design: DesignMatrix, outcome, rows, fit: FitResult) -> float:
    """Summed binomial deviance of ``fit`` on ``rows`` of the (raw-scale) design."""
    eta = design.raw[rows] @ fit.beta + design.offset_or_zero()[rows]
    y = np.asarray(outcome, dtype=float)[rows]
    return float(-2.0 * np.sum(y * eta - np.logaddexp(0.0, eta)))


def cv_select(design: DesignMatrix, outcome, config: PenaltyConfig, k: int = 10,
              seed=0, lambdas: Optional[np.ndarray] = None, fold_tol: float = 1e-6) -> CvResult:
    """Choose lambda by minimum mean held-out deviance (ties go to the larger lambda).

    Fold fits only feed the deviance curve, so they are solved to the looser
    KKT tolerance ``fold_tol``; the returned fit comes from the full-data path.
    """
    y = np.asarray(outcome)
    full = lambda_path(design, y, config, lambdas)
    lambdas = full.lambdas
    folds = fold_ids(design.n, k, seed)
    total = np.zeros(len(lambdas))
    for f in range(1, k + 1):
        test = np.flatnonzero(folds == f)
        train = np.flatnonzero(folds != f)
        path = lambda_path(design.subset(train), y[train], config, lambdas, skip_failures=True,
                           tol=fold_tol)
        for i, fit in enumerate(path.fits):
            total[i] += np.inf if fit is None else heldout_deviance(design, y, test, fit)
    mean_dev = total / design.n
    ok = np.array([fit is not None for fit in full.fits])
    candidates = np.where(ok, mean_dev, np.inf)
    if not np.isfinite(candidates).any():
        # every lambda failed in some fold; fall back to the largest lambda that fitted
        idx = int(np.flatnonzero(ok)[0]) if ok.any() else 0
    else:
        idx = int(np.flatnonzero(candidates == candidates.min())[0])
    if full.fits[idx] is None:
        raise SolverError("no lambda on the path could be fitted")
    return CvResult(folds, lambdas, mean_dev, float(lambdas[idx]), full.fits[idx], full)
