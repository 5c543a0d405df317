"""Penalized logistic regression solvers.

Both solvers minimise

    -(1/n) loglik(beta) + penalty(beta)

on the standardized design, with the intercept never penalized.  The outer
loop is a proximal Newton (IRLS) iteration with a backtracking line search on
the true objective; the quadratic model is solved by cyclic coordinate
descent (elastic net) or by accelerated proximal gradient over an overlapped
latent group expansion (hierarchical group lasso).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import expit

from ..errors import LengthMismatch, NoConvergence
from ..glm import FitResult, bernoulli_loglik, irls
from ..tabular import INTERACTION, INTERCEPT, MAIN, TREATMENT, Coefficients, DesignMatrix, \
    unstandardize_vector
from . import _kernels

FAMILIES = ("ridge", "lasso", "elastic_net", "hierarchical_group_lasso")
RIDGE_ALPHA_FLOOR = 1e-3
WEIGHT_FLOOR = 1e-5


@dataclass(frozen=True)
class PenaltyConfig:
    family: str = "lasso"
    lam: float = 0.0
    alpha: float = 1.0
    penalize_treatment_main: bool = True
    path_length: int = 50
    lambda_min_ratio: float = 1e-3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown penalty family {self.family!r}")
        if not (self.lam >= 0 and np.isfinite(self.lam)):
            raise ValueError("lambda must be finite and nonnegative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 < self.lambda_min_ratio < 1.0:
            raise ValueError("lambda_min_ratio must lie in (0, 1)")

    @property
    def mixing(self) -> float:
        return {"ridge": 0.0, "lasso": 1.0}.get(self.family, self.alpha)

    def with_lambda(self, lam: float) -> "PenaltyConfig":
        return replace(self, lam=float(lam))

    def to_dict(self) -> dict:
        return {"family": self.family, "lambda": self.lam, "alpha": self.mixing,
                "penalize_treatment_main": self.penalize_treatment_main,
                "path_length": self.path_length, "lambda_min_ratio": self.lambda_min_ratio}


def penalty_factors(design: DesignMatrix, config: PenaltyConfig) -> np.ndarray:
    """1 for penalized design columns, 0 for the intercept (and optionally treatment)."""
    pf = np.ones(design.n_columns)
    for j, role in enumerate(design.roles):
        if role == INTERCEPT or (role == TREATMENT and not config.penalize_treatment_main):
            pf[j] = 0.0
    return pf


def _null_fit(X, y, offset, free):
    """ML fit restricted to the unpenalized columns; other coefficients are 0."""
    beta = np.zeros(X.shape[1])
    if free.any():
        b, _, _ = irls(X[:, free], y, offset)
        beta[free] = b
    return beta


def _penalized_objective(eta, y, beta, l1, l2):
    n = y.shape[0]
    return (-bernoulli_loglik(eta, y) / n + np.dot(l1, np.abs(beta))
            + 0.5 * np.dot(l2, beta * beta))


def _prox_newton(X, y, off, beta, inner, objective, kkt, tol, max_iter):
    """Shared outer loop.  Returns ``(beta, iterations, kkt_residual, objectives)``."""
    n = y.shape[0]
    eta = X @ beta + off
    F = objective(eta, beta)
    trace = [F]
    res = kkt(beta, -(X.T @ (y - expit(eta))) / n)
    if res <= tol:
        return beta, 0, res, trace
    for it in range(1, max_iter + 1):
        mu = expit(eta)
        w = np.maximum(mu * (1.0 - mu), WEIGHT_FLOOR)
        z = (eta - off) + (y - mu) / w
        H = (X.T * w) @ X / n
        c = X.T @ (w * z) / n
        proposal = inner(H, c, beta.copy(), res)
        d = proposal - beta
        t = 1.0
        while True:
            cand = beta + t * d
            eta_c = X @ cand + off
            F_c = objective(eta_c, cand)
            if F_c <= F + 1e-13 * abs(F):
                break
            t *= 0.5
            if t < 1e-12:
                cand, eta_c, F_c = beta, eta, F
                break
        beta, eta, F = cand, eta_c, F_c
        trace.append(F)
        res = kkt(beta, -(X.T @ (y - expit(eta))) / n)
        if res <= tol:
            return beta, it, res, trace
        if t < 1e-12:
            break
    raise NoConvergence(f"penalized IRLS stopped with KKT residual {res:.3g}")


def _finish(design, y, beta_std, iterations, meta):
    beta = unstandardize_vector(beta_std, design.scaling)
    coefs = Coefficients.from_vector(beta, design.roles)
    eta = design.std @ beta_std + design.offset_or_zero()
    ll = bernoulli_loglik(eta, y)
    nonzero = int(np.count_nonzero(beta_std[np.array(design.roles) != INTERCEPT]))
    meta = dict(meta, nonzero=nonzero)
    return FitResult(coefs, ll, iterations, True, design.n, nonzero, beta_std, meta)


def _check(design, outcome):
    y = np.asarray(outcome, dtype=float)
    if y.shape != (design.n,):
        raise LengthMismatch("outcome length differs from design rows")
    return y


# ----------------------------------------------------------------- elastic net


def elastic_net_kkt(X, y, off, beta, lam, alpha, pf):
    """Max KKT violation of the elastic-net problem at ``beta`` (standardized scale)."""
    n = y.shape[0]
    grad = -(X.T @ (y - expit(X @ beta + off))) / n
    return _en_kkt(beta, grad, lam * alpha * pf, lam * (1 - alpha) * pf)


def _en_kkt(beta, grad, l1, l2):
    g = grad + l2 * beta
    active = beta != 0
    viol = np.where(active, np.abs(g + l1 * np.sign(beta)), np.maximum(np.abs(g) - l1, 0.0))
    return float(np.max(viol, initial=0.0))


def elastic_net_lambda_max(design: DesignMatrix, outcome, config: PenaltyConfig) -> float:
    X, y, off = design.std, _check(design, outcome), design.offset_or_zero()
    pf = penalty_factors(design, config)
    beta = _null_fit(X, y, off, pf == 0)
    grad = -(X.T @ (y - expit(X @ beta + off))) / len(y)
    return float(np.max(np.abs(grad[pf > 0]), initial=0.0)) / max(config.mixing, RIDGE_ALPHA_FLOOR)


def fit_elastic_net(design: DesignMatrix, outcome, config: PenaltyConfig,
                    beta_init: Optional[np.ndarray] = None, tol: float = 1e-9,
                    max_outer: int = 100, max_sweeps: int = 10000) -> FitResult:
    """Elastic-net logistic regression at a single ``lambda``.

    ``beta_init`` is a standardized-scale warm start.
    """
    X, y, off = design.std, _check(design, outcome), design.offset_or_zero()
    alpha = config.mixing
    pf = penalty_factors(design, config)
    l1 = config.lam * alpha * pf
    l2 = config.lam * (1.0 - alpha) * pf
    meta = {"family": config.family, "lambda": config.lam, "alpha": alpha}

    if beta_init is None:
        beta = _null_fit(X, y, off, pf == 0)
        if alpha > 0:
            grad = -(X.T @ (y - expit(X @ beta + off))) / len(y)
            if np.all(np.abs(grad[pf > 0]) <= l1[pf > 0] * (1 + 1e-9)):
                return _finish(design, y, beta, 0, dict(meta, kkt=0.0))
    else:
        beta = np.array(beta_init, dtype=float)

    def inner(H, c, b, outer_res):
        # inexact Newton: inner accuracy tracks the current outer residual
        inner_tol = max((0.01 * outer_res) ** 2, 1e-26)
        sweeps = _kernels.cd_elastic_net(H, c, b, l1, l2, inner_tol, max_sweeps)
        if sweeps < 0:
            raise NoConvergence("coordinate descent exceeded sweep cap")
        return b

    beta, it, res, _ = _prox_newton(
        X, y, off, beta, inner,
        lambda eta, b: _penalized_objective(eta, y, b, l1, l2),
        lambda b, g: _en_kkt(b, g, l1, l2), tol, max_outer)
    return _finish(design, y, beta, it, dict(meta, kkt=res))


# ---------------------------------------------------- hierarchical group lasso


@dataclass(frozen=True)
class LatentGroups:
    """Overlapped expansion enforcing strong hierarchy.

    Each interaction column gets a group holding its own coefficient plus
    latent copies of its parent main effect and of the treatment column, so a
    nonzero interaction drags both lower-order terms into the model.
    """
    columns: np.ndarray  # design column of each latent coordinate
    starts: np.ndarray
    lengths: np.ndarray
    weights: np.ndarray  # 0 = unpenalized

    @property
    def n_latent(self) -> int:
        return self.columns.shape[0]

    def collapse(self, theta, n_columns) -> np.ndarray:
        beta = np.zeros(n_columns)
        np.add.at(beta, self.columns, theta)
        return beta

    def group_norms(self, theta) -> np.ndarray:
        return _kernels.group_norms(theta, self.starts, self.lengths)


def latent_groups(design: DesignMatrix, config: PenaltyConfig) -> LatentGroups:
    roles = design.roles
    t_idx = roles.index(TREATMENT) if TREATMENT in roles else -1
    cols, starts, lengths, weights = [], [], [], []

    def add(block, weight):
        starts.append(len(cols))
        lengths.append(len(block))
        cols.extend(block)
        weights.append(weight)

    for j, role in enumerate(roles):
        if role == INTERCEPT:
            add([j], 0.0)
        elif role == TREATMENT:
            add([j], 1.0 if config.penalize_treatment_main else 0.0)
        elif role == MAIN:
            add([j], 1.0)
    for j, role in enumerate(roles):
        if role == INTERACTION:
            add([int(design.parents[j]), t_idx, j], np.sqrt(3.0))
    return LatentGroups(np.asarray(cols, dtype=np.int64), np.asarray(starts, dtype=np.int64),
                        np.asarray(lengths, dtype=np.int64), np.asarray(weights, dtype=float))


def _group_kkt(theta, grad_latent, groups: LatentGroups, lam):
    return _kernels.group_kkt(theta, grad_latent, groups.starts, groups.lengths,
                              lam * groups.weights)


def hgl_kkt(design: DesignMatrix, outcome, theta, groups: LatentGroups, lam) -> float:
    X, y, off = design.std, np.asarray(outcome, dtype=float), design.offset_or_zero()
    beta = groups.collapse(theta, design.n_columns)
    grad = -(X.T @ (y - expit(X @ beta + off))) / len(y)
    return _group_kkt(theta, grad[groups.columns], groups, lam)


def hgl_lambda_max(design: DesignMatrix, outcome, config: PenaltyConfig) -> float:
    X, y, off = design.std, _check(design, outcome), design.offset_or_zero()
    groups = latent_groups(design, config)
    free = np.zeros(design.n_columns, dtype=bool)
    for s, k, w in zip(groups.starts, groups.lengths, groups.weights):
        if w == 0.0:
            free[groups.columns[s:s + k]] = True
    beta = _null_fit(X, y, off, free)
    grad = -(X.T @ (y - expit(X @ beta + off))) / len(y)
    gl = grad[groups.columns]
    vals = [np.linalg.norm(gl[s:s + k]) / w
            for s, k, w in zip(groups.starts, groups.lengths, groups.weights) if w > 0]
    return float(max(vals, default=0.0))


def fit_hgl(design: DesignMatrix, outcome, config: PenaltyConfig,
            theta_init: Optional[np.ndarray] = None, tol: float = 1e-7,
            max_outer: int = 100, max_inner: int = 200000) -> FitResult:
    """Hierarchical group lasso restricted to treatment-covariate interactions.

    ``theta_init`` is a latent-space warm start (``meta['latent']`` of an
    earlier fit on the same design layout).
    """
    X, y, off = design.std, _check(design, outcome), design.offset_or_zero()
    n = len(y)
    groups = latent_groups(design, config)
    lam = config.lam
    thresh = lam * groups.weights
    meta = {"family": config.family, "lambda": lam, "group_weights": "sqrt(size)"}

    if theta_init is None:
        free = np.zeros(design.n_columns, dtype=bool)
        for s, k, w in zip(groups.starts, groups.lengths, groups.weights):
            if w == 0.0:
                free[groups.columns[s:s + k]] = True
        beta0 = _null_fit(X, y, off, free)
        theta = np.zeros(groups.n_latent)
        for s, k, w in zip(groups.starts, groups.lengths, groups.weights):
            if w == 0.0:
                theta[s:s + k] = beta0[groups.columns[s:s + k]]
        grad = -(X.T @ (y - expit(X @ beta0 + off))) / n
        if _group_kkt(theta, grad[groups.columns], groups, lam) <= 1e-12 * max(lam, 1.0):
            return _finish(design, y, beta0, 0,
                           dict(meta, kkt=0.0, latent=theta, objective_trace=[]))
    else:
        theta = np.array(theta_init, dtype=float)

    Xl = X[:, groups.columns]
    pen = lambda th: float(np.dot(thresh, groups.group_norms(th)))

    def inner(H, c, th, outer_res):
        L = float(np.linalg.eigvalsh(H)[-1]) * (1 + 1e-12) + 1e-300
        it = _kernels.fista_group_lasso(H, c, th, groups.starts, groups.lengths, thresh, L,
                                        max(0.01 * outer_res, 1e-11), max_inner)
        if it < 0:
            raise NoConvergence("proximal gradient exceeded iteration cap")
        return th

    theta, it, res, trace = _prox_newton(
        Xl, y, off, theta, inner,
        lambda eta, th: -bernoulli_loglik(eta, y) / n + pen(th),
        lambda th, g: _group_kkt(th, g, groups, lam), tol, max_outer)
    beta = groups.collapse(theta, design.n_columns)
    return _finish(design, y, beta, it, dict(meta, kkt=res, latent=theta, objective_trace=trace))


def fit_penalized(design: DesignMatrix, outcome, config: PenaltyConfig, warm=None,
                  tol=None) -> FitResult:
    """Dispatch on ``config.family``; ``warm`` is a previous FitResult on the same layout."""
    if config.family == "hierarchical_group_lasso":
        init = None if warm is None else warm.meta.get("latent")
        return fit_hgl(design, outcome, config, init, tol=tol or 1e-7)
    init = None if warm is None else warm.beta_std
    return fit_elastic_net(design, outcome, config, init, tol=tol or 1e-9)


def lambda_max(design: DesignMatrix, outcome, config: PenaltyConfig) -> float:
    if config.family == "hierarchical_group_lasso":
        return hgl_lambda_max(design, outcome, config)
    return elastic_net_lambda_max(design, outcome, config)
