"""Maximum-likelihood logistic regression fitted by IRLS."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, stats
from scipy.special import expit

from .errors import LengthMismatch, NegativeStatistic, NoConvergence, Separation, Singular
from .tabular import Coefficients, DesignMatrix, unstandardize_vector

__all__ = [
    "Coefficients", "FitResult", "RiskPrediction", "irls", "fit_ml", "log_likelihood",
    "lr_test", "predict_risk", "bernoulli_loglik",
]

RISK_CLAMP = 1e-12
SEPARATION_BOUND = 1e3


@dataclass(frozen=True)
class FitResult:
    coefficients: Coefficients
    log_likelihood: float
    iterations: int
    converged: bool
    n: int
    p_effective: int
    beta_std: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def deviance(self) -> float:
        # saturated log-likelihood is 0 for binary outcomes
        return -2.0 * self.log_likelihood

    @property
    def beta(self) -> np.ndarray:
        return self.coefficients.as_vector()


@dataclass(frozen=True)
class RiskPrediction:
    risk: np.ndarray
    eta: np.ndarray


def bernoulli_loglik(eta, y) -> float:
    """Log-likelihood evaluated on the log-odds scale (no clamping needed)."""
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def irls(X, y, offset=None, beta=None, max_iter=100, grad_tol=1e-8, rel_tol=1e-10,
         separation_bound=SEPARATION_BOUND):
    """Newton-Raphson / IRLS for the logistic log-likelihood.

    Returns ``(beta, loglik, iterations)``.  Step halving guards against a
    decrease of the log-likelihood.  Convergence requires both a relative
    log-likelihood change below ``rel_tol`` and a score max-norm below
    ``grad_tol``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = X.shape
    off = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    beta = np.zeros(m) if beta is None else np.array(beta, dtype=float)
    eta = X @ beta + off
    ll = bernoulli_loglik(eta, y)
    for it in range(1, max_iter + 1):
        mu = expit(eta)
        score = X.T @ (y - mu)
        w = mu * (1.0 - mu)
        info = (X.T * w) @ X
        try:
            step = linalg.solve(info, score, assume_a="pos")
        except (linalg.LinAlgError, ValueError) as exc:
            if ll > -1e-6 * n:
                raise Separation("fitted risks collapse onto the outcomes") from exc
            raise Singular(f"information matrix not invertible: {exc}") from exc
        if not np.all(np.isfinite(step)):
            raise Singular("non-finite Newton step")
        t = 1.0
        while True:
            cand = beta + t * step
            eta_c = X @ cand + off
            ll_c = bernoulli_loglik(eta_c, y)
            if ll_c >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
            if t < 1e-10:
                cand, eta_c, ll_c = beta, eta, ll
                break
        if np.max(np.abs(cand), initial=0.0) > separation_bound:
            raise Separation(f"|coefficient| exceeded {separation_bound:g}")
        change = abs(ll_c - ll)
        beta, eta, ll = cand, eta_c, ll_c
        grad = np.max(np.abs(X.T @ (y - expit(eta))), initial=0.0)
        if change <= rel_tol * max(abs(ll), 1e-300) and grad <= grad_tol:
            return beta, ll, it
        if t < 1e-10 and grad > grad_tol:
            break
    mu = expit(eta)
    if ll > -1e-6 * n or np.any((mu < 1e-10) | (mu > 1 - 1e-10)):
        raise Separation("no finite maximum likelihood estimate")
    raise NoConvergence(f"IRLS did not converge in {max_iter} iterations")


def fit_ml(design: DesignMatrix, outcome, max_iter=100) -> FitResult:
    y = np.asarray(outcome, dtype=float)
    if y.shape != (design.n,):
        raise LengthMismatch("outcome length differs from design rows")
    if design.n <= design.n_columns:
        raise Singular(f"n={design.n} not larger than {design.n_columns} columns")
    X = design.std
    beta_std, ll, it = irls(X, y, design.offset, max_iter=max_iter)
    beta = unstandardize_vector(beta_std, design.scaling)
    coefs = Coefficients.from_vector(beta, design.roles)
    return FitResult(coefs, ll, it, True, design.n, design.n_columns, beta_std)


def wald_se(fit: FitResult, design: DesignMatrix) -> np.ndarray:
    """Raw-scale Wald standard errors from the observed information."""
    X = design.raw
    mu = expit(X @ fit.beta + design.offset_or_zero())
    info = (X.T * (mu * (1 - mu))) @ X
    return np.sqrt(np.diag(linalg.inv(info)))


def log_likelihood(risk, outcome) -> float:
    r = risk.risk if isinstance(risk, RiskPrediction) else np.asarray(risk, dtype=float)
    y = np.asarray(outcome, dtype=float)
    if r.shape != y.shape:
        raise LengthMismatch(f"risk {r.shape} vs outcome {y.shape}")
    r = np.clip(r, RISK_CLAMP, 1.0 - RISK_CLAMP)
    return float(np.sum(y * np.log(r) + (1.0 - y) * np.log1p(-r)))


def lr_test(full, reduced, df: int) -> float:
    """Chi-square likelihood-ratio p-value; accepts FitResults or log-likelihoods."""
    ll_f = full.log_likelihood if isinstance(full, FitResult) else float(full)
    ll_r = reduced.log_likelihood if isinstance(reduced, FitResult) else float(reduced)
    if df < 1:
        raise ValueError("df must be at least 1")
    stat = 2.0 * (ll_f - ll_r)
    if stat < -2e-8:
        raise NegativeStatistic(f"full model fits worse than reduced (statistic {stat:.3g})")
    return float(stats.chi2.sf(max(stat, 0.0), df))


def predict_risk(coefficients, design: DesignMatrix, treatment_override=None) -> RiskPrediction:
    beta = coefficients.as_vector() if isinstance(coefficients, Coefficients) \
        else np.asarray(coefficients, dtype=float)
    if beta.shape != (design.n_columns,):
        raise LengthMismatch(f"{beta.shape[0]} coefficients for {design.n_columns} columns")
    X = design.raw if treatment_override is None else design.with_treatment(treatment_override)
    eta = X @ beta + design.offset_or_zero()
    return RiskPrediction(expit(eta), eta)
