"""Simulated randomized trials with known individualized treatment effects.

Covariates are multivariate normal with compound-symmetric correlation.  The
intercept is solved numerically so that the marginal outcome prevalence in the
control arm hits a target value:

    E[expit(beta0 + sigma * Z)] = target,   Z ~ N(0, 1),  sigma^2 = b' Sigma b

where ``b`` holds the control-arm covariate coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit

from .errors import NoRoot
from .evaluation.metrics import nagelkerke_r2, null_log_likelihood
from .tabular import Dataset

# fixed once for every setting and run; recorded in study metadata
DEFAULT_PERTURBATION_SEED = 20190417
N_PERTURBED = 9
PERTURBATION_BOUND = 0.05
QUADRATURE_NODES = 64
BRACKET = (-30.0, 30.0)
LN_06 = float(np.log(0.6))


@dataclass(frozen=True)
class DgmConfig:
    n: int = 1200
    p: int = 12
    rho: float = 0.1
    beta_t: float = LN_06
    heterogeneous: bool = False
    target_control_prevalence: float = 0.25
    treatment_probability: float = 0.5
    perturbation_seed: int = DEFAULT_PERTURBATION_SEED
    run_seed: int = 0
    # +1 gives all-positive main effects; -1 flips every sign
    main_sign: float = 1.0
    main_scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.target_control_prevalence < 1:
            raise ValueError("target prevalence must lie in (0, 1)")
        if not 0 <= self.treatment_probability <= 1:
            raise ValueError("treatment probability must lie in [0, 1]")
        if self.p > 1 and not -1.0 / (self.p - 1) < self.rho < 1:
            raise ValueError("rho outside the positive-definite range")
        if self.heterogeneous and self.p < 12:
            raise ValueError("heterogeneous schedule needs p >= 12")

    @property
    def setting_id(self) -> str:
        return setting_id(self.n, self.beta_t, self.heterogeneous)


def setting_id(n: int, beta_t: float, heterogeneous: bool) -> str:
    return f"n{n}_bt{beta_t:+.4f}_{'het' if heterogeneous else 'hom'}"


@dataclass(frozen=True)
class TrueModel:
    beta0: float
    beta_t: float
    beta_m: np.ndarray
    beta_z: np.ndarray
    covariance: np.ndarray
    sigma_arm: tuple  # linear-predictor sd in (control, treated)
    perturbations: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def p(self) -> int:
        return self.beta_m.size

    def risks(self, X):
        """True risks under control and under treatment for every row of ``X``."""
        base = self.beta0 + X @ self.beta_m
        return expit(base), expit(base + self.beta_t + X @ self.beta_z)

    def to_dict(self) -> dict:
        return {"beta0": self.beta0, "beta_t": self.beta_t, "beta_m": self.beta_m.tolist(),
                "beta_z": self.beta_z.tolist(), "sigma_arm": list(self.sigma_arm),
                "perturbations": self.perturbations.tolist()}


@dataclass(frozen=True)
class SimulatedTrial:
    dataset: Dataset
    true_risk_control: np.ndarray
    true_risk_treated: np.ndarray

    @property
    def true_delta(self) -> np.ndarray:
        return self.true_risk_treated - self.true_risk_control

    @property
    def true_risk_assigned(self) -> np.ndarray:
        a = self.dataset.treatment
        return np.where(a == 1, self.true_risk_treated, self.true_risk_control)


def compound_symmetry(p: int, rho: float) -> np.ndarray:
    return (1.0 - rho) * np.eye(p) + rho * np.ones((p, p))


def marginal_prevalence(beta0: float, sigma: float, nodes: int = QUADRATURE_NODES) -> float:
    """E[expit(beta0 + sigma Z)] by Gauss-Hermite quadrature."""
    x, w = np.polynomial.hermite.hermgauss(nodes)
    return float(np.dot(w, expit(beta0 + sigma * np.sqrt(2.0) * x)) / np.sqrt(np.pi))


def solve_intercept(beta, covariance, target: float) -> float:
    """Intercept giving marginal prevalence ``target`` for linear predictor ``beta' x``."""
    if not 0 < target < 1:
        raise ValueError("target must lie in (0, 1)")
    beta = np.asarray(beta, dtype=float)
    sigma = float(np.sqrt(max(beta @ np.asarray(covariance, dtype=float) @ beta, 0.0)))
    if sigma == 0.0:
        return float(logit(target))
    f = lambda b0: marginal_prevalence(b0, sigma) - target  # noqa: E731
    lo, hi = BRACKET
    if f(lo) * f(hi) > 0:
        raise NoRoot(f"no intercept in [{lo}, {hi}] reaches prevalence {target}")
    return float(brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps))


def gen_covariates(n: int, p: int, rho: float, rng) -> np.ndarray:
    """Rows i.i.d. N(0, (1-rho) I + rho 11')."""
    L = np.linalg.cholesky(compound_symmetry(p, rho))
    return rng.standard_normal((n, p)) @ L.T


def make_perturbations(perturbation_seed: int = DEFAULT_PERTURBATION_SEED) -> np.ndarray:
    rng = np.random.default_rng(perturbation_seed)
    return rng.uniform(-PERTURBATION_BOUND, PERTURBATION_BOUND, N_PERTURBED)


def main_effects(p: int, sign: float = 1.0, scale: float = 1.0) -> np.ndarray:
    return sign * scale * 2.0 ** (-np.arange(p) / 2.0)


def interaction_effects(p: int, heterogeneous: bool, perturbations) -> np.ndarray:
    bz = np.zeros(p)
    if heterogeneous:
        bz[:N_PERTURBED] = perturbations
        bz[N_PERTURBED:N_PERTURBED + 3] = (-0.5, -0.25, -0.125)
    return bz


@lru_cache(maxsize=64)
def _true_model(p, rho, beta_t, heterogeneous, target, perturbation_seed, sign, scale):
    cov = compound_symmetry(p, rho)
    bm = main_effects(p, sign, scale)
    pert = make_perturbations(perturbation_seed) if heterogeneous else np.zeros(0)
    bz = interaction_effects(p, heterogeneous, pert)
    # the control arm carries no interaction terms
    b0 = solve_intercept(bm, cov, target)
    sig0 = float(np.sqrt(bm @ cov @ bm))
    sig1 = float(np.sqrt((bm + bz) @ cov @ (bm + bz)))
    return TrueModel(b0, float(beta_t), bm, bz, cov, (sig0, sig1), pert)


def true_model(config: DgmConfig) -> TrueModel:
    return _true_model(config.p, config.rho, config.beta_t, config.heterogeneous,
                       config.target_control_prevalence, config.perturbation_seed,
                       config.main_sign, config.main_scale)


def simulate(model: TrueModel, n: int, rng, treatment_probability: float = 0.5,
             rho: Optional[float] = None) -> SimulatedTrial:
    """Draw ``n`` subjects from ``model`` using generator ``rng``."""
    p = model.p
    L = np.linalg.cholesky(model.covariance) if rho is None else \
        np.linalg.cholesky(compound_symmetry(p, rho))
    X = rng.standard_normal((n, p)) @ L.T
    a = (rng.random(n) < treatment_probability).astype(np.int64)
    r0, r1 = model.risks(X)
    y = (rng.random(n) < np.where(a == 1, r1, r0)).astype(np.int64)
    names = tuple(f"x{j + 1}" for j in range(p))
    return SimulatedTrial(Dataset(X, a, y, names), r0, r1)


def gen_trial(config: DgmConfig) -> SimulatedTrial:
    rng = np.random.default_rng(config.run_seed)
    return simulate(true_model(config), config.n, rng, config.treatment_probability)


def oracle_r2(config: DgmConfig, n_large: int = 100_000, seed: int = 0) -> float:
    """Nagelkerke R^2 of the true assigned-arm risks against simulated outcomes."""
    if n_large < 100_000:
        raise ValueError("n_large must be at least 1e5")
    trial = simulate(true_model(config), n_large, np.random.default_rng(seed),
                     config.treatment_probability)
    y = trial.dataset.outcome
    r = np.clip(trial.true_risk_assigned, 1e-12, 1 - 1e-12)
    ll = float(np.sum(y * np.log(r) + (1 - y) * np.log1p(-r)))
    return nagelkerke_r2(ll, null_log_likelihood(y), n_large)
