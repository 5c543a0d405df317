"""Modeling strategies that turn a fitted outcome model into delta-hat predictors.

Every predictor exposes ``predict_risk(X, a)`` and ``predict_delta(X)``, where
``delta-hat(x) = risk(x, a=1) - risk(x, a=0)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .errors import ColumnMismatch, StrategyInfeasible
from .glm import fit_ml, irls, lr_test
from .penalty import PenaltyConfig, cv_select
from .tabular import Coefficients, Dataset, DesignSpec, build_design

KINDS = ("overall", "hom", "hte", "hte_ck", "risk_model", "significance_based", "per_arm")
ESTIMATORS = ("ml", "ridge", "lasso", "hgl")
_ALLOWED = {
    "overall": ("ml",),
    "hom": ("ml", "ridge", "lasso"),
    "hte": ("ml", "ridge", "lasso", "hgl"),
    "hte_ck": ("ridge",),
    "risk_model": ("ml", "ridge"),
    "significance_based": ("ml",),
    "per_arm": ("ml", "ridge", "lasso"),
}

# covariate indices (0-based) judged relevant a priori: covariates 1-8 for main
# effects, 9-12 as interaction candidates
CK_MAIN_COLUMNS = tuple(range(8))
CK_INTERACTION_COLUMNS = (8, 9, 10, 11)

PENALTIES = {
    "ridge": PenaltyConfig("ridge", lambda_min_ratio=1e-6),
    "lasso": PenaltyConfig("lasso", lambda_min_ratio=1e-3),
    "hgl": PenaltyConfig("hierarchical_group_lasso", lambda_min_ratio=1e-3),
}
CV_FOLDS = 10


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    estimator: str = "ml"
    ck_main_columns: Optional[tuple] = None
    ck_interaction_columns: Optional[tuple] = None
    alpha_level: float = 0.05

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.estimator not in _ALLOWED[self.kind]:
            raise ValueError(f"estimator {self.estimator!r} not available for {self.kind!r}")
        if self.kind == "hte_ck":
            mains = CK_MAIN_COLUMNS if self.ck_main_columns is None else self.ck_main_columns
            inter = CK_INTERACTION_COLUMNS if self.ck_interaction_columns is None \
                else self.ck_interaction_columns
            object.__setattr__(self, "ck_main_columns", tuple(int(j) for j in mains))
            object.__setattr__(self, "ck_interaction_columns", tuple(int(j) for j in inter))
        if not 0 < self.alpha_level < 1:
            raise ValueError("alpha_level must lie in (0, 1)")

    @property
    def id(self) -> str:
        for name, spec in STRATEGY_IDS.items():
            if (spec.kind, spec.estimator) == (self.kind, self.estimator):
                return name
        return f"{self.kind}-{self.estimator}"

    @classmethod
    def from_id(cls, name: str) -> "StrategySpec":
        try:
            return STRATEGY_IDS[name]
        except KeyError:
            raise ValueError(f"unknown strategy id {name!r}; choose from "
                             f"{', '.join(STRATEGY_IDS)}") from None

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "estimator": self.estimator, "alpha_level": self.alpha_level}
        if self.kind == "hte_ck":
            d["ck_main_columns"] = list(self.ck_main_columns)
            d["ck_interaction_columns"] = list(self.ck_interaction_columns)
        return d

    @classmethod
    def from_dict(cls, d) -> "StrategySpec":
        ck_m = d.get("ck_main_columns")
        ck_z = d.get("ck_interaction_columns")
        return cls(d["kind"], d.get("estimator", "ml"), None if ck_m is None else tuple(ck_m),
                   None if ck_z is None else tuple(ck_z), d.get("alpha_level", 0.05))


STRATEGY_IDS = {
    "overall": StrategySpec("overall"),
    "hom-ml": StrategySpec("hom", "ml"),
    "hom-ridge": StrategySpec("hom", "ridge"),
    "hte-ml": StrategySpec("hte", "ml"),
    "hte-ridge": StrategySpec("hte", "ridge"),
    "hte-lasso": StrategySpec("hte", "lasso"),
    "hte-hgl": StrategySpec("hte", "hgl"),
    "hte-ck": StrategySpec("hte_ck", "ridge"),
    "rm-ml": StrategySpec("risk_model", "ml"),
    "rm-ridge": StrategySpec("risk_model", "ridge"),
    "sb": StrategySpec("significance_based", "ml"),
    "perarm-ml": StrategySpec("per_arm", "ml"),
    "perarm-ridge": StrategySpec("per_arm", "ridge"),
    "perarm-lasso": StrategySpec("per_arm", "lasso"),
}


# ----------------------------------------------------------------- predictors


def _check_columns(X, p):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if p != 1 else X.reshape(-1, 1)
    if X.shape[1] != p:
        raise ColumnMismatch(f"predictor expects {p} covariates, got {X.shape[1]}")
    return X


def _treatment_vector(a, n):
    return np.broadcast_to(np.asarray(a, dtype=float), (n,))


class DeltaPredictor:
    """Base class; subclasses implement ``_eta(X, a)`` on checked input."""

    n_covariates: int
    strategy: str
    meta: dict

    def _eta(self, X, a):
        raise NotImplementedError

    def predict_risk(self, X, a) -> np.ndarray:
        X = _check_columns(X, self.n_covariates)
        return expit(self._eta(X, _treatment_vector(a, X.shape[0])))

    def predict_delta(self, X) -> np.ndarray:
        X = _check_columns(X, self.n_covariates)
        return self.predict_risk(X, 1) - self.predict_risk(X, 0)

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantPredictor(DeltaPredictor):
    """Arm-specific event rates, ignoring covariates."""

    risk_control: float
    risk_treated: float
    n_covariates: int
    strategy: str = "overall"
    meta: dict = field(default_factory=dict)

    def _eta(self, X, a):
        r = np.where(a == 1, self.risk_treated, self.risk_control)
        r = np.clip(r, 1e-12, 1 - 1e-12)
        return np.log(r) - np.log1p(-r)

    def to_dict(self) -> dict:
        return {"type": "constant", "strategy": self.strategy, "n_covariates": self.n_covariates,
                "risk_control": self.risk_control, "risk_treated": self.risk_treated,
                "meta": _jsonable(self.meta)}


@dataclass(frozen=True)
class LinearPredictor(DeltaPredictor):
    """Logistic model with optional treatment main effect and interactions (raw scale)."""

    coefficients: Coefficients
    spec: DesignSpec
    n_covariates: int
    strategy: str = ""
    meta: dict = field(default_factory=dict)

    def linear_predictor(self, X, a) -> np.ndarray:
        c = self.coefficients
        eta = c.beta0 + X[:, list(self.spec.main_columns)] @ c.beta_m
        if c.beta_t is not None:
            eta = eta + c.beta_t * a
        if c.beta_z.size:
            eta = eta + a * (X[:, list(self.spec.interaction_columns)] @ c.beta_z)
        return eta

    _eta = linear_predictor

    def to_dict(self) -> dict:
        return {"type": "linear", "strategy": self.strategy, "n_covariates": self.n_covariates,
                "coefficients": self.coefficients.to_dict(), "design": self.spec.to_dict(),
                "meta": _jsonable(self.meta)}


@dataclass(frozen=True)
class RiskModelPredictor(DeltaPredictor):
    """Two-stage risk model: treatment interacts with the control-arm linear predictor."""

    risk_score: LinearPredictor
    beta_t: float
    gamma: float
    n_covariates: int
    strategy: str = ""
    meta: dict = field(default_factory=dict)

    def risk_score_eta(self, X) -> np.ndarray:
        X = _check_columns(X, self.n_covariates)
        return self.risk_score.linear_predictor(X, np.zeros(X.shape[0]))

    def _eta(self, X, a):
        score = self.risk_score.linear_predictor(X, np.zeros(X.shape[0]))
        return score + a * (self.beta_t + self.gamma * score)

    def to_dict(self) -> dict:
        return {"type": "risk_model", "strategy": self.strategy,
                "n_covariates": self.n_covariates, "risk_score": self.risk_score.to_dict(),
                "beta_t": self.beta_t, "gamma": self.gamma, "meta": _jsonable(self.meta)}


def _jsonable(meta: dict) -> dict:
    out = {}
    for k, v in meta.items():
        if isinstance(v, np.ndarray):
            continue
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        if isinstance(v, (int, float, str, bool, type(None), list, dict)):
            out[k] = v
    return out


def predictor_from_dict(d) -> DeltaPredictor:
    kind = d["type"]
    meta = d.get("meta", {})
    if kind == "constant":
        return ConstantPredictor(d["risk_control"], d["risk_treated"], d["n_covariates"],
                                 d["strategy"], meta)
    if kind == "linear":
        return LinearPredictor(Coefficients.from_dict(d["coefficients"]),
                               DesignSpec.from_dict(d["design"]), d["n_covariates"],
                               d["strategy"], meta)
    if kind == "risk_model":
        return RiskModelPredictor(predictor_from_dict(d["risk_score"]), d["beta_t"], d["gamma"],
                                  d["n_covariates"], d["strategy"], meta)
    raise ValueError(f"unknown predictor type {kind!r}")


def predict_delta(predictor: DeltaPredictor, covariates) -> np.ndarray:
    return predictor.predict_delta(covariates)


# ----------------------------------------------------------------- fitting


def _fit_linear(data: Dataset, spec: DesignSpec, estimator: str, seed, name: str):
    design = build_design(data, spec)
    if estimator == "ml":
        fit = fit_ml(design, data.outcome)
        meta = {"lambda": None, "nonzero": design.n_columns - 1, "converged": fit.converged}
    else:
        cv = cv_select(design, data.outcome, PENALTIES[estimator], k=CV_FOLDS, seed=seed)
        fit = cv.chosen_fit
        meta = {"lambda": cv.chosen_lambda, "nonzero": fit.meta["nonzero"],
                "converged": fit.converged, "lambda_index": cv.chosen_index,
                "penalty": PENALTIES[estimator].to_dict()}
    return LinearPredictor(fit.coefficients, spec, data.p, name, meta), fit


def _require_classes(y, what):
    y = np.asarray(y)
    if y.size == 0 or y.min() == y.max():
        raise StrategyInfeasible(f"{what} needs both outcome classes")


def _arm(data: Dataset, a: int) -> Dataset:
    rows = np.flatnonzero(data.treatment == a)
    if rows.size == 0:
        raise StrategyInfeasible(f"no subjects in arm {a}")
    return data.subset(rows)


def _child_seed(seed, k: int) -> int:
    return int(np.random.SeedSequence([int(seed), k]).generate_state(1)[0])


def fit_overall(data: Dataset) -> ConstantPredictor:
    r0 = float(_arm(data, 0).outcome.mean())
    r1 = float(_arm(data, 1).outcome.mean())
    return ConstantPredictor(r0, r1, data.p, "overall")


def sb_branch(p_treatment: float, p_interaction: Optional[float], alpha: float) -> str:
    """Which model the significance-based procedure keeps (strict ``p < alpha``)."""
    if not p_treatment < alpha:
        return "main"
    if p_interaction is None or not p_interaction < alpha:
        return "hom"
    return "hte"


def fit_significance_based(data: Dataset, alpha_level: float = 0.05, seed=0) -> LinearPredictor:
    """Forward testing: treatment effect first, then all interactions jointly, both by LR test."""
    mains = tuple(range(data.p))
    main_spec = DesignSpec(mains, (), include_treatment=False)
    hom_spec = DesignSpec(mains, ())
    main_pred, main_fit = _fit_linear(data, main_spec, "ml", seed, "sb")
    hom_pred, hom_fit = _fit_linear(data, hom_spec, "ml", seed, "sb")
    p_t = lr_test(hom_fit, main_fit, 1)
    meta = {"p_treatment": p_t, "p_interaction": None}
    if sb_branch(p_t, None, alpha_level) == "main":
        chosen = main_pred
    else:
        hte_pred, hte_fit = _fit_linear(data, DesignSpec.full(data.p), "ml", seed, "sb")
        p_i = lr_test(hte_fit, hom_fit, data.p)
        meta["p_interaction"] = p_i
        chosen = hom_pred if sb_branch(p_t, p_i, alpha_level) == "hom" else hte_pred
    branch = sb_branch(p_t, meta["p_interaction"], alpha_level)
    return LinearPredictor(chosen.coefficients, chosen.spec, data.p, "sb",
                           dict(chosen.meta, branch=branch, **meta))


def linear_basis(score):
    return score


def fit_risk_model(data: Dataset, estimator: str = "ml", seed=0,
                   basis: Callable = linear_basis) -> RiskModelPredictor:
    """Control-arm risk score, then ``logit P = beta_t a + score + gamma f(score) a`` with offset."""
    control = _arm(data, 0)
    _require_classes(control.outcome, "control-arm risk model")
    stage1, _ = _fit_linear(control, DesignSpec(tuple(range(data.p)), (), include_treatment=False),
                            estimator, seed, "risk-score")
    score = stage1.linear_predictor(data.covariates, np.zeros(data.n))
    a = data.treatment.astype(float)
    X2 = np.column_stack([a, a * basis(score)])
    beta, ll, it = irls(X2, data.outcome, offset=score)
    name = "rm-" + estimator
    meta = dict(stage1.meta, stage2_loglik=ll, stage2_iterations=it)
    return RiskModelPredictor(stage1, float(beta[0]), float(beta[1]), data.p, name, meta)


def stitch_per_arm(control: Coefficients, treated: Coefficients, mains: tuple) -> tuple:
    """Combine two arm-specific main-effect models into one interaction model."""
    coefs = Coefficients(control.beta0, treated.beta0 - control.beta0, control.beta_m,
                         treated.beta_m - control.beta_m,
                         ("intercept", "treatment") + ("main",) * len(mains)
                         + ("interaction",) * len(mains))
    return coefs, DesignSpec(mains, mains)


def fit_per_arm(data: Dataset, estimator: str = "ml", seed=0) -> LinearPredictor:
    """Separate models per arm, each with its own penalty chosen by CV, stitched together."""
    mains = tuple(range(data.p))
    spec = DesignSpec(mains, (), include_treatment=False)
    fits = []
    for arm in (0, 1):
        sub = _arm(data, arm)
        _require_classes(sub.outcome, f"per-arm model (arm {arm})")
        pred, _ = _fit_linear(sub, spec, estimator, _child_seed(seed, arm), "per-arm")
        fits.append(pred)
    coefs, full_spec = stitch_per_arm(fits[0].coefficients, fits[1].coefficients, mains)
    meta = {"lambda_control": fits[0].meta["lambda"], "lambda_treated": fits[1].meta["lambda"],
            "nonzero": fits[0].meta["nonzero"] + fits[1].meta["nonzero"],
            "lambda": fits[0].meta["lambda"]}
    return LinearPredictor(coefs, full_spec, data.p, "perarm-" + estimator, meta)


def fit_strategy(spec: StrategySpec, data: Dataset, seed=0) -> DeltaPredictor:
    """Fit the strategy on ``data``; penalized variants pick lambda by 10-fold CV seeded by ``seed``."""
    name = spec.id
    if spec.kind == "overall":
        return fit_overall(data)
    if spec.kind == "significance_based":
        return fit_significance_based(data, spec.alpha_level, seed)
    if spec.kind == "risk_model":
        return fit_risk_model(data, spec.estimator, seed)
    if spec.kind == "per_arm":
        return fit_per_arm(data, spec.estimator, seed)
    if spec.kind == "hom":
        dspec = DesignSpec(tuple(range(data.p)), ())
    elif spec.kind == "hte":
        dspec = DesignSpec.full(data.p)
    else:
        mains = tuple(sorted(set(spec.ck_main_columns) | set(spec.ck_interaction_columns)))
        for j in mains:
            if j >= data.p:
                raise ValueError(f"content-knowledge column {j} outside 0..{data.p - 1}")
        dspec = DesignSpec(mains, tuple(spec.ck_interaction_columns))
    pred, _ = _fit_linear(data, dspec, spec.estimator, seed, name)
    return pred
