"""Prediction-error, calibration and overall-fit metrics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from ..errors import DegenerateNull, LengthMismatch, SingleClass, TooFewSubjects


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"lengths differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise LengthMismatch("empty input")
    return a, b


def rmspe(predicted, truth) -> float:
    """Root mean squared prediction error."""
    p, t = _pair(predicted, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def quantile_abs_error(predicted, truth, q: float = 0.9) -> float:
    """Linearly interpolated (type 7) quantile of the absolute errors."""
    p, t = _pair(predicted, truth)
    return float(np.quantile(np.abs(p - t), q, method="linear"))


def brier(risk, outcome) -> float:
    r, y = _pair(getattr(risk, "risk", risk), outcome)
    return float(np.mean((r - y) ** 2))


def nagelkerke_r2(model_ll: float, null_ll: float, n: int) -> float:
    """Nagelkerke's rescaled likelihood-ratio R^2.

    Negative when the model is worse than the intercept-only model.
    """
    if null_ll > 0:
        raise ValueError("null log-likelihood must be <= 0")
    if null_ll == 0:
        raise DegenerateNull("all outcomes identical; R^2 undefined")
    cox_snell = 1.0 - np.exp((2.0 / n) * (null_ll - model_ll))
    return float(cox_snell / (1.0 - np.exp((2.0 / n) * null_ll)))


def null_log_likelihood(outcome) -> float:
    """Log-likelihood of the intercept-only model."""
    y = np.asarray(outcome, dtype=float)
    k, n = y.sum(), y.size
    if k == 0 or k == n:
        return 0.0
    pbar = k / n
    return float(k * np.log(pbar) + (n - k) * np.log1p(-pbar))


def c_statistic(risk, outcome) -> float:
    """Concordance via the Mann-Whitney rank sum (ties count one half)."""
    r, y = _pair(getattr(risk, "risk", risk), outcome)
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise SingleClass("c-statistic needs both outcome classes")
    ranks = rankdata(r)
    u = ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


@dataclass(frozen=True)
class CalibrationBins:
    mean_predicted: np.ndarray
    mean_reference: np.ndarray
    count: np.ndarray
    n_bins: int
    se: Optional[np.ndarray] = None
    degenerate: Optional[np.ndarray] = None

    def rows(self):
        for b in range(self.n_bins):
            row = {"bin": b + 1, "count": int(self.count[b]),
                   "mean_predicted": float(self.mean_predicted[b]),
                   "mean_reference": float(self.mean_reference[b])}
            if self.se is not None:
                row["se"] = float(self.se[b])
            if self.degenerate is not None:
                row["degenerate"] = bool(self.degenerate[b])
            yield row


def equal_size_groups(values, n_groups: int) -> np.ndarray:
    """Group ids 0..n_groups-1 by rank; remainder goes to the lowest groups, ties by row order."""
    values = np.asarray(values, dtype=float)
    n = values.size
    order = np.argsort(values, kind="stable")
    base, extra = divmod(n, n_groups)
    sizes = np.full(n_groups, base)
    sizes[:extra] += 1
    ids = np.empty(n, dtype=np.int64)
    ids[order] = np.repeat(np.arange(n_groups), sizes)
    return ids


def calibration_bins(predicted, reference, n_bins: int = 20) -> CalibrationBins:
    p, r = _pair(predicted, reference)
    if p.size < n_bins:
        raise TooFewSubjects(f"{p.size} subjects for {n_bins} bins")
    ids = equal_size_groups(p, n_bins)
    count = np.bincount(ids, minlength=n_bins)
    mp = np.bincount(ids, weights=p, minlength=n_bins) / count
    mr = np.bincount(ids, weights=r, minlength=n_bins) / count
    return CalibrationBins(mp, mr, count, n_bins)


@dataclass(frozen=True)
class EvalReport:
    rmspe: float
    q90_abs_delta_err: float
    q90_abs_risk_err: float
    brier: float
    nagelkerke_r2: float
    c_statistic: float
    calibration: CalibrationBins

    def summary(self) -> dict:
        return {"rmspe": self.rmspe, "q90_delta": self.q90_abs_delta_err,
                "q90_risk": self.q90_abs_risk_err, "brier": self.brier,
                "nagelkerke_r2": self.nagelkerke_r2, "c_statistic": self.c_statistic}


def evaluate(delta_hat, true_delta, risk_hat, true_risk, outcome, n_bins: int = 20) -> EvalReport:
    """Score predictions on a validation set where the truth is known.

    ``risk_hat`` and ``true_risk`` refer to each subject's assigned arm.
    """
    y = np.asarray(outcome, dtype=float)
    risk_hat = np.clip(np.asarray(risk_hat, dtype=float), 1e-12, 1 - 1e-12)
    model_ll = float(np.sum(y * np.log(risk_hat) + (1 - y) * np.log1p(-risk_hat)))
    try:
        r2 = nagelkerke_r2(model_ll, null_log_likelihood(y), y.size)
    except DegenerateNull:
        r2 = float("nan")
    try:
        c = c_statistic(risk_hat, y)
    except SingleClass:
        c = float("nan")
    return EvalReport(
        rmspe(delta_hat, true_delta),
        quantile_abs_error(delta_hat, true_delta, 0.9),
        quantile_abs_error(risk_hat, true_risk, 0.9),
        brier(risk_hat, y), r2, c,
        calibration_bins(delta_hat, true_delta, n_bins),
    )
