"""Bootstrap internal validation and calibration of predicted treatment effects."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import AllInBag, DegenerateNull, SolverError
from ..strategies import DeltaPredictor, StrategySpec, fit_strategy
from ..tabular import Dataset
from .metrics import CalibrationBins, brier, equal_size_groups, nagelkerke_r2, \
    null_log_likelihood

MAX_REDRAWS = 10


def _loglik(risk, y):
    r = np.clip(risk, 1e-12, 1 - 1e-12)
    return float(np.sum(y * np.log(r) + (1 - y) * np.log1p(-r)))


def _scores(predictor: DeltaPredictor, data: Dataset):
    """Brier and Nagelkerke R^2 of the assigned-arm risk on ``data``."""
    risk = predictor.predict_risk(data.covariates, data.treatment)
    y = data.outcome
    try:
        r2 = nagelkerke_r2(_loglik(risk, y), null_log_likelihood(y), y.size)
    except DegenerateNull:
        r2 = float("nan")
    return brier(risk, y), r2


@dataclass(frozen=True)
class BootstrapResult:
    strategy: str
    mode: str
    brier: float
    nagelkerke_r2: float
    records: tuple  # dicts: replicate, brier, r2, n_oob, status
    redraws: int
    apparent_brier: float = float("nan")
    apparent_r2: float = float("nan")

    @property
    def oob_fraction(self) -> float:
        fr = [r["n_oob"] / r["n"] for r in self.records if "n_oob" in r]
        return float(np.mean(fr)) if fr else float("nan")

    @property
    def inbag_fraction(self) -> float:
        """Share of distinct original rows drawn at least once (about 1 - 1/e)."""
        return 1.0 - self.oob_fraction


def _draw(rng, n):
    """Resample indices; returns (in_bag, out_of_bag, redraws)."""
    for redraw in range(MAX_REDRAWS + 1):
        idx = rng.integers(0, n, n)
        mask = np.ones(n, dtype=bool)
        mask[idx] = False
        if mask.any():
            return idx, np.flatnonzero(mask), redraw
    raise AllInBag(f"out-of-bag set empty after {MAX_REDRAWS} redraws")


def bootstrap_validate(data: Dataset, spec: StrategySpec, B: int = 100, seed: int = 0,
                       mode: str = "oob") -> BootstrapResult:
    """Refit ``spec`` on B bootstrap resamples and score it out of sample.

    ``mode="oob"`` scores each replicate on the rows it did not draw.
    ``mode="optimism"`` reports the apparent performance minus the mean
    optimism (bootstrap-sample score minus original-sample score).
    Replicates whose fit fails are recorded with status ``failed`` and skipped.
    """
    if B < 1:
        raise ValueError("B must be at least 1")
    if mode not in ("oob", "optimism"):
        raise ValueError("mode must be 'oob' or 'optimism'")
    children = np.random.SeedSequence(seed).spawn(B)
    records, redraws = [], 0
    apparent = (float("nan"), float("nan"))
    if mode == "optimism":
        apparent = _scores(fit_strategy(spec, data, seed), data)
    for b, child in enumerate(children):
        rng = np.random.default_rng(child)
        idx, oob, k = _draw(rng, data.n)
        redraws += k
        fit_seed = int(child.generate_state(1)[0])
        rec = {"replicate": b + 1, "n": data.n, "n_oob": int(oob.size)}
        try:
            pred = fit_strategy(spec, data.subset(idx), fit_seed)
        except SolverError as exc:
            rec.update(status="failed", message=str(exc), brier=np.nan, r2=np.nan)
            records.append(rec)
            continue
        if mode == "oob":
            bs, r2 = _scores(pred, data.subset(oob))
        else:
            b_boot, r_boot = _scores(pred, data.subset(idx))
            b_orig, r_orig = _scores(pred, data)
            # optimism-corrected: apparent + (orig - boot)
            bs = apparent[0] + (b_orig - b_boot)
            r2 = apparent[1] + (r_orig - r_boot)
        rec.update(status="ok", message="", brier=bs, r2=r2)
        records.append(rec)
    ok = [r for r in records if r["status"] == "ok"]
    mean_b = float(np.nanmean([r["brier"] for r in ok])) if ok else float("nan")
    mean_r = float(np.nanmean([r["r2"] for r in ok])) if ok and \
        not all(np.isnan(r["r2"]) for r in ok) else float("nan")
    return BootstrapResult(spec.id, mode, mean_b, mean_r, tuple(records), redraws, *apparent)


def quantile_groups(values, n_groups: int) -> np.ndarray:
    """Equal-size rank groups; tied values share the lowest group any of them reaches."""
    values = np.asarray(values, dtype=float)
    ids = equal_size_groups(values, n_groups)
    _, inverse = np.unique(values, return_inverse=True)
    lowest = np.full(inverse.max() + 1, n_groups, dtype=np.int64)
    np.minimum.at(lowest, inverse, ids)
    return lowest[inverse]


def te_calibration_from_delta(delta_hat, treatment, outcome, n_groups: int = 5) -> CalibrationBins:
    """Mean delta-hat versus the observed risk difference within delta-hat quantile groups.

    Groups missing one arm are flagged ``degenerate`` with NaN observed effect.
    """
    d = np.asarray(delta_hat, dtype=float)
    a = np.asarray(treatment)
    y = np.asarray(outcome, dtype=float)
    ids = quantile_groups(d, n_groups)
    mean_pred = np.full(n_groups, np.nan)
    observed = np.full(n_groups, np.nan)
    se = np.full(n_groups, np.nan)
    count = np.zeros(n_groups, dtype=np.int64)
    degenerate = np.zeros(n_groups, dtype=bool)
    for g in range(n_groups):
        rows = ids == g
        count[g] = rows.sum()
        if count[g]:
            mean_pred[g] = d[rows].mean()
        y1, y0 = y[rows & (a == 1)], y[rows & (a == 0)]
        if y1.size == 0 or y0.size == 0:
            degenerate[g] = True
            continue
        p1, p0 = y1.mean(), y0.mean()
        observed[g] = p1 - p0
        se[g] = np.sqrt(p1 * (1 - p1) / y1.size + p0 * (1 - p0) / y0.size)
    return CalibrationBins(mean_pred, observed, count, n_groups, se, degenerate)


def te_quintile_calibration(predictor: DeltaPredictor, data: Dataset,
                            n_groups: int = 5) -> CalibrationBins:
    return te_calibration_from_delta(predictor.predict_delta(data.covariates), data.treatment,
                                     data.outcome, n_groups)


def te_calibration_bootstrap(data: Dataset, spec: StrategySpec, B: int = 100, seed: int = 0,
                             n_groups: int = 5) -> list:
    """Per-replicate out-of-bag calibration, grouped by that replicate's own delta-hat."""
    out = []
    for b, child in enumerate(np.random.SeedSequence(seed).spawn(B)):
        idx, oob, _ = _draw(np.random.default_rng(child), data.n)
        try:
            pred = fit_strategy(spec, data.subset(idx), int(child.generate_state(1)[0]))
        except SolverError:
            continue
        out.append((b + 1, te_quintile_calibration(pred, data.subset(oob), n_groups)))
    return out
