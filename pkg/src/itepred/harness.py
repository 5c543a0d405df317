"""Factorial simulation study: seeding, per-run execution, crash-safe persistence, aggregation."""
from __future__ import annotations

import csv
import itertools
import json
import math
import os
import platform
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .dgm import LN_06, DgmConfig, DEFAULT_PERTURBATION_SEED, make_perturbations, simulate, \
    true_model
from .errors import EmptyCell, ItepredError, StudyAborted
from .evaluation.metrics import evaluate
from .strategies import PENALTIES, StrategySpec, fit_strategy

RESULT_FIELDS = ["setting", "n", "beta_t", "heterogeneous", "run", "strategy", "status",
                 "rmspe", "q90_delta", "q90_risk", "brier", "nagelkerke_r2", "c_statistic",
                 "lambda", "nonzero", "message"]
CALIB_FIELDS = ["setting", "run", "strategy", "bin", "count", "mean_predicted", "mean_true"]
TIMING_FIELDS = ["setting", "run", "strategy", "seconds"]
AGG_FIELDS = ["setting", "n", "beta_t", "heterogeneous", "strategy", "status", "runs", "failed",
              "mean_rmspe", "se_rmspe", "mean_q90_delta", "mean_q90_risk"]

DEFAULT_STRATEGIES = ["overall", "hom-ml", "hom-ridge", "hte-ml", "hte-ridge", "hte-lasso", "hte-hgl",
          "hte-ck", "rm-ml", "rm-ridge", "sb"]


@dataclass(frozen=True)
class StudyPlan:
    ns: tuple = (400, 1200, 3600)
    beta_t_values: tuple = (LN_06, 0.0)
    heterogeneous: tuple = (False, True)
    runs: int = 250
    validation_n: int = 10_000
    strategies: tuple = tuple(DEFAULT_STRATEGIES)
    base_seed: int = 0
    perturbation_seed: int = DEFAULT_PERTURBATION_SEED

    def __post_init__(self):
        for k in ("ns", "beta_t_values", "heterogeneous", "strategies"):
            v = getattr(self, k)
            object.__setattr__(self, k, tuple(v) if isinstance(v, (list, tuple)) else (v,))
        if self.runs < 1:
            raise ValueError("runs must be positive")
        if self.validation_n < 1000:
            raise ValueError("validation_n must be at least 1000")
        for s in self.strategies:
            StrategySpec.from_id(s)

    def settings(self) -> list:
        return [DgmConfig(n=n, beta_t=bt, heterogeneous=bool(h),
                          perturbation_seed=self.perturbation_seed)
                for n, bt, h in itertools.product(self.ns, self.beta_t_values, self.heterogeneous)]

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict, **overrides) -> "StudyPlan":
        fields = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        fields.update({k: v for k, v in overrides.items() if v is not None})
        if "beta_t_values" in fields:
            fields["beta_t_values"] = tuple(_beta_t(v) for v in fields["beta_t_values"])
        return cls(**fields)

    @classmethod
    def from_json(cls, path, **overrides) -> "StudyPlan":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), **overrides)


def _beta_t(v) -> float:
    """Accepts numbers or the strings 'ln0.6' / 'log(0.6)'."""
    if isinstance(v, str):
        s = v.replace(" ", "").lower()
        for prefix in ("ln", "log"):
            if s.startswith(prefix):
                return float(np.log(float(s[len(prefix):].strip("()"))))
        return float(s)
    return float(v)


@dataclass(frozen=True)
class RunRecord:
    setting: str
    n: int
    beta_t: float
    heterogeneous: bool
    run: int
    strategy: str
    status: str
    rmspe: float = float("nan")
    q90_delta: float = float("nan")
    q90_risk: float = float("nan")
    brier: float = float("nan")
    nagelkerke_r2: float = float("nan")
    c_statistic: float = float("nan")
    lam: Optional[float] = None
    nonzero: Optional[int] = None
    message: str = ""
    calibration: tuple = field(default=(), repr=False)
    seconds: float = field(default=0.0, compare=False)

    def row(self) -> dict:
        return {"setting": self.setting, "n": self.n, "beta_t": repr(self.beta_t),
                "heterogeneous": int(self.heterogeneous), "run": self.run,
                "strategy": self.strategy, "status": self.status,
                "rmspe": repr(self.rmspe), "q90_delta": repr(self.q90_delta),
                "q90_risk": repr(self.q90_risk), "brier": repr(self.brier),
                "nagelkerke_r2": repr(self.nagelkerke_r2), "c_statistic": repr(self.c_statistic),
                "lambda": "" if self.lam is None else repr(self.lam),
                "nonzero": "" if self.nonzero is None else self.nonzero,
                "message": self.message.replace("\n", " ")}


def stream(base_seed: int, setting: str, run: int, sub: int) -> np.random.SeedSequence:
    """Independent stream per (base seed, setting, run); sub 0 = development, 1 = validation."""
    return np.random.SeedSequence([int(base_seed), zlib.crc32(setting.encode()), int(run), sub])


def run_one(plan: StudyPlan, config: DgmConfig, run: int) -> list:
    """Simulate one development/validation pair and score every strategy."""
    sid = config.setting_id
    model = true_model(config)
    dev = simulate(model, config.n, np.random.default_rng(stream(plan.base_seed, sid, run, 0)))
    val = simulate(model, plan.validation_n,
                   np.random.default_rng(stream(plan.base_seed, sid, run, 1)))
    fit_seed = int(stream(plan.base_seed, sid, run, 2).generate_state(1)[0])
    X, a = val.dataset.covariates, val.dataset.treatment
    base = dict(setting=sid, n=config.n, beta_t=config.beta_t,
                heterogeneous=config.heterogeneous, run=run)
    out = []
    for name in plan.strategies:
        t0 = time.perf_counter()
        try:
            pred = fit_strategy(StrategySpec.from_id(name), dev.dataset, fit_seed)
            delta = pred.predict_delta(X)
            risk = pred.predict_risk(X, a)
            rep = evaluate(delta, val.true_delta, risk, val.true_risk_assigned, val.dataset.outcome)
            lam = pred.meta.get("lambda")
            rec = RunRecord(**base, strategy=name, status="ok", rmspe=rep.rmspe,
                            q90_delta=rep.q90_abs_delta_err, q90_risk=rep.q90_abs_risk_err,
                            brier=rep.brier, nagelkerke_r2=rep.nagelkerke_r2,
                            c_statistic=rep.c_statistic,
                            lam=None if lam is None else float(lam),
                            nonzero=pred.meta.get("nonzero"),
                            calibration=tuple(rep.calibration.rows()))
        except (ItepredError, ValueError, np.linalg.LinAlgError) as exc:
            rec = RunRecord(**base, strategy=name, status="failed",
                            message=f"{type(exc).__name__}: {exc}")
        out.append(RunRecord(**{**rec.__dict__, "seconds": time.perf_counter() - t0}))
    return out


def _task(args):
    plan, config, run = args
    return run_one(plan, config, run)


def _read_csv(path: Path) -> list:
    if not path.exists():
        return []
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _write_csv(path: Path, fields, rows, mode="w"):
    new = mode == "w" or not path.exists() or path.stat().st_size == 0
    with open(path, mode, newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        if new:
            w.writeheader()
        w.writerows(rows)
        fh.flush()
        os.fsync(fh.fileno())


def metadata(plan: StudyPlan) -> dict:
    settings = []
    for cfg in plan.settings():
        m = true_model(cfg)
        settings.append({"setting": cfg.setting_id, "n": cfg.n, "beta_t": cfg.beta_t,
                         "heterogeneous": cfg.heterogeneous, "beta0": m.beta0,
                         "beta_m": m.beta_m.tolist(), "beta_z": m.beta_z.tolist(),
                         "sigma_arm": list(m.sigma_arm)})
    return {"plan": plan.to_dict(), "package_version": __version__,
            "numpy_version": np.__version__, "python": platform.python_version(),
            "perturbations": make_perturbations(plan.perturbation_seed).tolist(),
            "main_effect_sign": "positive", "rho": DgmConfig().rho,
            "target_control_prevalence": DgmConfig().target_control_prevalence,
            "penalties": {k: v.to_dict() for k, v in PENALTIES.items()},
            "cv_folds": 10, "calibration_bins": 20, "settings": settings}


def _completed(rows, strategies) -> set:
    seen = {}
    for r in rows:
        seen.setdefault((r["setting"], int(r["run"])), set()).add(r["strategy"])
    return {k for k, v in seen.items() if v >= set(strategies)}


def run_study(plan: StudyPlan, out_dir, resume: bool = False, workers: int = 1,
              progress=None) -> Path:
    """Run every (setting, run) of ``plan`` and append results under ``out_dir``.

    Files: ``results.csv`` (one row per setting, run and strategy),
    ``calibration.csv`` (20 bins per row), ``timings.csv`` (wall time, kept
    apart so the other files are reproducible byte for byte),
    ``aggregate.csv`` and ``metadata.json``.  With ``resume`` only
    (setting, run) blocks missing from ``results.csv`` are computed.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        meta_path = out / "metadata.json"
        meta = metadata(plan)
        if resume and meta_path.exists():
            with open(meta_path, encoding="utf-8") as fh:
                old = json.load(fh)
            if old.get("plan") != meta["plan"]:
                raise StudyAborted("existing study was run with a different plan")
        with open(meta_path, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2)
        files = {"results.csv": RESULT_FIELDS, "calibration.csv": CALIB_FIELDS,
                 "timings.csv": TIMING_FIELDS}
        done = set()
        if resume:
            done = _completed(_read_csv(out / "results.csv"), plan.strategies)
            for name, fields in files.items():
                keep = [r for r in _read_csv(out / name) if (r["setting"], int(r["run"])) in done]
                _write_csv(out / name, fields, keep)
        else:
            for name, fields in files.items():
                _write_csv(out / name, fields, [])
        tasks = [(plan, cfg, run) for cfg in plan.settings() for run in range(1, plan.runs + 1)
                 if (cfg.setting_id, run) not in done]
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                _consume(pool.map(_task, tasks), out, progress, len(tasks))
        else:
            _consume(map(_task, tasks), out, progress, len(tasks))
        write_aggregate(_read_csv(out / "results.csv"), out / "aggregate.csv")
    except OSError as exc:
        raise StudyAborted(f"I/O failure: {exc}") from exc
    return out


def _consume(results, out: Path, progress, total):
    for i, records in enumerate(results, start=1):
        calib = [{"setting": r.setting, "run": r.run, "strategy": r.strategy, "bin": c["bin"],
                  "count": c["count"], "mean_predicted": repr(c["mean_predicted"]),
                  "mean_true": repr(c["mean_reference"])}
                 for r in records for c in r.calibration]
        _write_csv(out / "calibration.csv", CALIB_FIELDS, calib, "a")
        _write_csv(out / "timings.csv", TIMING_FIELDS,
                   [{"setting": r.setting, "run": r.run, "strategy": r.strategy,
                     "seconds": f"{r.seconds:.4f}"} for r in records], "a")
        # results last: a block counts as complete only once its rows are here
        _write_csv(out / "results.csv", RESULT_FIELDS, [r.row() for r in records], "a")
        if progress is not None:
            progress(i, total, records)


def _mean_se(values):
    k = len(values)
    if k == 0:
        return float("nan"), float("nan")
    mean = math.fsum(values) / k
    if k < 2:
        return mean, float("nan")
    var = math.fsum((v - mean) ** 2 for v in values) / (k - 1)
    return mean, math.sqrt(var / k)


def aggregate(results) -> list:
    """Per (setting, strategy): mean rMSPE with SE = sd / sqrt(runs).

    ``results`` are result-CSV rows (dicts) or RunRecords.  Cells in which
    every run failed are kept with status ``empty``.
    """
    cells = {}
    for r in results:
        r = r.row() if isinstance(r, RunRecord) else r
        key = (r["setting"], r["strategy"])
        cell = cells.setdefault(key, {"n": int(r["n"]), "beta_t": float(r["beta_t"]),
                                      "het": int(r["heterogeneous"]), "ok": [], "failed": 0})
        if r["status"] == "ok":
            cell["ok"].append((float(r["rmspe"]), float(r["q90_delta"]), float(r["q90_risk"])))
        else:
            cell["failed"] += 1
    rows = []
    for (setting, strategy) in sorted(cells):
        c = cells[(setting, strategy)]
        vals = sorted(c["ok"])
        mean, se = _mean_se([v[0] for v in vals])
        rows.append({"setting": setting, "n": c["n"], "beta_t": c["beta_t"],
                     "heterogeneous": c["het"], "strategy": strategy,
                     "status": "ok" if vals else "empty", "runs": len(vals),
                     "failed": c["failed"], "mean_rmspe": mean, "se_rmspe": se,
                     "mean_q90_delta": _mean_se([v[1] for v in vals])[0],
                     "mean_q90_risk": _mean_se([v[2] for v in vals])[0]})
    return rows


def require_nonempty(rows):
    empty = [(r["setting"], r["strategy"]) for r in rows if r["status"] == "empty"]
    if empty:
        raise EmptyCell(f"no successful runs in {empty}")
    return rows


def write_aggregate(results, path) -> list:
    rows = aggregate(results)
    _write_csv(Path(path), AGG_FIELDS,
               [{k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()} for r in rows])
    return rows


def load_results(out_dir) -> list:
    return _read_csv(Path(out_dir) / "results.csv")
