"""Command-line interface."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .dgm import oracle_r2, simulate, true_model
from .errors import ItepredError
from .evaluation import bootstrap_validate, te_quintile_calibration
from .harness import StudyPlan, run_study
from .strategies import STRATEGY_IDS, StrategySpec, fit_strategy, predictor_from_dict
from .tabular import load_covariates, load_csv


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_rows(path, fields, rows):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _num(v) -> str:
    return repr(float(v))


def _index_list(text):
    return None if text is None else tuple(int(t) for t in text.split(",") if t.strip())


def _spec(args, name) -> StrategySpec:
    spec = StrategySpec.from_id(name)
    if spec.kind == "hte_ck" and (args.ck_main is not None or args.ck_interactions is not None):
        d = spec.to_dict()
        if args.ck_main is not None:
            d["ck_main_columns"] = _index_list(args.ck_main)
        if args.ck_interactions is not None:
            d["ck_interaction_columns"] = _index_list(args.ck_interactions)
        spec = StrategySpec.from_dict(d)
    return spec


def cmd_simulate(args):
    plan = StudyPlan.from_json(args.plan, runs=args.runs, base_seed=args.seed)

    def progress(i, total, records):
        failed = sum(r.status != "ok" for r in records)
        print(f"[{i}/{total}] {records[0].setting} run {records[0].run}"
              + (f" ({failed} failed)" if failed else ""), file=sys.stderr)

    out = run_study(plan, args.out, resume=args.resume, workers=args.workers,
                    progress=None if args.quiet else progress)
    print(out / "aggregate.csv")


def cmd_fit(args):
    data = load_csv(args.data, _read_json(args.schema))
    spec = _spec(args, args.strategy)
    pred = fit_strategy(spec, data, args.seed)
    model = {"strategy": spec.to_dict(), "strategy_id": args.strategy, "seed": args.seed,
             "column_names": list(data.column_names), "encoding": list(data.encoding),
             "predictor": pred.to_dict()}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(model, fh, indent=2)


def _load_model(path):
    model = _read_json(path)
    return model, predictor_from_dict(model["predictor"])


def cmd_predict(args):
    model, pred = _load_model(args.model)
    X = load_covariates(args.data, model["encoding"])
    r0, r1 = pred.predict_risk(X, 0), pred.predict_risk(X, 1)
    _write_rows(args.out, ["row", "risk_control", "risk_treated", "delta"],
                [{"row": i + 1, "risk_control": _num(a), "risk_treated": _num(b),
                  "delta": _num(b - a)} for i, (a, b) in enumerate(zip(r0, r1))])


def cmd_validate(args):
    data = load_csv(args.data, _read_json(args.schema))
    out = Path(args.out)
    reps, summary = [], []
    for name in args.strategies:
        res = bootstrap_validate(data, _spec(args, name), args.bootstrap, args.seed, args.mode)
        for r in res.records:
            reps.append({"replicate": r["replicate"], "strategy": name, "status": r["status"],
                         "brier": _num(r["brier"]), "r2": _num(r["r2"]), "n_oob": r["n_oob"]})
        summary.append({"strategy": name, "mode": args.mode, "replicates": args.bootstrap,
                        "failed": sum(r["status"] != "ok" for r in res.records),
                        "brier": _num(res.brier), "r2": _num(res.nagelkerke_r2),
                        "oob_fraction": _num(res.oob_fraction), "redraws": res.redraws})
    _write_rows(out / "replicates.csv", ["replicate", "strategy", "status", "brier", "r2",
                                         "n_oob"], reps)
    _write_rows(out / "summary.csv", ["strategy", "mode", "replicates", "failed", "brier", "r2",
                                      "oob_fraction", "redraws"], summary)
    print(out / "summary.csv")


def cmd_te_calib(args):
    model, pred = _load_model(args.model)
    schema = _read_json(args.schema) if args.schema else {"treatment": "treatment",
                                                          "outcome": "outcome"}
    schema.setdefault("covariates", [e["name"] for e in model["encoding"]])
    data = load_csv(args.data, schema)
    bins = te_quintile_calibration(pred, data, args.groups)
    _write_rows(args.out, ["group", "count", "mean_delta_hat", "observed_effect", "se",
                           "degenerate"],
                [{"group": r["bin"], "count": r["count"], "mean_delta_hat": _num(r["mean_predicted"]),
                  "observed_effect": _num(r["mean_reference"]), "se": _num(r["se"]),
                  "degenerate": int(r["degenerate"])} for r in bins.rows()])


def cmd_dgm_check(args):
    plan = StudyPlan.from_json(args.plan)
    rows = []
    for cfg in plan.settings():
        m = true_model(cfg)
        trial = simulate(m, args.draws, np.random.default_rng(args.seed))
        rows.append({"setting": cfg.setting_id, "beta0": _num(m.beta0),
                     "mc_control_prevalence": repr(float(trial.true_risk_control.mean())),
                     "oracle_r2": _num(oracle_r2(cfg, max(args.draws, 100_000), args.seed)),
                     "mean_delta": repr(float(trial.true_delta.mean()))})
    _write_rows(args.out, ["setting", "beta0", "mc_control_prevalence", "oracle_r2",
                           "mean_delta"], rows)


def build_parser() -> argparse.ArgumentParser:
    ids = ", ".join(STRATEGY_IDS)
    p = argparse.ArgumentParser(prog="itepred", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run the factorial simulation study")
    s.add_argument("--plan", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--runs", type=int, help="override plan runs")
    s.add_argument("--seed", type=int, help="override plan base_seed")
    s.add_argument("--resume", action="store_true")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_simulate)

    def ck(sp):
        sp.add_argument("--ck-main", help="comma-separated 0-based main-effect columns (hte-ck)")
        sp.add_argument("--ck-interactions", help="comma-separated 0-based interaction columns")

    s = sub.add_parser("fit", help="fit one strategy and save model.json")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--strategy", required=True, help=ids)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    ck(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", help="predicted risks and treatment effects for new rows")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("validate", help="bootstrap internal validation")
    s.add_argument("--data", required=True)
    s.add_argument("--schema", required=True)
    s.add_argument("--strategies", nargs="+", required=True, help=ids)
    s.add_argument("--bootstrap", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mode", choices=("oob", "optimism"), default="oob")
    s.add_argument("--out", required=True)
    ck(s)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("te-calib", help="observed vs predicted effect by delta-hat quantile group")
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--schema", help="defaults to columns treatment/outcome")
    s.add_argument("--groups", type=int, default=5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_te_calib)

    s = sub.add_parser("dgm-check", help="audit solved intercepts, prevalence and oracle R^2")
    s.add_argument("--plan", required=True)
    s.add_argument("--draws", type=int, default=1_000_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_dgm_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ItepredError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
