"""Prediction metrics, bootstrap internal validation and treatment-effect calibration."""
from .metrics import (
    CalibrationBins,
    EvalReport,
    brier,
    c_statistic,
    calibration_bins,
    equal_size_groups,
    evaluate,
    nagelkerke_r2,
    null_log_likelihood,
    quantile_abs_error,
    rmspe,
)
from .validation import (
    BootstrapResult,
    bootstrap_validate,
    quantile_groups,
    te_calibration_bootstrap,
    te_calibration_from_delta,
    te_quintile_calibration,
)

__all__ = [
    "BootstrapResult", "CalibrationBins", "EvalReport", "bootstrap_validate", "brier",
    "c_statistic", "calibration_bins", "equal_size_groups", "evaluate", "nagelkerke_r2",
    "null_log_likelihood", "quantile_abs_error", "quantile_groups", "rmspe",
    "te_calibration_bootstrap", "te_calibration_from_delta", "te_quintile_calibration",
]
