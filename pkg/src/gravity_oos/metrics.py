"""Imputation-estimator and prediction accuracy measures pooled over repetitions."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

Pairs = Sequence[tuple[np.ndarray, np.ndarray]]


class MetricError(ValueError):
    pass


@dataclass
class RepetitionResult:
    """Observed test outcomes of repetition ``k`` and each method's predictions.

    A method that failed has ``None`` in ``predicted`` and a message in ``failures``.
    """

    k: int
    observed: np.ndarray
    predicted: dict[str, np.ndarray | None]
    failures: dict[str, str] = field(default_factory=dict)

    @property
    def n_k(self) -> int:
        return len(self.observed)

    def __post_init__(self):
        self.observed = np.asarray(self.observed, dtype=np.float64)
        if np.any(self.observed < 0):
            raise MetricError("observed outcomes must be non-negative")
        for name, p in self.predicted.items():
            if p is not None and len(p) != len(self.observed):
                raise MetricError(f"{name}: {len(p)} predictions for {len(self.observed)} observations")


def imputation_estimator(observed, predicted) -> float:
    """Sum of observed over sum of predicted outcomes."""
    den = float(np.sum(predicted))
    if not den > 0:
        raise MetricError(f"sum of predictions is {den}; imputation estimator undefined")
    return float(np.sum(observed)) / den


def aggregate_ie(ies: Sequence[float], ddof: int = 0) -> tuple[float, float, float]:
    """Mean, standard deviation and mean squared deviation from one of the IE values.

    ``ddof=0`` (population sd) makes MSE = SE**2 + (mean - 1)**2 hold exactly.
    """
    v = np.asarray(ies, dtype=np.float64)
    if len(v) < 2:
        raise MetricError("need at least two repetitions")
    mean = float(np.mean(v))
    se = float(np.std(v, ddof=ddof))
    mse = float(np.mean((v - 1.0) ** 2))
    return mean, se, mse


def _stack(results: Pairs) -> tuple[np.ndarray, np.ndarray]:
    obs = np.concatenate([np.asarray(o, dtype=np.float64) for o, _ in results])
    pred = np.concatenate([np.asarray(p, dtype=np.float64) for _, p in results])
    if len(obs) == 0:
        raise MetricError("no test observations")
    return obs, pred


def pooled_mae(results: Pairs) -> tuple[float, float]:
    """(MAE, RMAE) over all test observations of all repetitions."""
    obs, pred = _stack(results)
    mae = float(np.mean(np.abs(pred - obs)))
    mean_obs = float(np.mean(obs))
    if mean_obs == 0:
        raise MetricError("mean observed outcome is zero")
    return mae, mae / mean_obs


def pooled_rrmse(results: Pairs) -> float:
    obs, pred = _stack(results)
    mean_obs = float(np.mean(obs))
    if mean_obs == 0:
        raise MetricError("mean observed outcome is zero")
    return math.sqrt(float(np.mean((pred - obs) ** 2))) / mean_obs


def _corr2(a: np.ndarray, b: np.ndarray) -> float:
    da, db = a - a.mean(), b - b.mean()
    saa, sbb = float(np.dot(da, da)), float(np.dot(db, db))
    if saa == 0 or sbb == 0:
        raise MetricError("zero variance")
    sab = float(np.dot(da, db))
    return sab * sab / (saa * sbb)


def oos_r2(results: Pairs, mode: str = "per-rep") -> float:
    """Squared correlation of observed and predicted outcomes.

    ``per-rep`` averages the per-repetition values (repetitions with zero variance
    are skipped with a warning); ``pooled`` uses all observations at once.
    """
    if mode == "pooled":
        return _corr2(*_stack(results))
    if mode != "per-rep":
        raise ValueError(f"unknown R2 mode {mode!r}")
    vals = []
    for k, (o, p) in enumerate(results):
        try:
            vals.append(_corr2(np.asarray(o, float), np.asarray(p, float)))
        except MetricError:
            warnings.warn(f"repetition {k}: zero variance, skipped in R2", stacklevel=2)
    if not vals:
        raise MetricError("no repetition with non-zero variance")
    return float(np.mean(vals))


@dataclass
class MethodMetrics:
    mean_ie: float
    se_ie: float
    mse_ie: float
    mae: float
    rmae: float
    rrmse: float
    r2: float
    reps_used: int
    ie_excluded: int = 0
    failures: int = 0


@dataclass
class MetricsReport:
    methods: list[str]
    metrics: dict[str, MethodMetrics | None]
    K: int
    n_k_min: int
    n_k_max: int
    n_k_mean: float
    failures: dict[str, int] = field(default_factory=dict)

    def __getitem__(self, method: str) -> MethodMetrics:
        return self.metrics[method]


def summarize(
    results: Sequence[RepetitionResult],
    methods: Sequence[str],
    r2_mode: str = "per-rep",
    ddof: int = 0,
) -> MetricsReport:
    """Aggregate repetition results per method; repetitions are folded in order of ``k``."""
    results = sorted(results, key=lambda r: r.k)
    if not results:
        raise MetricError("no repetitions")
    nks = [r.n_k for r in results]
    metrics: dict[str, MethodMetrics | None] = {}
    failures: dict[str, int] = {}
    for m in methods:
        ok = [r for r in results if r.predicted.get(m) is not None]
        failures[m] = len(results) - len(ok)
        if not ok:
            metrics[m] = None
            continue
        pairs = [(r.observed, r.predicted[m]) for r in ok]
        ies = []
        excluded = 0
        for o, p in pairs:
            try:
                ies.append(imputation_estimator(o, p))
            except MetricError:
                excluded += 1
        if excluded:
            log.warning("%s: %d repetitions with non-positive prediction totals excluded from IE", m, excluded)
        mean_ie, se_ie, mse_ie = aggregate_ie(ies, ddof) if len(ies) >= 2 else (math.nan,) * 3
        mae, rmae = pooled_mae(pairs)
        try:
            r2 = oos_r2(pairs, r2_mode)
        except MetricError:
            r2 = math.nan
        metrics[m] = MethodMetrics(
            mean_ie=mean_ie,
            se_ie=se_ie,
            mse_ie=mse_ie,
            mae=mae,
            rmae=rmae,
            rrmse=pooled_rrmse(pairs),
            r2=r2,
            reps_used=len(ok),
            ie_excluded=excluded,
            failures=failures[m],
        )
    return MetricsReport(
        methods=list(methods),
        metrics=metrics,
        K=len(results),
        n_k_min=int(min(nks)),
        n_k_max=int(max(nks)),
        n_k_mean=float(np.mean(nks)),
        failures=failures,
    )
