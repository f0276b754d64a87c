"""Evaluation metrics as pure functions.

The shift-tolerant variants (min_rmse / min_mae) score the best
alignment within a bounded window of integer shifts, computed on the
truncated overlap; zero-padding would inflate the error artificially.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

#: Returned by snr_db when the residual has exactly zero power.
SNR_DB_CAP = 300.0


@dataclass(frozen=True)
class ShiftSet:
    """Symmetric integer shifts {-S..S}; always contains zero."""

    shifts: tuple[int, ...]

    def __post_init__(self):
        if 0 not in self.shifts:
            raise ParameterError("shift set must contain 0")
        if set(self.shifts) != {-s for s in self.shifts}:
            raise ParameterError("shift set must be symmetric")

    @classmethod
    def for_fs(cls, fs: float, window_s: float = 1.0) -> "ShiftSet":
        s = int(round(window_s * fs))
        return cls(tuple(range(-s, s + 1)))


def _pair(x_hat, x):
    a = np.asarray(x_hat, dtype=np.float64)
    b = np.asarray(x, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ParameterError("empty inputs")
    return a, b


def rmse(x_hat, x) -> float:
    a, b = _pair(x_hat, x)
    d = a - b
    return float(np.sqrt(np.mean(d * d)))


def mae(x_hat, x) -> float:
    a, b = _pair(x_hat, x)
    return float(np.mean(np.abs(a - b)))


def _shifted_overlap(x_hat: np.ndarray, x: np.ndarray, tau: int):
    """Overlap of x_hat shifted by tau against x: compares
    x_hat[i - tau] with x[i]."""
    n = len(x)
    if abs(tau) >= n:
        raise ParameterError(f"|shift| {abs(tau)} must be < length {n}")
    if tau >= 0:
        return x_hat[: n - tau], x[tau:]
    return x_hat[-tau:], x[: n + tau]


def _min_shift_metric(metric, x_hat, x, shifts: ShiftSet) -> float:
    a, b = _pair(x_hat, x)
    if a.ndim != 1:
        raise ParameterError("shift metrics take 1-D inputs")
    best = math.inf
    for tau in shifts.shifts:
        ah, bh = _shifted_overlap(a, b, tau)
        best = min(best, metric(ah, bh))
    return best


def min_rmse(x_hat, x, shifts: ShiftSet) -> float:
    """Lowest RMSE over the shift set (truncated-overlap policy)."""
    return _min_shift_metric(rmse, x_hat, x, shifts)


def min_mae(x_hat, x, shifts: ShiftSet) -> float:
    return _min_shift_metric(mae, x_hat, x, shifts)


def ks_test(x_hat, x) -> float:
    """Two-sample Kolmogorov-Smirnov statistic: the sup distance
    between empirical CDFs. Statistic only, no p-value."""
    a = np.sort(np.ravel(np.asarray(x_hat, dtype=np.float64)))
    b = np.sort(np.ravel(np.asarray(x, dtype=np.float64)))
    if a.size == 0 or b.size == 0:
        raise ParameterError("ks_test needs nonempty inputs")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def snr_db(x, noise_or_residual) -> float:
    """10 log10 of signal power over residual power. Zero residual
    power returns the cap sentinel; zero signal power is an error."""
    a = np.asarray(x, dtype=np.float64)
    r = np.asarray(noise_or_residual, dtype=np.float64)
    p_sig = float(np.mean(a * a))
    if p_sig == 0.0:
        raise ParameterError("signal power is zero")
    p_res = float(np.mean(r * r))
    if p_res == 0.0:
        return SNR_DB_CAP
    return float(10.0 * np.log10(p_sig / p_res))


@dataclass(frozen=True)
class ClassificationMetrics:
    """accuracy / specificity / sensitivity; None where the
    denominator is zero (undefined)."""

    accuracy: float | None
    specificity: float | None
    sensitivity: float | None


def classification_metrics(tp: int, tn: int, fp: int, fn: int) -> ClassificationMetrics:
    for name, v in (("tp", tp), ("tn", tn), ("fp", fp), ("fn", fn)):
        if v < 0:
            raise ParameterError(f"{name} must be nonnegative, got {v}")
    total = tp + tn + fp + fn
    return ClassificationMetrics(
        accuracy=(tp + tn) / total if total else None,
        specificity=tn / (tn + fp) if (tn + fp) else None,
        sensitivity=tp / (tp + fn) if (tp + fn) else None,
    )


@dataclass(frozen=True)
class EvalRow:
    task: str
    metric: str
    mean: float
    stderr: float
    n: int


def aggregate(task: str, metric: str, values) -> EvalRow:
    vals = np.asarray(list(values), dtype=np.float64)
    if vals.size == 0:
        raise ParameterError("cannot aggregate zero trials")
    stderr = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return EvalRow(task=task, metric=metric, mean=float(vals.mean()),
                   stderr=stderr, n=int(vals.size))


def write_eval_report(rows, path) -> None:
    """CSV report: task,metric,mean,stderr,n."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task", "metric", "mean", "stderr", "n"])
        for row in rows:
            writer.writerow([row.task, row.metric, repr(row.mean),
                             repr(row.stderr), row.n])
