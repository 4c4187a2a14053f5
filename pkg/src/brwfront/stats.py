"""Ensemble post-processing: empirical speed / log-correction and tightness.

``fit_front`` regresses the per-n median of M_n on (n, log n, 1) by
weighted least squares (weights from bootstrap standard errors of the
medians) and reports bootstrap standard errors for the coefficients. The
median is used rather than the mean: it is robust to the heavy left tail
of M_n and matches the O_P(1) centering of the predictions.

``tightness`` summarizes quantiles of M_n - m_n per rung: a correctly
centered prediction leaves the spread roughly flat in n, while a wrong log
coefficient shows up as a median drift linear in log n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as brng
from .errors import InsufficientData
from .regimes import predict_front

MIN_RUNGS = 4
MIN_REPLICATES = 100
BOOTSTRAP_RESAMPLES = 200


@dataclass(frozen=True)
class FitResult:
    v_hat_emp: float
    v_stderr: float
    c_log_emp: float          # signed coefficient of log n (predictions: -L)
    c_stderr: float
    intercept: float
    residuals: tuple          # per-rung (n, median - fit)
    n_ladder: tuple


@dataclass(frozen=True)
class TightnessRow:
    n: int
    q10: float
    q50: float
    q90: float


@dataclass(frozen=True)
class TightnessReport:
    rows: tuple
    max_iqr: float            # max over rungs of q90 - q10
    drift_slope: float        # slope of the median of M_n - m_n against log n
    non_tight: bool           # IQR grew > 50% per decade somewhere


def _validated(ensembles):
    ladder = sorted(int(n) for n in ensembles)
    if len(ladder) < MIN_RUNGS:
        raise InsufficientData(f"need >= {MIN_RUNGS} distinct n, got {len(ladder)}")
    if ladder[-1] < 10 * ladder[0]:
        raise InsufficientData("ladder must span at least one decade")
    values = {}
    for n in ladder:
        x = np.asarray(ensembles[n], dtype=float)
        if x.size < MIN_REPLICATES:
            raise InsufficientData(f"need >= {MIN_REPLICATES} replicates at n={n}")
        values[n] = x
    return ladder, values


def _wls(ladder, medians, weights):
    x = np.asarray(ladder, dtype=float)
    X = np.column_stack([x, np.log(x), np.ones_like(x)])
    sw = np.sqrt(weights)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], medians * sw, rcond=None)
    return beta, X


def fit_front(ensembles, seed: int = 0) -> FitResult:
    """Weighted least squares of median(M_n) on (n, log n, 1).

    ``ensembles`` maps n to the replicate values of M_n. Standard errors
    of the coefficients come from 200 bootstrap resamples (within rung,
    keyed streams).
    """
    ladder, values = _validated(ensembles)
    medians = np.array([np.median(values[n]) for n in ladder])

    se = np.empty(len(ladder))
    boot_medians = np.empty((BOOTSTRAP_RESAMPLES, len(ladder)))
    for i, n in enumerate(ladder):
        x = values[n]
        r = brng.stream(seed, 0x57A75, n)
        idx = r.integers(0, x.size, size=(BOOTSTRAP_RESAMPLES, x.size))
        boot_medians[:, i] = np.median(x[idx], axis=1)
        se[i] = boot_medians[:, i].std(ddof=1)
    weights = 1.0 / np.maximum(se, 1e-12) ** 2

    beta, X = _wls(ladder, medians, weights)
    boot_beta = np.empty((BOOTSTRAP_RESAMPLES, 3))
    for b in range(BOOTSTRAP_RESAMPLES):
        boot_beta[b], _ = _wls(ladder, boot_medians[b], weights)
    stderr = np.maximum(boot_beta.std(axis=0, ddof=1), 1e-15)

    fitted = X @ beta
    return FitResult(v_hat_emp=float(beta[0]), v_stderr=float(stderr[0]),
                     c_log_emp=float(beta[1]), c_stderr=float(stderr[1]),
                     intercept=float(beta[2]),
                     residuals=tuple((n, float(m - f))
                                     for n, m, f in zip(ladder, medians, fitted)),
                     n_ladder=tuple(ladder))


def tightness(ensembles, prediction) -> TightnessReport:
    """Quantiles of M_n - m_n per rung, with a drift and spread check.

    Flags non-tightness when the (q90 - q10) spread grows faster than 50%
    per decade between any two rungs at least a decade apart.
    """
    ladder, values = _validated(ensembles)
    rows = []
    for n in ladder:
        delta = values[n] - predict_front(prediction, n).m_n
        q10, q50, q90 = np.quantile(delta, [0.1, 0.5, 0.9])
        rows.append(TightnessRow(n=n, q10=float(q10), q50=float(q50), q90=float(q90)))

    iqr = [r.q90 - r.q10 for r in rows]
    non_tight = False
    for i, ni in enumerate(ladder):
        for j in range(i + 1, len(ladder)):
            ratio = ladder[j] / ni
            if ratio >= 10.0 and iqr[j] > iqr[i] * 1.5 ** math.log10(ratio):
                non_tight = True

    logs = np.log(np.asarray(ladder, dtype=float))
    med = np.asarray([r.q50 for r in rows])
    x = logs - logs.mean()
    drift = float(np.dot(x, med - med.mean()) / np.dot(x, x))
    return TightnessReport(rows=tuple(rows), max_iqr=float(max(iqr)),
                           drift_slope=drift, non_tight=non_tight)
