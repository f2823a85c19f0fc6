"""Forecast scoring and non-stationarity diagnostics.

sMAPE follows the M4 convention: 200 * |y - yhat| / (|y| + |yhat|),
averaged over steps, with 0/0 treated as a perfect step.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


def smape(forecast, target) -> float:
    forecast = np.asarray(forecast, dtype=np.float64).ravel()
    target = np.asarray(target, dtype=np.float64).ravel()
    if forecast.shape != target.shape or forecast.size == 0:
        raise ValueError("forecast and target must be equal-length and nonempty")
    denom = np.abs(target) + np.abs(forecast)
    with np.errstate(invalid="ignore", divide="ignore"):
        terms = np.where(denom == 0.0, 0.0, 200.0 * np.abs(target - forecast) / denom)
    return float(terms.mean())


def weighted_rmse(forecasts, targets, weights) -> float:
    """sqrt(sum_s w_s * SSE_s / sum_s w_s * count_s) over series."""
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0) or not np.any(weights > 0):
        raise ValueError("weights must be nonnegative and not all zero")
    if not (len(forecasts) == len(targets) == len(weights)):
        raise ValueError("forecasts, targets and weights must align")
    num = 0.0
    den = 0.0
    for pred, tgt, w in zip(forecasts, targets, weights):
        pred = np.asarray(pred, dtype=np.float64)
        tgt = np.asarray(tgt, dtype=np.float64)
        num += w * float(np.sum((pred - tgt) ** 2))
        den += w * pred.size
    return float(np.sqrt(num / den))


def persistence_forecast(lookback, h: int) -> np.ndarray:
    """Repeat the last observed value h times, per feature."""
    lookback = np.atleast_2d(np.asarray(lookback, dtype=np.float64))
    if lookback.shape[1] == 0:
        raise ValueError("empty lookback")
    return np.repeat(lookback[:, -1:], h, axis=1)


# -------------------------------------------------------------- diagnostics


def forecastability(series) -> float:
    """One minus the normalized spectral entropy of the slice, in [0, 1]."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if x.size < 4:
        raise ValueError("forecastability needs at least 4 steps")
    x = x - x.mean()
    spectrum = np.abs(np.fft.rfft(x))[1:] ** 2  # DC removed with the mean
    total = spectrum.sum()
    if total <= 0.0:
        return 1.0  # constant slice: perfectly predictable
    p = spectrum / total
    nz = p[p > 0]
    entropy = -float(np.sum(nz * np.log(nz)))
    return float(1.0 - entropy / np.log(len(p)))


def trend(series) -> float:
    """OLS slope over t = 0..T-1, scaled by the slice's mean magnitude."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("trend needs at least 2 steps")
    magnitude = np.abs(x).mean()
    if magnitude == 0.0:
        return 0.0
    t = np.arange(x.size, dtype=np.float64)
    slope = np.polyfit(t, x, 1)[0]
    return float(slope / magnitude)


def seasonality_acf(series, lag: int) -> bool:
    """True when the lag autocorrelation exceeds the 95% band 1.96/sqrt(T)."""
    x = np.asarray(series, dtype=np.float64).ravel()
    if lag < 1 or x.size <= 3 * lag:
        raise ValueError("need lag >= 1 and more than 3*lag steps")
    centered = x - x.mean()
    denom = float(np.sum(centered**2))
    if denom == 0.0:
        warnings.warn("zero-variance slice: autocorrelation undefined")
        return False
    acf = float(np.sum(centered[:-lag] * centered[lag:]) / denom)
    return bool(acf > 1.96 / np.sqrt(x.size))


def sliced_diagnostics(series, slice_length: int = 20, lag: int | None = None) -> dict:
    """Mean forecastability/trend and seasonal-slice share over fixed slices."""
    x = np.asarray(series, dtype=np.float64).ravel()
    fcast, trends, seasonal = [], [], []
    for lo in range(0, x.size - slice_length + 1, slice_length):
        chunk = x[lo : lo + slice_length]
        fcast.append(forecastability(chunk))
        trends.append(trend(chunk))
        if lag is not None and chunk.size > 3 * lag:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                seasonal.append(seasonality_acf(chunk, lag))
    return {
        "forecastability": float(np.mean(fcast)) if fcast else float("nan"),
        "trend": float(np.mean(trends)) if trends else float("nan"),
        "seasonal_share": float(np.mean(seasonal)) if seasonal else float("nan"),
    }


# ------------------------------------------------------------------ reports


@dataclass
class ScoreReport:
    metric: str
    overall: float
    per_bucket: dict  # bucket label -> value
    per_series: dict  # series id -> value

    def rows(self):
        """CSV rows: series_id, metric, bucket, value."""
        out = [("ALL", self.metric, "total", self.overall)]
        out += [("ALL", self.metric, label, v) for label, v in self.per_bucket.items()]
        out += [(sid, self.metric, "total", v) for sid, v in self.per_series.items()]
        return out


def horizon_buckets(h: int, count: int = 3) -> list:
    """Split steps 1..h into `count` contiguous buckets (label, lo, hi)."""
    edges = np.linspace(0, h, count + 1).astype(int)
    return [
        (f"{lo + 1}-{hi}", lo, hi)
        for lo, hi in zip(edges[:-1], edges[1:])
        if hi > lo
    ]


def score_forecasts(metric: str, forecasts, targets, ids, weights=None) -> ScoreReport:
    """Score aligned per-series forecasts; metric is 'smape' or 'rmse'."""
    if metric not in ("smape", "rmse"):
        raise ValueError(f"unknown metric {metric!r}")
    if weights is None:
        weights = [1.0] * len(forecasts)
    h = np.asarray(forecasts[0]).shape[-1]
    per_series = {}
    for sid, pred, tgt in zip(ids, forecasts, targets):
        if metric == "smape":
            per_series[sid] = smape(pred, tgt)
        else:
            per_series[sid] = weighted_rmse([pred], [tgt], [1.0])
    per_bucket = {}
    for label, lo, hi in horizon_buckets(h):
        preds = [np.atleast_2d(p)[:, lo:hi] for p in forecasts]
        tgts = [np.atleast_2d(t)[:, lo:hi] for t in targets]
        if metric == "smape":
            per_bucket[label] = float(
                np.mean([smape(p, t) for p, t in zip(preds, tgts)])
            )
        else:
            per_bucket[label] = weighted_rmse(preds, tgts, weights)
    if metric == "smape":
        overall = float(np.mean(list(per_series.values())))
    else:
        overall = weighted_rmse(forecasts, targets, weights)
    return ScoreReport(
        metric=metric, overall=overall, per_bucket=per_bucket, per_series=per_series
    )
