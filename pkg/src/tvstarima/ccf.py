"""Cross-correlation between station pairs and PACF-based AR order selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import DegenerateSeriesError, ParameterError, ShapeError


@dataclass(frozen=True, eq=False)
class CcfProfile:
    """Sample cross-correlations of ``y`` against ``u`` at lags ``0..k_max``."""

    lags: np.ndarray
    correlations: np.ndarray
    pair: Optional[Tuple[str, str]] = None

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=int)
        corr = np.asarray(self.correlations, dtype=float)
        if lags.shape != corr.shape or lags.ndim != 1:
            raise ShapeError("lags and correlations must be 1-d and equally long")
        if lags.size and (lags[0] != 0 or np.any(np.diff(lags) <= 0)):
            raise ParameterError("lags must increase strictly from 0")
        lags.setflags(write=False)
        corr.setflags(write=False)
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "correlations", corr)

    def __len__(self) -> int:
        return self.lags.size


def _moments(x: np.ndarray, name: str):
    mean = x.mean()
    sd = np.sqrt(np.mean((x - mean) ** 2))
    if not sd > 0 or not np.isfinite(sd):
        raise DegenerateSeriesError(f"series {name} is constant")
    return mean, sd


def _as_pair(u, y):
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    if u.ndim != 1 or u.shape != y.shape:
        raise ShapeError(f"series must be 1-d and equally long, got {u.shape} and {y.shape}")
    return u, y


def _ccf(u, y, lags):
    n = u.size
    ubar, su = _moments(u, "u")
    ybar, sy = _moments(y, "y")
    du = u - ubar
    dy = y - ybar
    out = np.empty(len(lags))
    for i, k in enumerate(lags):
        out[i] = np.dot(du[: n - k], dy[k:]) / (n - k)
    return np.clip(out / (su * sy), -1.0, 1.0)


def cross_correlation(u, y, k: int) -> float:
    """Correlation between ``u_t`` and ``y_{t+k}``.

    Uses full-series means and population standard deviations with the
    overlapping-window average of length ``N - k``; the result is clamped to
    ``[-1, 1]``.
    """
    u, y = _as_pair(u, y)
    if k < 0 or k >= u.size:
        raise ParameterError(f"lag {k} outside [0, {u.size})")
    return float(_ccf(u, y, [k])[0])


def ccf_profile(u, y, k_max: int, pair=None) -> CcfProfile:
    u, y = _as_pair(u, y)
    if k_max < 1 or k_max >= u.size:
        raise ParameterError(f"k_max={k_max} must lie in [1, {u.size})")
    lags = np.arange(k_max + 1)
    return CcfProfile(lags, _ccf(u, y, lags), pair)


def best_lag(profile: CcfProfile, min_lag: int = 0) -> int:
    """Lag of the largest signed correlation; ties go to the smaller lag."""
    mask = profile.lags >= min_lag
    if not np.any(mask):
        raise ParameterError("profile holds no admissible lag")
    corr = np.where(mask, profile.correlations, -np.inf)
    return int(profile.lags[int(np.argmax(corr))])


def autocovariance(x, max_lag: int) -> np.ndarray:
    """Biased (divide-by-n) sample autocovariances at lags ``0..max_lag``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    dx = x - x.mean()
    return np.array([np.dot(dx[: n - h], dx[h:]) / n for h in range(max_lag + 1)])


def pacf(series, max_lag: int) -> np.ndarray:
    """Partial autocorrelations at lags ``1..max_lag`` by Durbin-Levinson.

    Element ``k - 1`` of the result is the lag-``k`` value.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ShapeError("series must be 1-d")
    if max_lag < 1 or x.size <= max_lag:
        raise ParameterError(f"max_lag={max_lag} requires a series longer than {max_lag}")
    gamma = autocovariance(x, max_lag)
    if not gamma[0] > 0:
        raise DegenerateSeriesError("series is constant")

    out = np.empty(max_lag)
    phi = np.zeros(0)
    v = gamma[0]
    for k in range(1, max_lag + 1):
        a = (gamma[k] - np.dot(phi, gamma[k - 1 : 0 : -1])) / v
        phi = np.concatenate([phi - a * phi[::-1], [a]])
        v *= 1.0 - a * a
        out[k - 1] = a
        if v <= 0:
            # perfectly predictable; higher partials are undefined
            out[k:] = 0.0
            break
    return out


def select_ar_order(series, max_lag: int) -> int:
    """Largest lag whose partial autocorrelation leaves the 95% band, at least 1."""
    values = pacf(series, max_lag)
    band = 1.96 / np.sqrt(np.asarray(series).size)
    significant = np.flatnonzero(np.abs(values) > band)
    return int(significant[-1] + 1) if significant.size else 1
