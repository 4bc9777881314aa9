"""Seasonal-trend decomposition by loess (Cleveland et al., 1990).

Additive decomposition ``y = trend + seasonal + residual`` with the original
inner loop (cycle-subseries smoothing, low-pass filter, detrending, trend
smoothing) and outer robustness loop. Loess fits are degree 1 with tricube
neighbourhood weights; every point is estimated directly (no jump
interpolation). The loess routines are vectorised over evaluation points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def _smallest_odd_at_least(x: float) -> int:
    v = math.ceil(x - 1e-12)
    return v if v % 2 == 1 else v + 1


@dataclass(frozen=True)
class StlConfig:
    period: int = 35
    inner_iter: int = 2
    outer_iter: int = 1
    seasonal: int = 7
    trend: int | None = None
    low_pass: int | None = None

    def __post_init__(self):
        if self.period < 2:
            raise ValueError(f"period must be >= 2, got {self.period}")
        if self.inner_iter < 1 or self.outer_iter < 0:
            raise ValueError("need inner_iter >= 1 and outer_iter >= 0")
        for name, span in self.spans().items():
            if span < 3 or span % 2 == 0:
                raise ValueError(f"{name} span must be odd and >= 3, got {span}")

    @property
    def trend_span(self) -> int:
        if self.trend is not None:
            return self.trend
        return _smallest_odd_at_least(1.5 * self.period / (1.0 - 1.5 / self.seasonal))

    @property
    def low_pass_span(self) -> int:
        if self.low_pass is not None:
            return self.low_pass
        return _smallest_odd_at_least(self.period)

    def spans(self) -> dict[str, int]:
        return {"seasonal": self.seasonal, "trend": self.trend_span, "low_pass": self.low_pass_span}


@dataclass
class DecomposedSeries:
    observed: np.ndarray
    trend: np.ndarray
    seasonal: np.ndarray
    residual: np.ndarray
    weights: np.ndarray
    period: int

    def __len__(self) -> int:
        return self.observed.shape[0]


# Positions below are 1-based, mirroring the reference Fortran so that the
# window and bandwidth arithmetic can be checked line by line.

def _est(y, span, xs, nleft, nright, rw):
    """Local linear fit of ``y`` at positions ``xs`` over windows [nleft, nright].

    Returns the estimates and a mask of points whose total weight was positive.
    """
    n = y.shape[0]
    width = int(nright[0] - nleft[0] + 1)
    idx = nleft[:, None] + np.arange(width)[None, :]
    h = np.maximum(xs - nleft, nright - xs).astype(np.float64)
    if span > n:
        h = h + (span - n) // 2
    r = np.abs(idx - xs[:, None]).astype(np.float64)
    hh = h[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        tri = (1.0 - (r / hh) ** 3) ** 3
    w = np.where(r <= 0.999 * hh, np.where(r <= 0.001 * hh, 1.0, tri), 0.0)
    if rw is not None:
        w = w * rw[idx - 1]
    total = w.sum(axis=1)
    ok = total > 0.0
    w = w / np.where(ok, total, 1.0)[:, None]
    centre = (w * idx).sum(axis=1)
    spread = (w * (idx - centre[:, None]) ** 2).sum(axis=1)
    tilt = (h > 0) & (np.sqrt(spread) > 0.001 * (n - 1))
    slope = np.where(tilt, (xs - centre) / np.where(tilt, spread, 1.0), 0.0)
    w = w * (slope[:, None] * (idx - centre[:, None]) + 1.0)
    ys = (w * y[idx - 1]).sum(axis=1)
    return ys, ok


def _ess(y, span, rw=None):
    """Loess-smooth ``y`` at every one of its own positions."""
    n = y.shape[0]
    if n < 2:
        return y.copy()
    xs = np.arange(1, n + 1)
    if span >= n:
        nleft = np.ones(n, dtype=np.int64)
        nright = np.full(n, n, dtype=np.int64)
    else:
        half = (span + 1) // 2
        nleft = np.clip(xs - half + 1, 1, n - span + 1)
        nright = nleft + span - 1
    ys, ok = _est(y, span, xs, nleft, nright, rw)
    return np.where(ok, ys, y)


def _cycle_subseries(y, period, span, rw):
    """Smooth each cycle-subseries, extended by one cycle at both ends (length n + 2p)."""
    n = y.shape[0]
    out = np.zeros(n + 2 * period)
    for j in range(period):
        sub = y[j::period]
        k = sub.shape[0]
        sub_rw = None if rw is None else rw[j::period]
        smooth = _ess(sub, span, sub_rw)
        width = min(span, k)
        first, ok0 = _est(sub, span, np.array([0]), np.array([1]), np.array([width]), sub_rw)
        last, ok1 = _est(sub, span, np.array([k + 1]), np.array([k - width + 1]), np.array([k]), sub_rw)
        ext = np.empty(k + 2)
        ext[0] = first[0] if ok0[0] else smooth[0]
        ext[1:-1] = smooth
        ext[-1] = last[0] if ok1[0] else smooth[-1]
        out[j::period][:k + 2] = ext
    return out


def _moving_average(x, length):
    c = np.concatenate(([0.0], np.cumsum(x)))
    return (c[length:] - c[:-length]) / length


def _low_pass(x, period):
    return _moving_average(_moving_average(_moving_average(x, period), period), 3)


# residual medians below this fraction of the data magnitude are rounding noise
NOISE_FLOOR = 1e-10


def _negligible(median: float, magnitude: float) -> bool:
    return median <= NOISE_FLOOR * max(1.0, magnitude)


def bisquare_weights(residual: np.ndarray, magnitude: float = 0.0) -> np.ndarray:
    """``(1 - u^2)^2`` for ``u = |r| / (6 median|r|) < 1``, else 0.

    All ones when the median is zero, or negligible next to ``magnitude``
    (the largest absolute observation).
    """
    r = np.abs(residual)
    med = float(np.median(r))
    if med == 0.0 or _negligible(med, magnitude):
        return np.ones_like(r)
    scale = 6.0 * med
    u = r / scale
    return np.where(u < 1.0, (1.0 - u ** 2) ** 2, 0.0)


def _loop_weights(residual, magnitude):
    # the reference implementation snaps weights to 1 / 0 within 0.1% of the ends
    r = np.abs(residual)
    if _negligible(float(np.median(r)), magnitude):
        return np.ones_like(r)
    h = 6.0 * float(np.median(r))
    with np.errstate(divide="ignore", invalid="ignore"):
        bisq = (1.0 - (r / h) ** 2) ** 2
    return np.where(r <= 0.001 * h, 1.0, np.where(r <= 0.999 * h, bisq, 0.0))


def _inner_loop(y, cfg: StlConfig, rw, trend):
    n = y.shape[0]
    p = cfg.period
    seasonal = np.zeros(n)
    for _ in range(cfg.inner_iter):
        cycle = _cycle_subseries(y - trend, p, cfg.seasonal, rw)
        low = _ess(_low_pass(cycle, p), cfg.low_pass_span)
        seasonal = cycle[p:p + n] - low
        trend = _ess(y - seasonal, cfg.trend_span, rw)
    return seasonal, trend


def stl_decompose(y, cfg: StlConfig | None = None) -> DecomposedSeries:
    cfg = cfg or StlConfig()
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise ValueError("stl_decompose expects a 1-d series")
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains NaN or infinite values")
    if y.shape[0] < 2 * cfg.period:
        raise ValueError(f"series too short for period: n={y.shape[0]} < 2*{cfg.period}")

    scale = float(np.abs(y).max())
    trend = np.zeros_like(y)
    rw = None
    for outer in range(cfg.outer_iter + 1):
        seasonal, trend = _inner_loop(y, cfg, rw, trend)
        if outer < cfg.outer_iter:
            rw = _loop_weights(y - trend - seasonal, scale)
    residual = y - trend - seasonal
    return DecomposedSeries(y.copy(), trend, seasonal, residual, bisquare_weights(residual, scale), cfg.period)
