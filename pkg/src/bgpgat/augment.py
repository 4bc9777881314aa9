"""STL channel expansion and sliding-window sample construction."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features import FeatureSeries
from .stl import StlConfig, stl_decompose

COMPONENTS = ("obs", "res", "seas", "trend", "w")


def augment_series(series: FeatureSeries, cfg: StlConfig | None = None,
                   components: Sequence[str] = COMPONENTS) -> FeatureSeries:
    """Decompose every feature and lay the result out component-major.

    With all components the width is 5k, ordered observed, residual,
    seasonal, trend, robustness weight, each block in feature order.
    """
    cfg = cfg or StlConfig()
    unknown = set(components) - set(COMPONENTS)
    if unknown or not components:
        raise ValueError(f"components must be a non-empty subset of {COMPONENTS}, got {components}")
    components = [c for c in COMPONENTS if c in components]
    if components == ["obs"]:
        blocks = {"obs": series.values}
    else:
        blocks = {c: np.empty_like(series.values) for c in COMPONENTS}
        for j, name in enumerate(series.names):
            try:
                d = stl_decompose(series.values[:, j], cfg)
            except ValueError as exc:
                raise ValueError(f"feature {name!r}: {exc}") from None
            blocks["obs"][:, j] = d.observed
            blocks["res"][:, j] = d.residual
            blocks["seas"][:, j] = d.seasonal
            blocks["trend"][:, j] = d.trend
            blocks["w"][:, j] = d.weights
    values = np.hstack([blocks[c] for c in components])
    names = tuple(f"{n}.{c}" for c in components for n in series.names)
    return FeatureSeries(series.start, values, series.labels.copy(), series.bin_width, names)


@dataclass
class NormalizerStats:
    lo: np.ndarray
    hi: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        const = span == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            z = (x - self.lo) / np.where(const, 1.0, span)
        z = np.where(const, 0.0, z)
        return np.clip(z, 0.0, 1.0)


def fit_normalizer(rows: np.ndarray) -> NormalizerStats:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError("need at least one row to fit normalization")
    return NormalizerStats(rows.min(axis=0), rows.max(axis=0))


@dataclass
class WindowSample:
    values: np.ndarray  # m x C
    label: int
    start: int


@dataclass
class WindowSet:
    """Stacked windows.

    ``x`` is (N, m, C); ``y`` the class targets; ``events`` the original
    majority label (event id) before any relabelling; ``starts`` the row
    offset in the source series; ``group`` the index of the source series.
    """

    x: np.ndarray
    y: np.ndarray
    starts: np.ndarray
    names: tuple[str, ...] = ()
    group: np.ndarray | None = None
    events: np.ndarray | None = None

    def __post_init__(self):
        if self.group is None:
            self.group = np.zeros(len(self.y), dtype=np.int64)
        if self.events is None:
            self.events = np.asarray(self.y, dtype=np.int64).copy()

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> WindowSample:
        return WindowSample(self.x[i], int(self.y[i]), int(self.starts[i]))

    def _replace(self, **kw) -> "WindowSet":
        fields = dict(x=self.x, y=self.y, starts=self.starts, names=self.names,
                      group=self.group, events=self.events)
        fields.update(kw)
        return WindowSet(**fields)

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowSet(self.x[idx], self.y[idx], self.starts[idx], self.names,
                         self.group[idx], self.events[idx])

    def normalized(self, stats: NormalizerStats) -> "WindowSet":
        return self._replace(x=stats.apply(self.x))

    def relabelled(self, y: np.ndarray) -> "WindowSet":
        return self._replace(y=np.asarray(y, dtype=np.int64))

    def binary(self) -> "WindowSet":
        """Targets collapsed to normal (0) versus any anomaly (1)."""
        return self.relabelled((self.events > 0).astype(np.int64))

    @staticmethod
    def concat(sets: Sequence["WindowSet"]) -> "WindowSet":
        return WindowSet(np.concatenate([s.x for s in sets]), np.concatenate([s.y for s in sets]),
                         np.concatenate([s.starts for s in sets]), sets[0].names,
                         np.concatenate([s.group for s in sets]),
                         np.concatenate([s.events for s in sets]))


def majority_labels(labels: np.ndarray, m: int) -> np.ndarray:
    """Most frequent label of each stride-1 window; ties go to the larger label."""
    labels = np.asarray(labels, dtype=np.int64)
    n_win = labels.shape[0] - m + 1
    best = np.zeros(n_win, dtype=np.int64)
    best_count = np.full(n_win, -1)
    for c in np.unique(labels):
        cum = np.concatenate(([0], np.cumsum(labels == c)))
        count = cum[m:] - cum[:-m]
        take = count >= best_count  # ascending classes, so >= resolves ties upward
        best = np.where(take, c, best)
        best_count = np.where(take, count, best_count)
    return best


def slice_windows(values: np.ndarray, labels: np.ndarray, m: int,
                  norm: NormalizerStats | str | None = None,
                  names: tuple[str, ...] = ()) -> tuple[WindowSet, NormalizerStats | None]:
    """All n - m + 1 stride-1 windows of ``values``.

    ``norm`` may be fitted stats, ``"fit"`` to fit on ``values`` itself, or
    None to leave windows raw (the pipeline fits on training rows later).
    """
    values = np.asarray(values, dtype=np.float64)
    n = values.shape[0]
    if m < 1:
        raise ValueError("window length must be >= 1")
    if n < m:
        raise ValueError(f"series of length {n} is shorter than window {m}")
    stats = fit_normalizer(values) if isinstance(norm, str) and norm == "fit" else norm
    if isinstance(stats, str):
        raise ValueError(f"unknown normalization mode {norm!r}")
    x = np.lib.stride_tricks.sliding_window_view(values, m, axis=0)  # (N, C, m)
    x = np.ascontiguousarray(np.swapaxes(x, 1, 2))
    if stats is not None:
        x = stats.apply(x)
    windows = WindowSet(x, majority_labels(labels, m), np.arange(n - m + 1), names)
    return windows, stats
