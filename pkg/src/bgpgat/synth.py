"""Seeded synthetic feature series with injected anomaly signatures."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .features import FEATURE_NAMES, FeatureSeries

# multiplicative shifts keyed by 1-based feature index
SIGNATURES: dict[str, dict[int, float]] = {
    "worm": {1: 10.0},
    "blackout": {2: 8.0},
    "null": {},
    # six events sharing the announcement spike; each adds two neighbours from a ring of six
    # features, so each extra feature also marks one other event but every pair is unique
    "codered": {1: 10.0, 3: 6.0, 9: 6.0},
    "nimda": {1: 10.0, 9: 6.0, 17: 3.0},
    "slammer": {1: 10.0, 17: 3.0, 2: 8.0},
    "moscow": {1: 10.0, 2: 8.0, 14: 6.0},
    "leak": {1: 10.0, 14: 6.0, 45: 8.0},
    "hijack": {1: 10.0, 45: 8.0, 3: 6.0},
}
MULTICLASS_EVENTS = ("codered", "nimda", "slammer", "moscow", "leak", "hijack")


@dataclass(frozen=True)
class SynthEvent:
    """One anomaly interval [start, end) in row units with its feature shifts."""

    event_id: int
    start: int
    end: int
    signature: Mapping[int, float] = field(default_factory=dict)

    @classmethod
    def named(cls, name: str, event_id: int, start: int, end: int) -> "SynthEvent":
        if name not in SIGNATURES:
            raise ValueError(f"unknown signature {name!r}; choose from {sorted(SIGNATURES)}")
        return cls(event_id, start, end, SIGNATURES[name])


def synth_events(events: Sequence[SynthEvent], n: int, seed: int = 0, period: int = 35,
                 noise: float = 0.05, amplitude: float = 0.2, start_ts: int = 0) -> FeatureSeries:
    """Baseline counts with a periodic swing and low noise, shifted inside the spans."""
    if n < 2 * period:
        raise ValueError(f"n={n} is shorter than two periods ({2 * period})")
    rng = np.random.default_rng(seed)
    k = len(FEATURE_NAMES)
    base = rng.uniform(5.0, 50.0, size=k)
    phase = rng.uniform(0.0, 2 * np.pi, size=k)
    t = np.arange(n)[:, None]
    level = base * (1.0 + amplitude * np.sin(2 * np.pi * t / period + phase))
    values = level * (1.0 + noise * rng.standard_normal((n, k)))
    labels = np.zeros(n, dtype=np.int64)
    taken = np.zeros(n, dtype=bool)
    for ev in events:
        if not (0 <= ev.start < ev.end <= n):
            raise ValueError(f"event {ev.event_id} span [{ev.start}, {ev.end}) outside [0, {n})")
        if taken[ev.start:ev.end].any():
            raise ValueError(f"event {ev.event_id} overlaps another event")
        if ev.event_id < 1:
            raise ValueError("event ids must be >= 1")
        taken[ev.start:ev.end] = True
        labels[ev.start:ev.end] = ev.event_id
        for feat, factor in ev.signature.items():
            if not 1 <= feat <= k:
                raise ValueError(f"feature index {feat} outside 1..{k}")
            values[ev.start:ev.end, feat - 1] *= factor
    values = np.maximum(np.round(values), 0.0)
    return FeatureSeries(start_ts, values, labels)


def spike_dataset(name: str = "worm", n: int = 2000, fraction: float = 0.1, seed: int = 0,
                  period: int = 35) -> FeatureSeries:
    """One event covering ``fraction`` of the timeline, centred."""
    width = max(1, int(round(n * fraction)))
    lo = (n - width) // 2
    return synth_events([SynthEvent.named(name, 1, lo, lo + width)], n, seed, period)


def event_suite(names: Sequence[str] = MULTICLASS_EVENTS, samples: int = 600,
                fraction: float = 0.3, seed: int = 0, period: int = 35) -> list[FeatureSeries]:
    """One ``samples``-row series per event, anomaly centred, labelled with its 1-based id."""
    out = []
    for i, name in enumerate(names, start=1):
        width = int(round(samples * fraction))
        lo = (samples - width) // 2
        ev = SynthEvent.named(name, i, lo, lo + width)
        out.append(synth_events([ev], samples, seed + 1000 * i, period, start_ts=i * 10 ** 7))
    return out
