"""Per-minute volume and AS-path features computed from an UpdateRecord stream."""
from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .artifacts import atomic_write_text
from .ingest import Origin, UpdateRecord

BIN_WIDTH = 60
MAX_HIST_DISTANCE = 10

FEATURE_NAMES: tuple[str, ...] = (
    "announcements",
    "withdrawals",
    "duplicate_announcements",
    "nlri_announcements",
    "nonduplicate_announcements",
    "flaps",
    "new_after_withdraw",
    "plain_new_announcements",
    "implicit_withdrawals_same_path",
    "implicit_withdrawals_diff_path",
    "origin_igp",
    "origin_egp",
    "origin_incomplete",
    "origin_changes",
    "announcements_longer_path",
    "announcements_shorter_path",
    "avg_path_length",
    "max_path_length",
    "avg_unique_path_length",
    "max_unique_path_length",
    "avg_edit_distance",
    "max_edit_distance",
    *(f"edit_distance_{n}" for n in range(MAX_HIST_DISTANCE + 1)),
    *(f"unique_edit_distance_{n}" for n in range(MAX_HIST_DISTANCE + 1)),
    "rare_ases",
    "max_rare_ases",
)
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 46

# 0-based column of the 1-based table index
def col(index: int) -> int:
    return index - 1


EDIT_HIST = col(23)
UNIQUE_EDIT_HIST = col(34)


class PrefixAction(Enum):
    NONE = 0
    ANNOUNCED = 1
    WITHDRAWN = 2


@dataclass(slots=True)
class PrefixState:
    prefix: object
    last_action: PrefixAction = PrefixAction.NONE
    last_path: tuple[int, ...] = ()
    last_origin: Origin = Origin.ABSENT


@dataclass
class EventLabelSpec:
    events: list[tuple[int, int, int]] = field(default_factory=list)

    def __post_init__(self):
        ordered = sorted(self.events, key=lambda e: e[1])
        for event, start, end in ordered:
            if event < 1:
                raise ValueError(f"event ids start at 1, got {event}")
            if start >= end:
                raise ValueError(f"event {event} has empty interval [{start}, {end})")
        for (e0, _, end0), (e1, start1, _) in zip(ordered, ordered[1:]):
            if start1 < end0:
                raise ValueError(f"events {e0} and {e1} overlap")

    def label_at(self, ts: int) -> int:
        for event, start, end in self.events:
            if start <= ts < end:
                return event
        return 0

    @classmethod
    def from_json(cls, text: str) -> "EventLabelSpec":
        items = json.loads(text)
        return cls([(int(d["event"]), int(d["start"]), int(d["end"])) for d in items])

    def to_json(self) -> str:
        return json.dumps([{"event": e, "start": s, "end": t} for e, s, t in self.events])


@dataclass
class FeatureSeries:
    start: int
    values: np.ndarray  # n x k
    labels: np.ndarray  # n
    bin_width: int = BIN_WIDTH
    names: tuple[str, ...] = FEATURE_NAMES

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.values.ndim != 2 or self.values.shape[0] != self.labels.shape[0]:
            raise ValueError(f"values {self.values.shape} and labels {self.labels.shape} disagree")
        if self.values.shape[1] != len(self.names):
            raise ValueError(f"{self.values.shape[1]} columns but {len(self.names)} names")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def timestamps(self) -> np.ndarray:
        return self.start + self.bin_width * np.arange(len(self), dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, FeatureSeries):
            return NotImplemented
        return (self.start == other.start and self.bin_width == other.bin_width
                and self.names == other.names
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.labels, other.labels))


def path_edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    """Levenshtein distance with whole AS numbers as tokens."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def rare_as_counts(window_paths: Iterable[Sequence[int]], history: Counter,
                   threshold: int = 5) -> tuple[int, int]:
    """Rare-AS occurrences this minute and the largest number in a single path.

    An AS is rare while fewer than ``threshold`` earlier paths contained it.
    AS prepending does not count twice within a path.
    """
    total = 0
    worst = 0
    for path in window_paths:
        n = sum(1 for asn in set(path) if history[asn] < threshold)
        total += n
        worst = max(worst, n)
    return total, worst


class _Bin:
    __slots__ = ("counts", "path_lengths", "unique_paths", "edits", "unique_edits", "record_paths")

    def __init__(self):
        self.counts = np.zeros(N_FEATURES)
        self.path_lengths: list[int] = []
        self.unique_paths: set[tuple[int, ...]] = set()
        self.edits: list[int] = []
        self.unique_edits: dict[tuple, int] = {}
        self.record_paths: list[tuple[int, ...]] = []


class FeatureExtractor:
    """Stateful single-pass extractor.

    Prefix state and rare-AS history carry across ``feed`` calls, so a stream
    split over several files gives the same rows as one concatenated pass.
    """

    def __init__(self, rare_threshold: int = 5, flap_mode: str = "duplicate",
                 max_prefixes: int | None = None):
        if flap_mode not in ("duplicate", "reannounce"):
            raise ValueError(f"unknown flap mode {flap_mode!r}")
        self.rare_threshold = rare_threshold
        self.flap_mode = flap_mode
        self.max_prefixes = max_prefixes
        self.prefixes: OrderedDict[tuple, PrefixState] = OrderedDict()
        self.as_history: Counter = Counter()
        self.start: int | None = None
        self.rows: list[np.ndarray] = []
        self._bin: _Bin | None = None
        self._bin_start: int | None = None

    def _state(self, key) -> PrefixState:
        st = self.prefixes.get(key)
        if st is None:
            st = PrefixState(key[1])
            self.prefixes[key] = st
            if self.max_prefixes is not None and len(self.prefixes) > self.max_prefixes:
                self.prefixes.popitem(last=False)
        elif self.max_prefixes is not None:
            self.prefixes.move_to_end(key)
        return st

    def feed(self, records: Iterable[UpdateRecord]) -> None:
        for rec in records:
            b = rec.timestamp - rec.timestamp % BIN_WIDTH
            if self._bin_start is None:
                self.start = self._bin_start = b
                self._bin = _Bin()
            elif b < self._bin_start:
                raise ValueError(f"records not timestamp-sorted at ts={rec.timestamp}")
            while b > self._bin_start:
                self._close_bin()
                self._bin_start += BIN_WIDTH
                self._bin = _Bin()
            self._add(rec)

    def _add(self, rec: UpdateRecord) -> None:
        acc = self._bin
        c = acc.counts
        for p in rec.withdrawn:
            st = self._state((rec.peer_as, p))
            c[col(2)] += 1
            st.last_action = PrefixAction.WITHDRAWN
            st.last_path = ()
            st.last_origin = Origin.ABSENT
        if not rec.announced:
            return
        path, origin = rec.as_path, rec.origin
        c[col(4)] += 1
        if origin is Origin.IGP:
            c[col(11)] += 1
        elif origin is Origin.EGP:
            c[col(12)] += 1
        elif origin is Origin.INCOMPLETE:
            c[col(13)] += 1
        acc.record_paths.append(path)
        acc.unique_paths.add(path)
        for p in rec.announced:
            st = self._state((rec.peer_as, p))
            c[col(1)] += 1
            acc.path_lengths.append(len(path))
            if st.last_action is PrefixAction.ANNOUNCED:
                old_path, old_origin = st.last_path, st.last_origin
                if path == old_path and origin == old_origin:
                    c[col(3)] += 1
                    if self.flap_mode == "duplicate":
                        c[col(6)] += 1
                elif path == old_path:
                    c[col(9)] += 1
                else:
                    c[col(10)] += 1
                if origin != old_origin:
                    c[col(14)] += 1
                if len(path) > len(old_path):
                    c[col(15)] += 1
                elif len(path) < len(old_path):
                    c[col(16)] += 1
                d = path_edit_distance(old_path, path)
                acc.edits.append(d)
                acc.unique_edits[(old_path, path)] = d
            elif st.last_action is PrefixAction.WITHDRAWN:
                c[col(7)] += 1
                if self.flap_mode == "reannounce":
                    c[col(6)] += 1
            else:
                c[col(8)] += 1
            st.last_action = PrefixAction.ANNOUNCED
            st.last_path = path
            st.last_origin = origin

    def _close_bin(self) -> None:
        acc = self._bin
        c = acc.counts
        c[col(5)] = c[col(1)] - c[col(3)]
        if acc.path_lengths:
            c[col(17)] = float(np.mean(acc.path_lengths))
            c[col(18)] = max(acc.path_lengths)
        if acc.unique_paths:
            lengths = [len(p) for p in acc.unique_paths]
            c[col(19)] = float(np.mean(lengths))
            c[col(20)] = max(lengths)
        if acc.edits:
            c[col(21)] = float(np.mean(acc.edits))
            c[col(22)] = max(acc.edits)
            for d in acc.edits:
                if d <= MAX_HIST_DISTANCE:
                    c[EDIT_HIST + d] += 1
            for d in acc.unique_edits.values():
                if d <= MAX_HIST_DISTANCE:
                    c[UNIQUE_EDIT_HIST + d] += 1
        c[col(45)], c[col(46)] = rare_as_counts(acc.record_paths, self.as_history, self.rare_threshold)
        for path in acc.record_paths:
            self.as_history.update(set(path))
        self.rows.append(c)

    def finish(self) -> tuple[int, np.ndarray]:
        """Close the open bin and return ``(start, n x 46 matrix)``."""
        if self._bin_start is None:
            raise ValueError("no data in range")
        if self._bin is not None:
            self._close_bin()
            self._bin = None
            self._bin_start += BIN_WIDTH
        return self.start, np.vstack(self.rows)


def bin_updates(records: Iterable[UpdateRecord], labels: EventLabelSpec | None = None,
                rare_threshold: int = 5, flap_mode: str = "duplicate",
                max_prefixes: int | None = None) -> FeatureSeries:
    ext = FeatureExtractor(rare_threshold, flap_mode, max_prefixes)
    ext.feed(records)
    start, values = ext.finish()
    labels = labels or EventLabelSpec()
    ts = start + BIN_WIDTH * np.arange(values.shape[0])
    return FeatureSeries(start, values, np.array([labels.label_at(int(t)) for t in ts]))


# --- CSV ---------------------------------------------------------------------


class FeatureCsvError(ValueError):
    pass


def _fmt(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 2**53 else repr(x)


def series_to_csv(series: FeatureSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp", *series.names, "label"])
    for t, row, lab in zip(series.timestamps, series.values, series.labels):
        w.writerow([int(t), *(_fmt(v) for v in row), int(lab)])
    return buf.getvalue()


def series_from_csv(text: str, names: Sequence[str] | None = FEATURE_NAMES) -> FeatureSeries:
    """Parse a feature CSV. ``names=None`` accepts any feature header."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FeatureCsvError("empty feature file")
    header = rows[0]
    if len(header) < 3 or header[0] != "timestamp" or header[-1] != "label":
        raise FeatureCsvError("header must start with 'timestamp' and end with 'label'")
    got = header[1:-1]
    if names is not None:
        names = tuple(names)
        for i, expected in enumerate(names):
            if i >= len(got):
                raise FeatureCsvError(f"missing column {expected!r} (got {len(got)} feature columns)")
            if got[i] != expected:
                raise FeatureCsvError(f"column {i + 2} is {got[i]!r}, expected {expected!r}")
        if len(got) != len(names):
            raise FeatureCsvError(f"unexpected extra column {got[len(names)]!r}")
    else:
        names = tuple(got)
    body = rows[1:]
    if not body:
        raise FeatureCsvError("feature file has no rows")
    ts = np.empty(len(body), dtype=np.int64)
    values = np.empty((len(body), len(names)))
    labels = np.empty(len(body), dtype=np.int64)
    for r, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise FeatureCsvError(f"row {r} has {len(row)} cells, expected {len(header)}")
        try:
            ts[r - 2] = int(row[0])
            labels[r - 2] = int(row[-1])
        except ValueError:
            raise FeatureCsvError(f"row {r}: timestamp/label must be integers") from None
        for c, cell in enumerate(row[1:-1]):
            try:
                v = float(cell)
            except ValueError:
                raise FeatureCsvError(f"row {r}, column {names[c]!r}: non-numeric value {cell!r}") from None
            if not math.isfinite(v):
                raise FeatureCsvError(f"row {r}, column {names[c]!r}: non-finite value {cell!r}")
            values[r - 2, c] = v
    width = int(ts[1] - ts[0]) if len(ts) > 1 else BIN_WIDTH
    if width <= 0 or np.any(np.diff(ts) != width):
        raise FeatureCsvError("timestamps are not contiguous bins")
    return FeatureSeries(int(ts[0]), values, labels, width, names)


def write_feature_csv(series: FeatureSeries, path: str | Path) -> None:
    atomic_write_text(path, series_to_csv(series))


def read_feature_csv(path: str | Path, names: Sequence[str] | None = FEATURE_NAMES) -> FeatureSeries:
    return series_from_csv(Path(path).read_text(encoding="utf-8"), names)
