"""End-to-end runs: pipeline, ablation, sweep, multi-class, held-out event, attention export."""
from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .artifacts import config_hash
from .augment import (COMPONENTS, NormalizerStats, WindowSet, augment_series, fit_normalizer,
                      slice_windows)
from .features import FeatureSeries
from .metrics import ConfusionMatrix, EvalReport
from .model import MGatParams, ModelConfig, model_forward
from .stl import StlConfig
from .training import SplitConfig, TrainConfig, TrainResult, evaluate, split, train

ARMS = ("temporal_gat", "feature_gat", "stl", "window")


@dataclass(frozen=True)
class ExperimentConfig:
    period: int = 35
    window: int = 25
    stl: bool = True
    feature_gat: bool = True
    temporal_gat: bool = True
    hidden: int = 64
    fusion_weights: tuple[float, float, float] = (0.5, 1.0, 0.5)
    activation: str = "tanh"
    binary: bool = True
    split: SplitConfig = field(default_factory=SplitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion_weights"] = list(self.fusion_weights)
        d["split"]["ratios"] = list(self.split.ratios)
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        split_cfg = dict(d.pop("split"))
        split_cfg["ratios"] = tuple(split_cfg["ratios"])
        train_cfg = dict(d.pop("train"))
        if not isinstance(train_cfg["class_weights"], str):
            train_cfg["class_weights"] = tuple(train_cfg["class_weights"])
        d["fusion_weights"] = tuple(d["fusion_weights"])
        return cls(**d, split=SplitConfig(**split_cfg), train=TrainConfig(**train_cfg))

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    def with_arms(self, arms: Iterable[str]) -> "ExperimentConfig":
        arms = set(arms)
        unknown = arms - set(ARMS)
        if unknown:
            raise ValueError(f"unknown ablation arms {sorted(unknown)}; choose from {ARMS}")
        return replace(self, stl="stl" in arms, feature_gat="feature_gat" in arms,
                       temporal_gat="temporal_gat" in arms,
                       window=self.window if "window" in arms else 1)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    report: EvalReport
    confusion: ConfusionMatrix
    training: TrainResult
    test: WindowSet
    stats: NormalizerStats | None = None

    @property
    def params(self) -> MGatParams:
        return self.training.params


def prepare_windows(series: Sequence[FeatureSeries], cfg: ExperimentConfig) -> WindowSet:
    """Augment and slice every series; windows remember their source via ``group``."""
    comps = COMPONENTS if cfg.stl else ("obs",)
    stl_cfg = StlConfig(period=cfg.period)
    sets = []
    for g, s in enumerate(series):
        aug = augment_series(s, stl_cfg, comps)
        w, _ = slice_windows(aug.values, aug.labels, cfg.window, names=aug.names)
        w.group = np.full(len(w), g, dtype=np.int64)
        sets.append(w)
    return WindowSet.concat(sets)


def _targets(windows: WindowSet, binary: bool) -> WindowSet:
    return windows.binary() if binary else windows


def model_config_for(cfg: ExperimentConfig, channels: int, classes: int) -> ModelConfig:
    return ModelConfig(window=cfg.window, channels=channels, hidden=cfg.hidden, classes=classes,
                       fusion_weights=tuple(cfg.fusion_weights), activation=cfg.activation,
                       dropout=cfg.train.dropout, feature_gat=cfg.feature_gat,
                       temporal_gat=cfg.temporal_gat)


def fit_and_evaluate(train_set: WindowSet, val_set: WindowSet, test_set: WindowSet,
                     cfg: ExperimentConfig, classes: int) -> ExperimentResult:
    """Fit min-max stats on training rows, train, evaluate on the test set."""
    stats = fit_normalizer(train_set.x.reshape(-1, train_set.x.shape[2]))
    tr, va, te = (s.normalized(stats) for s in (train_set, val_set, test_set))
    mcfg = model_config_for(cfg, tr.x.shape[2], classes)
    result = train(tr, va, mcfg, cfg.train)
    cm, report = evaluate(result.params, te, cfg.hash, cfg.train.seed)
    return ExperimentResult(cfg, report, cm, result, te, stats)


def split_targets(series: Sequence[FeatureSeries], cfg: ExperimentConfig
                  ) -> tuple[WindowSet, WindowSet, WindowSet]:
    return split(_targets(prepare_windows(series, cfg), cfg.binary), cfg.split)


def run_experiment(series: Sequence[FeatureSeries], cfg: ExperimentConfig,
                   classes: int | None = None) -> ExperimentResult:
    tr, va, te = split_targets(series, cfg)
    if classes is None:
        classes = 2 if cfg.binary else int(max(tr.y.max(), va.y.max(), te.y.max())) + 1
    return fit_and_evaluate(tr, va, te, cfg, classes)


def _pool_map(fn, jobs: list, n_jobs: int) -> list:
    if n_jobs <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, *zip(*jobs)))


def _summary(series, cfg) -> dict:
    r = run_experiment(series, cfg)
    return {"accuracy": r.report.accuracy, "precision": r.report.precision,
            "recall": r.report.recall, "f1": r.report.f1, "channels": r.test.x.shape[2],
            "window": cfg.window}


def ablate(series: Sequence[FeatureSeries], arm_sets: Sequence[Iterable[str]],
           base: ExperimentConfig = ExperimentConfig(), jobs: int = 1) -> list[dict]:
    """One train/evaluate run per requested arm set."""
    arm_sets = [tuple(sorted(set(a))) for a in arm_sets]
    cfgs = [base.with_arms(a) for a in arm_sets]
    rows = _pool_map(_summary, [(series, c) for c in cfgs], jobs)
    return [{"arms": "+".join(a) or "none", **r} for a, r in zip(arm_sets, rows)]


def all_arm_sets() -> list[tuple[str, ...]]:
    return [c for r in range(len(ARMS) + 1) for c in itertools.combinations(ARMS, r)]


def sweep(series: Sequence[FeatureSeries], windows: Sequence[int], periods: Sequence[int],
          base: ExperimentConfig = ExperimentConfig(), jobs: int = 1) -> list[dict]:
    """Accuracy over the (window, period) grid."""
    n_min = min(len(s) for s in series)
    for p in periods:
        if n_min < 2 * p:
            raise ValueError(f"series of length {n_min} too short for period {p}")
    grid = list(itertools.product(windows, periods))
    cfgs = [replace(base, window=m, period=p) for m, p in grid]
    rows = _pool_map(_summary, [(series, c) for c in cfgs], jobs)
    return [{"window": m, "period": p, "accuracy": r["accuracy"], "f1": r["f1"]}
            for (m, p), r in zip(grid, rows)]


def rows_to_csv(rows: Sequence[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def check_event_lengths(series: Sequence[FeatureSeries], samples: int,
                        names: Sequence[str] | None = None) -> None:
    for i, s in enumerate(series):
        label = names[i] if names else f"event {i + 1}"
        if len(s) < samples:
            raise ValueError(f"{label}: needs {samples} samples, has {len(s)}")
        if not (s.labels > 0).any():
            raise ValueError(f"{label}: no anomalous samples")


def centred_slice(s: FeatureSeries, samples: int) -> FeatureSeries:
    """``samples`` consecutive rows centred on the anomaly."""
    idx = np.flatnonzero(s.labels > 0)
    mid = (idx[0] + idx[-1]) // 2
    lo = int(np.clip(mid - samples // 2, 0, len(s) - samples))
    return FeatureSeries(s.start + lo * s.bin_width, s.values[lo:lo + samples],
                         s.labels[lo:lo + samples], s.bin_width, s.names)


def multiclass_run(series: Sequence[FeatureSeries], base: ExperimentConfig = ExperimentConfig(),
                   samples: int = 600, names: Sequence[str] | None = None) -> ExperimentResult:
    """Normal plus one class per event; event ``i`` (0-based) becomes class ``i + 1``."""
    check_event_lengths(series, samples, names)
    relabelled = []
    for i, s in enumerate(series):
        s = centred_slice(s, samples)
        relabelled.append(FeatureSeries(s.start, s.values, np.where(s.labels > 0, i + 1, 0),
                                        s.bin_width, s.names))
    cfg = replace(base, binary=False)
    return run_experiment(relabelled, cfg, classes=len(series) + 1)


def holdout_event_run(series: Sequence[FeatureSeries], held_out: int,
                      base: ExperimentConfig = ExperimentConfig(),
                      samples: int = 600) -> ExperimentResult:
    """Binary training on every event but ``held_out``; test on all of its windows."""
    if not 0 <= held_out < len(series):
        raise ValueError(f"held-out index {held_out} outside 0..{len(series) - 1}")
    check_event_lengths(series, samples)
    cfg = replace(base, binary=True)
    sliced = [centred_slice(s, samples) for s in series]
    seen = [s for i, s in enumerate(sliced) if i != held_out]
    pool = _targets(prepare_windows(seen, cfg), True)
    tr, va, _ = split(pool, cfg.split)
    test = _targets(prepare_windows([sliced[held_out]], cfg), True)
    return fit_and_evaluate(tr, va, test, cfg, 2)


def holdout_all(series: Sequence[FeatureSeries], base: ExperimentConfig = ExperimentConfig(),
                samples: int = 600, jobs: int = 1) -> list[dict]:
    def job(i):
        return (series, i, base, samples)
    results = _pool_map(_holdout_summary, [job(i) for i in range(len(series))], jobs)
    return [{"held_out": i + 1, **r} for i, r in enumerate(results)]


def _holdout_summary(series, i, base, samples) -> dict:
    r = holdout_event_run(series, i, base, samples)
    return {"accuracy": r.report.accuracy, "precision": r.report.precision,
            "recall": r.report.recall, "f1": r.report.f1}


# --- attention graphs ----------------------------------------------------------

def mean_attention(params: MGatParams, windows: WindowSet | np.ndarray,
                   batch_size: int = 256) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Attention matrices of both views averaged over all windows."""
    x = windows.x if isinstance(windows, WindowSet) else np.asarray(windows)
    if x.shape[0] == 0:
        raise ValueError("no windows to average attention over")
    sums = [None, None]
    for i in range(0, x.shape[0], batch_size):
        out = model_forward(x[i:i + batch_size], params, "eval")
        for j, a in enumerate((out.feature_attention, out.temporal_attention)):
            if a is not None:
                s = a.sum(axis=0)
                sums[j] = s if sums[j] is None else sums[j] + s
    return tuple(None if s is None else s / x.shape[0] for s in sums)


def attention_edges(alpha: np.ndarray, names: Sequence[str], threshold: float) -> list[tuple]:
    """(src, dst, weight) for every entry strictly above ``threshold``; src is the row node."""
    rows, cols = np.nonzero(alpha > threshold)
    return [(names[r], names[c], float(alpha[r, c])) for r, c in zip(rows, cols)]


def export_attention_graph(params: MGatParams, windows: WindowSet, feature_threshold: float = 0.3,
                           temporal_threshold: float = 0.2,
                           channel_names: Sequence[str] | None = None) -> dict[str, list[tuple]]:
    a_feat, a_time = mean_attention(params, windows)
    cfg = params.config
    names = list(channel_names or windows.names or [f"c{i}" for i in range(cfg.channels)])
    steps = [f"t{i}" for i in range(cfg.window)]
    return {
        "feature": [] if a_feat is None else attention_edges(a_feat, names, feature_threshold),
        "temporal": [] if a_time is None else attention_edges(a_time, steps, temporal_threshold),
    }


def edges_to_csv(edges: Sequence[tuple]) -> str:
    lines = ["src,dst,weight"] + [f"{s},{d},{w!r}" for s, d, w in edges]
    return "\n".join(lines) + "\n"
