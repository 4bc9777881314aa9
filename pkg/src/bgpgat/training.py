"""Dataset splitting, the optimisation loop and evaluation."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .augment import WindowSet
from .metrics import ConfusionMatrix, EvalReport, build_report, metrics
from .model import MGatParams, ModelConfig, init_params, model_forward, weighted_ce_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplitConfig:
    ratios: tuple[float, float, float] = (6.0, 1.0, 3.0)
    stratified: bool = True
    chronological: bool = False
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3 or min(self.ratios) <= 0:
            raise ValueError(f"split ratios must be three positive numbers, got {self.ratios}")

    @property
    def fractions(self) -> np.ndarray:
        r = np.asarray(self.ratios, dtype=np.float64)
        return r / r.sum()


def _partition(n: int, fractions: np.ndarray) -> list[int]:
    sizes = [int(np.floor(n * f + 1e-9)) for f in fractions]
    # leftovers go train -> val -> test
    i = 0
    while sum(sizes) < n:
        sizes[i % 3] += 1
        i += 1
    return sizes


def split_indices(y: np.ndarray, cfg: SplitConfig = SplitConfig(),
                  order: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index arrays of the train / validation / test partition.

    Stratified mode splits every class separately after a seeded shuffle.
    Chronological mode keeps ``order`` (default: input order) and cuts it
    into three contiguous blocks.
    """
    y = np.asarray(y)
    frac = cfg.fractions
    if cfg.chronological:
        idx = np.arange(len(y)) if order is None else np.asarray(order)
        a, b, _ = _partition(len(idx), frac)
        return idx[:a], idx[a:a + b], idx[a + b:]
    rng = np.random.default_rng(cfg.seed)
    groups = [np.flatnonzero(y == c) for c in np.unique(y)] if cfg.stratified else [np.arange(len(y))]
    parts: list[list[np.ndarray]] = [[], [], []]
    for members in groups:
        if cfg.stratified and len(members) < 10:
            raise ValueError(f"class {int(y[members[0]])} has only {len(members)} windows; "
                             "stratified splitting needs at least 10")
        members = rng.permutation(members)
        a, b, _ = _partition(len(members), frac)
        parts[0].append(members[:a])
        parts[1].append(members[a:a + b])
        parts[2].append(members[a + b:])
    return tuple(np.sort(np.concatenate(p)) if p else np.array([], dtype=np.int64) for p in parts)


def split(windows: WindowSet, cfg: SplitConfig = SplitConfig()) -> tuple[WindowSet, WindowSet, WindowSet]:
    order = np.lexsort((windows.starts, windows.group))
    tr, va, te = split_indices(windows.y, cfg, order)
    return windows.subset(tr), windows.subset(va), windows.subset(te)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    dropout: float = 0.2
    epochs: int = 100
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    patience: int = 10
    class_weights: str | tuple[float, ...] = "inverse"
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        if not isinstance(self.class_weights, str):
            d["class_weights"] = list(self.class_weights)
        return d


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite in epoch {epoch}")
        self.epoch = epoch


def class_weights_for(y: np.ndarray, classes: int, mode) -> np.ndarray:
    if not isinstance(mode, str):
        w = np.asarray(mode, dtype=np.float64)
        if w.shape != (classes,):
            raise ValueError(f"need {classes} class weights, got {w.shape}")
        return w
    if mode == "uniform":
        return np.ones(classes)
    if mode == "inverse":
        counts = np.bincount(np.asarray(y, dtype=np.int64), minlength=classes).astype(np.float64)
        present = counts > 0
        w = np.ones(classes)
        w[present] = counts[present].sum() / (present.sum() * counts[present])
        return w
    raise ValueError(f"unknown class weight mode {mode!r}")


class Adam:
    def __init__(self, params: MGatParams, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v.data) for k, v in params.arrays.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.arrays.items()}
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.arrays.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class SGD:
    def __init__(self, params: MGatParams, lr: float):
        self.params, self.lr = params, lr

    def step(self) -> None:
        for p in self.params.arrays.values():
            if p.grad is not None:
                p.data -= self.lr * p.grad


def predict(params: MGatParams, windows: WindowSet | np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits for every window, (N, classes)."""
    x = windows.x if isinstance(windows, WindowSet) else np.asarray(windows)
    out = [model_forward(x[i:i + batch_size], params, "eval").logits.data
           for i in range(0, x.shape[0], batch_size)]
    return np.concatenate(out) if out else np.zeros((0, params.config.classes))


def selection_score(params: MGatParams, windows: WindowSet) -> dict[str, float]:
    pred = predict(params, windows).argmax(axis=1)
    cm = ConfusionMatrix.from_predictions(windows.y, pred, params.config.classes)
    return metrics(cm)


@dataclass
class TrainResult:
    params: MGatParams
    log: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    class_weights: list[float] = field(default_factory=list)


def train(train_set: WindowSet, val_set: WindowSet, model_cfg: ModelConfig,
          cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Minimise the class-weighted cross entropy with minibatches.

    Returns the parameters of the epoch with the best validation F1 (the
    first such epoch on ties); stops after ``patience`` epochs without
    improvement.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if train_set.x.shape[1:] != (model_cfg.window, model_cfg.channels):
        raise ValueError(f"windows {train_set.x.shape[1:]} do not match model "
                         f"(m={model_cfg.window}, channels={model_cfg.channels})")
    if np.any(train_set.y >= model_cfg.classes) or np.any(val_set.y >= model_cfg.classes):
        raise ValueError(f"labels exceed the configured {model_cfg.classes} classes")
    if model_cfg.dropout != cfg.dropout:
        model_cfg = ModelConfig(**{**model_cfg.to_dict(), "dropout": cfg.dropout,
                                   "fusion_weights": model_cfg.fusion_weights})
    rng = np.random.default_rng(cfg.seed)
    params = init_params(model_cfg, rng)
    weights = class_weights_for(train_set.y, model_cfg.classes, cfg.class_weights)
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps) if cfg.optimizer == "adam" \
        else SGD(params, cfg.lr)

    best = params.copy()
    best_f1, best_epoch, stale = -1.0, 0, 0
    history = []
    n = len(train_set)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            params.zero_grad()
            with T.Tape() as tape:
                out = model_forward(train_set.x[idx], params, "train", rng)
                loss = weighted_ce_loss(out.logits, train_set.y[idx], weights)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(epoch)
            tape.backward(loss)
            opt.step()
            total += value * len(idx)
        val = selection_score(params, val_set)
        history.append({"epoch": epoch, "train_loss": total / n, "val_f1": val["f1"],
                        "val_accuracy": val["accuracy"]})
        log.info("epoch %d loss %.6f val_f1 %.4f", epoch, total / n, val["f1"])
        if val["f1"] > best_f1:
            best_f1, best_epoch, stale = val["f1"], epoch, 0
            best = params.copy()
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return TrainResult(best, history, best_epoch, weights.tolist())


def evaluate(params: MGatParams, test_set: WindowSet, config_hash: str = "",
             seed: int = 0) -> tuple[ConfusionMatrix, EvalReport]:
    if len(test_set) == 0:
        raise ValueError("empty test set")
    pred = predict(params, test_set).argmax(axis=1)
    return build_report(test_set.y, pred, params.config.classes, test_set.events, config_hash, seed)
