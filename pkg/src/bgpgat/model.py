"""Multi-view graph attention + LSTM window classifier.

One window of shape (m, C) goes through

* a feature-view GAT whose nodes are the C channels (each an m-vector),
* a temporal-view GAT whose nodes are the m timestamps (each a C-vector),
* channel-wise fusion ``[w0 * h_feat, w1 * x, w2 * h_time]`` -> (m, 3C),
* dropout (training only), an LSTM over the m steps, and a linear head on
  the final hidden state.

Every function accepts a leading batch axis.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .artifacts import atomic_write_text, config_hash
from .tensor import Tensor

CHECKPOINT_FORMAT = "bgpgat-checkpoint"
CHECKPOINT_VERSION = 1
GATES = ("f", "i", "o", "c")


@dataclass(frozen=True)
class ModelConfig:
    window: int = 25
    channels: int = 230
    hidden: int = 64
    classes: int = 2
    fusion_weights: tuple[float, float, float] = (0.5, 1.0, 0.5)
    activation: str = "tanh"
    leaky_slope: float = 0.2
    leaky_mode: str = "slope"
    cell_activation: str = "tanh"
    dropout: float = 0.2
    feature_gat: bool = True
    temporal_gat: bool = True

    def __post_init__(self):
        object.__setattr__(self, "fusion_weights", tuple(float(w) for w in self.fusion_weights))
        if len(self.fusion_weights) != 3:
            raise ValueError("fusion_weights needs three entries")
        if self.activation not in T.ACTIVATIONS:
            raise ValueError(f"unknown GAT activation {self.activation!r}")
        if self.cell_activation not in ("tanh", "identity"):
            raise ValueError(f"unknown cell activation {self.cell_activation!r}")
        if min(self.window, self.channels, self.hidden) < 1 or self.classes < 2:
            raise ValueError("window, channels, hidden must be >= 1 and classes >= 2")

    @property
    def lstm_input(self) -> int:
        return 3 * self.channels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion_weights"] = list(self.fusion_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{**d, "fusion_weights": tuple(d["fusion_weights"])})


@dataclass
class GatLayerParams:
    W: Tensor  # F_out x F_in
    a: Tensor  # 2 * F_out


@dataclass
class MGatParams:
    config: ModelConfig
    arrays: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.arrays[name]

    def names(self) -> list[str]:
        return list(self.arrays)

    def gat(self, view: str) -> GatLayerParams:
        return GatLayerParams(self.arrays[f"{view}.W"], self.arrays[f"{view}.a"])

    def copy(self) -> "MGatParams":
        return MGatParams(self.config, {k: Tensor(v.data.copy(), requires_grad=True, name=k)
                                        for k, v in self.arrays.items()})

    def zero_grad(self) -> None:
        for t in self.arrays.values():
            t.grad = None

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.arrays.values()))

    def equals(self, other: "MGatParams") -> bool:
        return (self.config == other.config and self.arrays.keys() == other.arrays.keys()
                and all(np.array_equal(v.data, other.arrays[k].data) for k, v in self.arrays.items()))


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_out, fan_in = (shape[0], shape[1]) if len(shape) == 2 else (1, shape[0])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> MGatParams:
    arrays: dict[str, np.ndarray] = {}
    m, c, h = cfg.window, cfg.channels, cfg.hidden
    if cfg.feature_gat:
        arrays["feature_gat.W"] = _glorot(rng, (m, m))
        arrays["feature_gat.a"] = _glorot(rng, (2 * m,))
    if cfg.temporal_gat:
        arrays["temporal_gat.W"] = _glorot(rng, (c, c))
        arrays["temporal_gat.a"] = _glorot(rng, (2 * c,))
    for g in GATES:
        arrays[f"lstm.W_{g}"] = _glorot(rng, (h, cfg.lstm_input))
    for g in GATES:
        arrays[f"lstm.U_{g}"] = _glorot(rng, (h, h))
    for g in GATES:
        arrays[f"lstm.b_{g}"] = np.ones(h) if g == "f" else np.zeros(h)
    arrays["head.W"] = _glorot(rng, (cfg.classes, h))
    arrays["head.b"] = np.zeros(cfg.classes)
    return MGatParams(cfg, {k: Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()})


# --- layers ------------------------------------------------------------------


def gat_forward(nodes, layer: GatLayerParams, activation: str = "tanh",
                leaky_slope: float = 0.2, leaky_mode: str = "slope") -> tuple[Tensor, np.ndarray]:
    """Single-head attention over a fully connected graph with self-loops.

    ``nodes`` is (N, F) or (B, N, F). Returns the updated nodes and the
    attention matrix alpha (rows are the attending node i, columns j).
    """
    nodes = T.as_tensor(nodes)
    f_out, f_in = layer.W.shape
    if nodes.shape[-1] != f_in or layer.a.shape != (2 * f_out,):
        raise ValueError(f"GAT shape mismatch: nodes {nodes.shape}, W {layer.W.shape}, a {layer.a.shape}")
    wh = T.matmul(nodes, T.transpose(layer.W))
    a_self = T.reshape(T.getitem(layer.a, slice(0, f_out)), (f_out, 1))
    a_other = T.reshape(T.getitem(layer.a, slice(f_out, 2 * f_out)), (f_out, 1))
    score_i = T.matmul(wh, a_self)
    score_j = T.matmul(wh, a_other)
    e = T.leaky_relu(T.add(score_i, T.transpose(score_j)), leaky_slope, leaky_mode)
    alpha = T.row_softmax(e)
    out = T.ACTIVATIONS[activation](T.matmul(alpha, wh))
    return out, alpha.data


def feature_view(x, layer: GatLayerParams, **kw) -> tuple[Tensor, np.ndarray]:
    """Channels as nodes: (.., m, C) -> (.., m, C)."""
    out, alpha = gat_forward(T.transpose(T.as_tensor(x)), layer, **kw)
    return T.transpose(out), alpha


def temporal_view(x, layer: GatLayerParams, **kw) -> tuple[Tensor, np.ndarray]:
    """Timestamps as nodes: (.., m, C) -> (.., m, C)."""
    return gat_forward(x, layer, **kw)


def fuse(h_feat, x, h_time, weights=(0.5, 1.0, 0.5)) -> Tensor:
    shapes = {T.as_tensor(t).shape for t in (h_feat, x, h_time)}
    if len(shapes) != 1:
        raise ValueError(f"fuse needs equal shapes, got {shapes}")
    w0, w1, w2 = weights
    return T.concat([T.scale(h_feat, w0), T.scale(x, w1), T.scale(h_time, w2)], axis=-1)


def lstm_forward(seq, params: MGatParams) -> Tensor:
    """Run the gates over ``seq`` (B, m, D) from zero state; return the last hidden state (B, H)."""
    seq = T.as_tensor(seq)
    if seq.ndim == 2:
        seq = T.reshape(seq, (1,) + seq.shape)
    cfg = params.config
    h_dim = params["lstm.U_f"].shape[0]
    if seq.shape[-1] != params["lstm.W_f"].shape[1]:
        raise ValueError(f"LSTM input width {seq.shape[-1]} != {params['lstm.W_f'].shape[1]}")
    w_all = T.concat([params[f"lstm.W_{g}"] for g in GATES], axis=0)
    u_all = T.concat([params[f"lstm.U_{g}"] for g in GATES], axis=0)
    b_all = T.concat([params[f"lstm.b_{g}"] for g in GATES], axis=0)
    z_in = T.add(T.matmul(seq, T.transpose(w_all)), b_all)  # (B, m, 4H)
    u_t = T.transpose(u_all)
    batch, steps = seq.shape[0], seq.shape[1]
    h = Tensor(np.zeros((batch, h_dim)))
    c = Tensor(np.zeros((batch, h_dim)))
    cell_act = T.tanh if cfg.cell_activation == "tanh" else (lambda v: v)
    for t in range(steps):
        z = T.add(T.getitem(z_in, (slice(None), t, slice(None))), T.matmul(h, u_t))
        f = T.sigmoid(T.getitem(z, (slice(None), slice(0, h_dim))))
        i = T.sigmoid(T.getitem(z, (slice(None), slice(h_dim, 2 * h_dim))))
        o = T.sigmoid(T.getitem(z, (slice(None), slice(2 * h_dim, 3 * h_dim))))
        c_hat = T.tanh(T.getitem(z, (slice(None), slice(3 * h_dim, 4 * h_dim))))
        c = T.add(T.mul(f, c), T.mul(i, c_hat))
        h = T.mul(o, cell_act(c))
    return h


@dataclass
class ForwardResult:
    logits: Tensor
    feature_attention: np.ndarray | None
    temporal_attention: np.ndarray | None


def model_forward(windows, params: MGatParams, mode: str = "eval",
                  rng: np.random.Generator | None = None) -> ForwardResult:
    """Logits (B, C) for windows (B, m, C_in); a single (m, C_in) window gets B = 1."""
    cfg = params.config
    x = T.as_tensor(windows)
    if x.ndim == 2:
        x = T.reshape(x, (1,) + x.shape)
    if x.shape[1:] != (cfg.window, cfg.channels):
        raise ValueError(f"input stage: window shape {x.shape[1:]} does not match "
                         f"configured (m={cfg.window}, channels={cfg.channels})")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    kw = dict(activation=cfg.activation, leaky_slope=cfg.leaky_slope, leaky_mode=cfg.leaky_mode)
    zeros = Tensor(np.zeros(x.shape))
    alpha_f = alpha_t = None
    if cfg.feature_gat:
        h_feat, alpha_f = feature_view(x, params.gat("feature_gat"), **kw)
    else:
        h_feat = zeros
    if cfg.temporal_gat:
        h_time, alpha_t = temporal_view(x, params.gat("temporal_gat"), **kw)
    else:
        h_time = zeros
    fused = fuse(h_feat, x, h_time, cfg.fusion_weights)
    if mode == "train" and cfg.dropout > 0:
        if rng is None:
            raise ValueError("dropout stage: training mode needs an rng")
        fused = T.mul(fused, T.dropout_mask(fused.shape, cfg.dropout, rng, training=True))
    h_last = lstm_forward(fused, params)
    logits = T.add(T.matmul(h_last, T.transpose(params["head.W"])), params["head.b"])
    return ForwardResult(logits, alpha_f, alpha_t)


def weighted_ce_loss(logits, y, class_weights) -> Tensor:
    """Mean over the batch of ``w[y] * (logsumexp(logits) - logits[y])``."""
    logits = T.as_tensor(logits)
    if logits.ndim == 1:
        logits = T.reshape(logits, (1, logits.shape[0]))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    w = np.asarray(class_weights, dtype=np.float64)
    n_cls = logits.shape[1]
    if y.shape[0] != logits.shape[0]:
        raise ValueError("one label per row of logits required")
    if np.any(y < 0) or np.any(y >= n_cls):
        raise ValueError(f"labels must lie in [0, {n_cls}), got {y}")
    if w.shape != (n_cls,) or np.any(w <= 0):
        raise ValueError("class weights must be positive, one per class")
    per_sample = T.sub(T.logsumexp(logits), T.pick(logits, y))
    return T.mean(T.mul(per_sample, w[y]))


# --- checkpoints -------------------------------------------------------------


class CheckpointError(ValueError):
    pass


def checkpoint_dict(params: MGatParams, extra: dict | None = None) -> dict:
    cfg = params.config.to_dict()
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "arrays": {k: {"shape": list(v.shape), "data": [float(x) for x in v.data.ravel()]}
                   for k, v in params.arrays.items()},
        "extra": extra or {},
    }


def save_checkpoint(params: MGatParams, path: str | Path, extra: dict | None = None) -> None:
    atomic_write_text(path, json.dumps(checkpoint_dict(params, extra), indent=1) + "\n")


def _expected_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    m, c, h = cfg.window, cfg.channels, cfg.hidden
    shapes = {}
    if cfg.feature_gat:
        shapes["feature_gat.W"] = (m, m)
        shapes["feature_gat.a"] = (2 * m,)
    if cfg.temporal_gat:
        shapes["temporal_gat.W"] = (c, c)
        shapes["temporal_gat.a"] = (2 * c,)
    for g in GATES:
        shapes[f"lstm.W_{g}"] = (h, cfg.lstm_input)
    for g in GATES:
        shapes[f"lstm.U_{g}"] = (h, h)
    for g in GATES:
        shapes[f"lstm.b_{g}"] = (h,)
    shapes["head.W"] = (cfg.classes, h)
    shapes["head.b"] = (cfg.classes,)
    return shapes


def params_from_dict(doc: dict) -> tuple[MGatParams, dict]:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"not a checkpoint (format={doc.get('format')!r})")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}, "
                              f"expected {CHECKPOINT_VERSION}")
    try:
        cfg = ModelConfig.from_dict(doc["config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"bad config block: {exc}") from None
    if doc.get("config_hash") != config_hash(cfg.to_dict()):
        raise CheckpointError("config hash does not match config block")
    expected = _expected_shapes(cfg)
    arrays = doc.get("arrays", {})
    if set(arrays) != set(expected):
        raise CheckpointError(f"parameter names differ from config: "
                              f"missing {sorted(set(expected) - set(arrays))}, "
                              f"unexpected {sorted(set(arrays) - set(expected))}")
    out = {}
    for name, shape in expected.items():
        entry = arrays[name]
        if tuple(entry["shape"]) != shape:
            raise CheckpointError(f"{name}: declared shape {entry['shape']} != expected {list(shape)}")
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != int(np.prod(shape)):
            raise CheckpointError(f"{name}: {data.size} values for shape {list(shape)}")
        out[name] = Tensor(data.reshape(shape), requires_grad=True, name=name)
    return MGatParams(cfg, out), doc.get("extra", {})


def load_checkpoint(path: str | Path) -> tuple[MGatParams, dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from None
    return params_from_dict(doc)
