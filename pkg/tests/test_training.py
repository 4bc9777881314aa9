import numpy as np
import pytest

from bgpgat.augment import WindowSet
from bgpgat.model import ModelConfig, init_params
from bgpgat.training import (Adam, SplitConfig, TrainConfig, TrainingDiverged, class_weights_for,
                             evaluate, split, split_indices, train)


def _windows(labels, m=3, c=2, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    x = rng.random((len(labels), m, c)) * 0.2
    x[labels > 0, :, 0] += 0.8  # anomalies spike channel 0
    return WindowSet(x, labels, np.arange(len(labels)))


def test_split_single_class_sizes():
    tr, va, te = split_indices(np.zeros(100, int), SplitConfig(seed=1))
    assert (len(tr), len(va), len(te)) == (60, 10, 30)


def test_split_stratified_sizes():
    y = np.array([0] * 50 + [1] * 50)
    parts = split_indices(y, SplitConfig(seed=3))
    assert [(int((y[p] == 0).sum()), int((y[p] == 1).sum())) for p in parts] == [(30, 30), (5, 5), (15, 15)]


def test_split_remainder_goes_train_val_test():
    tr, va, te = split_indices(np.zeros(13, int), SplitConfig())
    # floors 7 / 1 / 3, leftovers to train then val
    assert (len(tr), len(va), len(te)) == (8, 2, 3)


def test_split_deterministic_disjoint_and_covering():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 3, 300)
    a = split_indices(y, SplitConfig(seed=5))
    b = split_indices(y, SplitConfig(seed=5))
    assert all(np.array_equal(p, q) for p, q in zip(a, b))
    joined = np.concatenate(a)
    assert len(joined) == len(set(joined.tolist())) == 300
    c = split_indices(y, SplitConfig(seed=6))
    assert not np.array_equal(a[0], c[0])


def test_split_requires_ten_per_class():
    with pytest.raises(ValueError, match="class 1"):
        split_indices(np.array([0] * 20 + [1] * 9), SplitConfig())


def test_chronological_split_is_contiguous():
    w = _windows([0] * 20)
    tr, va, te = split(w, SplitConfig(chronological=True, stratified=False))
    assert list(tr.starts) == list(range(12)) and list(te.starts) == list(range(14, 20))


def test_config_validation():
    with pytest.raises(ValueError):
        SplitConfig(ratios=(6, 0, 3))
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=-1)
    d = TrainConfig()
    assert (d.lr, d.dropout, d.epochs, d.beta1, d.beta2, d.eps, d.batch_size, d.patience) == \
        (1e-4, 0.2, 100, 0.9, 0.999, 1e-8, 32, 10)


def test_inverse_class_weights():
    w = class_weights_for(np.array([0, 0, 0, 1]), 2, "inverse")
    assert np.allclose(w, [4 / 6, 4 / 2])
    assert np.allclose(class_weights_for(np.array([0, 1]), 3, "inverse"), [1, 1, 1])


def test_adam_first_step_moves_by_lr():
    cfg = ModelConfig(window=2, channels=1, hidden=1)
    p = init_params(cfg, np.random.default_rng(0))
    before = p.copy()
    for t in p.arrays.values():
        t.grad = np.full(t.shape, 3.0)
    Adam(p, lr=0.01).step()
    for k, t in p.arrays.items():
        assert np.allclose(before[k].data - t.data, 0.01, atol=1e-9)


def _small_cfg(**kw):
    return ModelConfig(window=3, channels=2, hidden=4, **kw)


def test_separable_windows_reach_perfect_val_f1():
    labels = [0] * 150 + [1] * 50
    w = _windows(labels, seed=1)
    tr, va, te = split(w, SplitConfig(seed=0))
    res = train(tr, va, _small_cfg(), TrainConfig(lr=1e-2, epochs=30, seed=0, batch_size=8))
    assert max(h["val_f1"] for h in res.log) == 1.0
    assert len(res.log) <= 30
    cm, report = evaluate(res.params, te)
    assert report.f1 >= 0.9 and cm.total == len(te)


def test_zero_learning_rate_changes_nothing():
    w = _windows([0] * 30 + [1] * 10)
    tr, va, _ = split(w, SplitConfig(seed=0))
    cfg = TrainConfig(lr=0.0, epochs=3, dropout=0.0, seed=2, batch_size=64)
    res = train(tr, va, _small_cfg(dropout=0.0), cfg)
    start = init_params(_small_cfg(dropout=0.0), np.random.default_rng(2))
    assert res.params.equals(start)
    losses = [h["train_loss"] for h in res.log]
    assert max(losses) - min(losses) < 1e-12


def test_training_is_deterministic():
    w = _windows([0] * 30 + [1] * 10)
    tr, va, te = split(w, SplitConfig(seed=0))
    cfg = TrainConfig(lr=1e-2, epochs=4, seed=9, batch_size=8)
    a = train(tr, va, _small_cfg(), cfg)
    b = train(tr, va, _small_cfg(), cfg)
    assert a.log == b.log and a.params.equals(b.params)
    assert evaluate(a.params, te)[1] == evaluate(b.params, te)[1]


def test_early_stopping_and_best_restore():
    w = _windows([0] * 30 + [1] * 10)
    tr, va, _ = split(w, SplitConfig(seed=0))
    res = train(tr, va, _small_cfg(), TrainConfig(lr=1e-2, epochs=50, patience=2, seed=0))
    f1s = [h["val_f1"] for h in res.log]
    assert res.best_epoch == int(np.argmax(f1s)) + 1
    assert len(res.log) <= res.best_epoch + 2


def test_divergence_aborts_with_epoch():
    w = _windows([0] * 30 + [1] * 10)
    w.x[0, 0, 0] = np.nan
    tr, va, _ = split(w, SplitConfig(seed=0))
    w_tr = WindowSet.concat([tr, w.subset([0])])
    with pytest.raises(TrainingDiverged, match="epoch 1"):
        train(w_tr, va, _small_cfg(), TrainConfig(epochs=2))


def test_train_input_validation():
    w = _windows([0] * 10)
    with pytest.raises(ValueError):
        train(w.subset([]), w, _small_cfg(), TrainConfig())
    with pytest.raises(ValueError, match="do not match"):
        train(w, w, ModelConfig(window=4, channels=2, hidden=2), TrainConfig())
