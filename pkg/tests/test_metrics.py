import numpy as np
import pytest

from bgpgat.metrics import ConfusionMatrix, build_report, metrics, metrics_from_counts


def brute_force(y_true, y_pred, classes):
    """Count every (true, predicted) pair by hand and apply the textbook ratios."""
    counts = [[0] * classes for _ in range(classes)]
    for t, p in zip(y_true, y_pred):
        counts[t][p] += 1
    total = len(y_true)

    def prf(c):
        tp = counts[c][c]
        fp = sum(counts[r][c] for r in range(classes)) - tp
        fn = sum(counts[c]) - tp
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        return prec, rec, f1

    if classes == 2:
        tp, tn = counts[1][1], counts[0][0]
        prec, rec, f1 = prf(1)
        return {"accuracy": (tp + tn) / total, "precision": prec, "recall": rec, "f1": f1}, counts
    per = [prf(c) for c in range(classes)]
    acc = sum(counts[c][c] for c in range(classes)) / total
    return {"accuracy": acc, "precision": sum(p[0] for p in per) / classes,
            "recall": sum(p[1] for p in per) / classes, "f1": sum(p[2] for p in per) / classes}, counts


def test_perfect_classifier():
    assert metrics_from_counts(tp=5, fp=0, fn=0, tn=5) == {
        "accuracy": 1.0, "precision": 1.0, "recall": 1.0, "f1": 1.0}


def test_worked_example():
    m = metrics_from_counts(tp=3, fp=1, fn=2, tn=4)
    assert m["precision"] == pytest.approx(0.75, abs=1e-15)
    assert m["recall"] == pytest.approx(0.6, abs=1e-15)
    assert m["f1"] == pytest.approx(2 / 3, abs=1e-15)
    assert m["accuracy"] == pytest.approx(0.7, abs=1e-15)


def test_all_negative_predictions():
    y = np.array([0, 0, 1, 1, 0])
    cm = ConfusionMatrix.from_predictions(y, np.zeros(5, int), 2)
    m = metrics(cm)
    assert m["recall"] == 0 and m["precision"] == 0 and m["f1"] == 0
    assert m["accuracy"] == pytest.approx(3 / 5)


def test_confusion_layout():
    cm = ConfusionMatrix.from_predictions([1, 1, 0, 0, 1], [1, 0, 1, 0, 1], 2)
    assert cm.matrix.tolist() == [[1, 1], [1, 2]]
    assert (cm.tp, cm.fn, cm.fp, cm.tn) == (2, 1, 1, 1)
    assert cm.total == 5


@pytest.mark.parametrize("classes", [2, 3, 7])
def test_against_brute_force(classes):
    rng = np.random.default_rng(classes)
    for _ in range(1000 // 3 + 1):
        n = int(rng.integers(1, 60))
        y = rng.integers(0, classes, n)
        p = np.where(rng.random(n) < 0.6, y, rng.integers(0, classes, n))
        cm, report = build_report(y, p, classes)
        ref, counts = brute_force(y.tolist(), p.tolist(), classes)
        assert cm.matrix.tolist() == counts
        for k, v in ref.items():
            assert abs(getattr(report, k) - v) <= 1e-12
            assert 0.0 <= getattr(report, k) <= 1.0
        assert report.samples == n and cm.matrix.sum() == n


def test_collapse_matches_binary():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 7, 200)
    p = rng.integers(0, 7, 200)
    multi = ConfusionMatrix.from_predictions(y, p, 7).collapse()
    binary = ConfusionMatrix.from_predictions(y > 0, p > 0, 2)
    assert np.array_equal(multi.matrix, binary.matrix)


def test_per_event_breakdown():
    _, report = build_report([0, 1, 1, 0], [0, 1, 0, 1], 2, events=[0, 3, 3, 0],
                             config_hash="abc", seed=7)
    assert report.per_event["3"] == {"samples": 2, "accuracy": 0.5, "flagged": 0.5}
    assert report.per_event["0"]["flagged"] == 0.5
    d = report.to_dict()
    assert d["config_hash"] == "abc" and d["seed"] == 7
    assert {"accuracy", "precision", "recall", "f1"} <= set(d)
