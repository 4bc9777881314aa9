import json

import numpy as np
import pytest

from bgpgat.cli import main
from bgpgat.features import N_FEATURES, read_feature_csv
from mrt_fixtures import announce, withdraw

TINY = ["--period", "7", "--window", "3", "--hidden", "4", "--epochs", "3", "--lr", "1e-2",
        "--patience", "2"]


def _manifest(path):
    return json.loads((path.parent / (path.name + ".manifest.json")).read_text())


@pytest.fixture(scope="module")
def worm_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    out = d / "worm.csv"
    assert main(["synth", "--events", "worm", "--n", "160", "--fraction", "0.2", "--period", "7",
                 "--seed", "1", "--out", str(out)]) == 0
    return out


def test_synth_is_deterministic(tmp_path, worm_csv):
    again = tmp_path / "again.csv"
    main(["synth", "--events", "worm", "--n", "160", "--fraction", "0.2", "--period", "7",
          "--seed", "1", "--out", str(again)])
    assert again.read_bytes() == worm_csv.read_bytes()
    s = read_feature_csv(worm_csv)
    assert len(s) == 160 and int((s.labels > 0).sum()) == 32
    assert _manifest(worm_csv)["command"] == "synth"


def test_pipeline_report_and_checkpoint(tmp_path, worm_csv):
    before = worm_csv.read_bytes()
    report, model, log = tmp_path / "r.json", tmp_path / "m.npz", tmp_path / "log.csv"
    argv = ["pipeline", "--in", str(worm_csv), "--out", str(report), "--model", str(model),
            "--log", str(log), *TINY]
    assert main(argv) == 0
    r = json.loads(report.read_text())
    assert {"accuracy", "precision", "recall", "f1", "config_hash", "seed", "confusion"} <= set(r)
    assert log.read_text().startswith("epoch,train_loss,val_f1,val_accuracy")
    for p in (report, model, log):
        m = _manifest(p)
        assert m["command"] == "pipeline" or m["command"] == "train-log"
        assert str(worm_csv) in m["inputs"]
    assert worm_csv.read_bytes() == before
    first = (report.read_bytes(), model.read_bytes())
    assert main(argv) == 0
    assert (report.read_bytes(), model.read_bytes()) == first

    out = tmp_path / "eval.json"
    assert main(["evaluate", "--model", str(model), "--in", str(worm_csv), "--out", str(out)]) == 0
    ev = json.loads(out.read_text())
    assert ev["f1"] == r["f1"] and ev["confusion"] == r["confusion"]

    prefix = tmp_path / "att"
    assert main(["attention", "--model", str(model), "--in", str(worm_csv),
                 "--out-prefix", str(prefix), "--feature-threshold", "0",
                 "--temporal-threshold", "0"]) == 0
    lines = (tmp_path / "att.temporal.csv").read_text().splitlines()
    assert lines[0] == "src,dst,weight" and len(lines) == 10


def test_pipeline_to_stdout(worm_csv, capsys):
    assert main(["pipeline", "--in", str(worm_csv), *TINY, "--epochs", "1"]) == 0
    assert "f1" in json.loads(capsys.readouterr().out)


def test_ingest_featurize_augment_window(tmp_path):
    mrt = tmp_path / "updates.mrt"
    recs = [announce(60 * i, ["10.0.0.0/24"], [64500, 3356, 100 + i % 3]) for i in range(40)]
    recs.append(withdraw(60 * 40, ["10.0.0.0/24"]))
    mrt.write_bytes(b"".join(recs))
    log = tmp_path / "records.txt"
    assert main(["ingest", "--from", str(mrt), "--out", str(log)]) == 0
    assert len(log.read_text().splitlines()) == 41
    labels = tmp_path / "labels.json"
    labels.write_text(json.dumps([{"event": 1, "start": 600, "end": 1200}]))
    feats = tmp_path / "features.csv"
    assert main(["featurize", "--in", str(log), "--labels", str(labels), "--out", str(feats)]) == 0
    s = read_feature_csv(feats)
    assert len(s) == 41 and int(s.labels.sum()) == 10
    assert s.values[:, 1].sum() == 1  # one withdrawal
    aug = tmp_path / "aug.csv"
    assert main(["augment", "--in", str(feats), "--period", "7", "--out", str(aug)]) == 0
    win = tmp_path / "w.npz"
    assert main(["window", "--in", str(aug), "--window", "5", "--normalize",
                 "--out", str(win)]) == 0
    with np.load(win) as z:
        assert z["x"].shape == (37, 5, 5 * N_FEATURES)
        assert z["x"].min() >= 0 and z["x"].max() <= 1
    assert _manifest(win)["config"]["window"] == 5


def test_usage_error_returns_2(worm_csv, capsys):
    assert main(["pipeline", "--in", str(worm_csv), "--bogus"]) == 2
    assert main([]) == 2


def test_stage_error_returns_1(tmp_path, capsys):
    assert main(["pipeline", "--in", str(tmp_path / "missing.csv")]) == 1
    assert "bgpgat pipeline: error:" in capsys.readouterr().err
    assert main(["synth", "--events", "nope", "--out", str(tmp_path / "x.csv")]) == 1
    assert not (tmp_path / "x.csv").exists()
