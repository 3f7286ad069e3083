import json

import numpy as np
import pytest

from fedspectre.data import Dataset, Device
from fedspectre.errors import UndefinedMetricError
from fedspectre.evaluation import (
    Confusion,
    EvaluationReport,
    concatenated_f1,
    f1,
    per_behavior_accuracy,
    predict_anomaly,
    predict_binary,
)
from fedspectre.nn import build_autoencoder, build_mlp, reconstruction_errors


def _tests():
    # feature 0 is the "anomaly score": > 0.5 means attack
    rows = {
        Device.RPI3: [("normal", 0.1), ("normal", 0.9), ("delay", 0.8), ("delay", 0.7), ("freeze", 0.2)],
        Device.RPI4_1: [("normal", 0.0), ("normal_v2", 0.6), ("spoof", 0.9)],
    }
    out = {}
    for dev, items in rows.items():
        out[dev] = Dataset([dev] * len(items), [b for b, _ in items], np.array([[v] for _, v in items]))
    return out


def detector(X):
    return (X[:, 0] > 0.5).astype(int)


def test_f1_formula_and_undefined_case():
    assert f1(2, 1, 1) == pytest.approx(2 / 3)
    with pytest.raises(UndefinedMetricError):
        f1(0, 0, 0)
    with pytest.raises(ValueError):
        f1(-1, 0, 0)


def test_per_behavior_accuracy_cells_and_confusion():
    rep = per_behavior_accuracy(detector, _tests())
    assert rep.accuracy("RPi3", "normal") == 0.5
    assert rep.accuracy("RPi3", "delay") == 1.0
    assert rep.accuracy("RPi3", "freeze") == 0.0
    assert rep.confusion["RPi3"] == Confusion(tp=2, tn=1, fp=1, fn=1)
    assert rep.confusion["overall"] == Confusion(tp=3, tn=2, fp=2, fn=1)
    assert rep.devices == ["RPi3", "RPi4_1"]
    assert rep.cell("RPi4_2", "normal") is None


def test_normal_v2_can_be_left_out_of_f1():
    with_v2 = per_behavior_accuracy(detector, _tests())
    without = per_behavior_accuracy(detector, _tests(), include_normal_v2=False)
    assert without.confusion["RPi4_1"].fp == with_v2.confusion["RPi4_1"].fp - 1
    assert without.accuracy("RPi4_1", "normal_v2") == 0.0


def test_baseline_fills_diff():
    rep = per_behavior_accuracy(detector, _tests(), baseline=lambda X: np.ones(len(X), dtype=int))
    c = rep.cell("RPi3", "normal")
    assert c.baseline == 0.0 and c.diff == 0.5


def test_concatenated_f1_accepts_a_single_dataset():
    tests = _tests()
    merged = Dataset.concat(tests.values())
    assert concatenated_f1(detector, merged) == per_behavior_accuracy(detector, tests).f1()


def test_report_json_round_trip():
    rep = per_behavior_accuracy(detector, _tests(), baseline=detector, metadata={"seed": 1})
    back = EvaluationReport.from_dict(json.loads(rep.to_json()))
    assert back.to_csv() == rep.to_csv()
    assert back.to_json() == rep.to_json()


def test_predict_helpers():
    X = np.random.default_rng(0).uniform(size=(4, 3))
    ae = build_autoencoder(3, hidden=2)
    err = reconstruction_errors(ae, X)
    assert predict_anomaly(ae, float(np.median(err)), X).sum() == 2
    # strictly above: a threshold equal to the largest error flags nothing
    assert predict_anomaly(ae, float(err.max()), X).sum() == 0
    mlp = build_mlp(3, hidden=2)
    assert set(predict_binary(mlp, X).tolist()) <= {0, 1}
