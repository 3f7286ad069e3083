"""Predictions, per-behavior accuracy tables and F1."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .data import BEHAVIORS, DEVICES, Behavior, Dataset, Device
from .errors import UndefinedMetricError
from .nn import ModelParams, logits, reconstruction_errors

NORMAL, ATTACK = 0, 1


def predict_anomaly(model: ModelParams, threshold: float, sample) -> np.ndarray:
    """1 (attack) where reconstruction MSE is strictly above ``threshold``."""
    X = np.atleast_2d(np.asarray(sample, dtype=np.float64))
    return (reconstruction_errors(model, X) > threshold).astype(int)


def predict_binary(model: ModelParams, sample) -> np.ndarray:
    """1 (attack) where the logit is strictly positive; a tie is normal."""
    X = np.atleast_2d(np.asarray(sample, dtype=np.float64))
    return (logits(model, X) > 0).astype(int)


def f1(tp: int, fp: int, fn: int) -> float:
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be non-negative")
    if tp + fp + fn == 0:
        raise UndefinedMetricError("F1 is undefined when tp + fp + fn == 0")
    return tp / (tp + 0.5 * (fp + fn))


@dataclass
class Confusion:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, attack: bool, predicted) -> None:
        predicted = np.asarray(predicted)
        hits = int(predicted.sum())
        miss = int(predicted.size - hits)
        if attack:
            self.tp += hits
            self.fn += miss
        else:
            self.fp += hits
            self.tn += miss

    def __iadd__(self, other):
        self.tp += other.tp
        self.tn += other.tn
        self.fp += other.fp
        self.fn += other.fn
        return self

    @property
    def f1(self) -> float:
        return f1(self.tp, self.fp, self.fn)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


@dataclass
class Cell:
    device: str
    behavior: str
    correct: int
    total: int
    baseline: float | None = None

    @property
    def accuracy(self) -> float | None:
        return self.correct / self.total if self.total else None

    @property
    def diff(self) -> float | None:
        if self.baseline is None or self.accuracy is None:
            return None
        return self.accuracy - self.baseline


@dataclass
class EvaluationReport:
    cells: list = field(default_factory=list)
    confusion: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def cell(self, device, behavior) -> Cell | None:
        device, behavior = Device(device).value, Behavior(behavior).value
        for c in self.cells:
            if c.device == device and c.behavior == behavior:
                return c
        return None

    def accuracy(self, device, behavior) -> float | None:
        c = self.cell(device, behavior)
        return None if c is None else c.accuracy

    @property
    def devices(self) -> list[str]:
        seen = {c.device for c in self.cells}
        return [d.value for d in DEVICES if d.value in seen]

    def f1(self, device=None) -> float:
        key = "overall" if device is None else Device(device).value
        return self.confusion[key].f1

    def f1_scores(self) -> dict:
        out = {}
        for key, conf in self.confusion.items():
            try:
                out[key] = conf.f1
            except UndefinedMetricError:
                out[key] = None
        return out

    def rows(self) -> list[dict]:
        return [
            {
                "device": c.device,
                "behavior": c.behavior,
                "correct": c.correct,
                "total": c.total,
                "accuracy": _fmt(c.accuracy),
                "baseline_accuracy": _fmt(c.baseline),
                "diff": _fmt(c.diff),
            }
            for c in self.cells
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        fields = ["device", "behavior", "correct", "total", "accuracy", "baseline_accuracy", "diff"]
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: "" if v is None else v for k, v in row.items()})
        return buf.getvalue()

    def to_dict(self) -> dict:
        table = {}
        for c in self.cells:
            table.setdefault(c.behavior, {})[c.device] = {
                "accuracy": _fmt(c.accuracy),
                "diff": _fmt(c.diff),
                "n": c.total,
            }
        return {
            "metadata": self.metadata,
            "table": table,
            "f1": {k: _fmt(v) for k, v in self.f1_scores().items()},
            "confusion": {k: v.to_dict() for k, v in self.confusion.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "EvaluationReport":
        cells = []
        for behavior, per_device in doc["table"].items():
            for device, v in per_device.items():
                n = v["n"]
                acc = v["accuracy"]
                correct = int(round(acc * n)) if acc is not None else 0
                base = None if v["diff"] is None or acc is None else acc - v["diff"]
                cells.append(Cell(device, behavior, correct, n, base))
        cells.sort(key=lambda c: (_DEVICE_ORDER[c.device], _BEHAVIOR_ORDER[c.behavior]))
        confusion = {k: Confusion(**v) for k, v in doc.get("confusion", {}).items()}
        return cls(cells, confusion, doc.get("metadata", {}))


_DEVICE_ORDER = {d.value: i for i, d in enumerate(DEVICES)}
_BEHAVIOR_ORDER = {b.value: i for i, b in enumerate(BEHAVIORS)}


def _fmt(x):
    return None if x is None else round(float(x), 10)


def per_behavior_accuracy(detector, test_sets, baseline=None, include_normal_v2: bool = True,
                          metadata=None) -> EvaluationReport:
    """Accuracy of ``detector`` within every (device, behavior) test set.

    ``detector`` maps a scaled feature matrix to 0/1 predictions.
    ``test_sets`` maps a device to a :class:`Dataset` whose features are
    already scaled.  Normal cells count predicted-normal as correct, attack
    cells predicted-attack.  ``baseline`` is an optional second detector
    (e.g. the centralized model) whose accuracy fills the diff column.
    Confusion counts are kept per device and overall; ``normal_v2`` can be
    left out of them with ``include_normal_v2=False``.
    """
    report = EvaluationReport(metadata=dict(metadata or {}))
    overall = Confusion()
    for device in DEVICES:
        data = test_sets.get(device, test_sets.get(device.value))
        if data is None:
            continue
        conf = Confusion()
        for behavior in BEHAVIORS:
            part = data.where(behavior=behavior)
            if len(part) == 0:
                continue
            pred = np.asarray(detector(part.features))
            correct = int(pred.sum()) if behavior.is_attack else int(pred.size - pred.sum())
            base = None
            if baseline is not None:
                bpred = np.asarray(baseline(part.features))
                base = (bpred.sum() if behavior.is_attack else bpred.size - bpred.sum()) / bpred.size
            report.cells.append(Cell(device.value, behavior.value, correct, len(part), base))
            if behavior == Behavior.NORMAL_V2 and not include_normal_v2:
                continue
            conf.add(behavior.is_attack, pred)
        report.confusion[device.value] = conf
        overall += conf
    report.confusion["overall"] = overall
    return report


def concatenated_f1(detector, test_sets, include_normal_v2: bool = True) -> float:
    """F1 (attack = positive) over all behavior test sets concatenated."""
    if isinstance(test_sets, Dataset):
        test_sets = {Device(d): test_sets.where(device=d) for d in sorted(set(test_sets.device))}
    return per_behavior_accuracy(detector, test_sets, include_normal_v2=include_normal_v2).f1()
