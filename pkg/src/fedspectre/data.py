"""Fingerprint dataset schema, CSV I/O, splitting and sharding."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ParseError, QuotaError
from .rng import SPLIT, make_rng

N_RAW_FEATURES = 75
WINDOW_SECONDS = 50.0


class Behavior(str, enum.Enum):
    NORMAL = "normal"
    NORMAL_V2 = "normal_v2"
    DELAY = "delay"
    DISORDER = "disorder"
    FREEZE = "freeze"
    HOP = "hop"
    MIMIC = "mimic"
    NOISE = "noise"
    REPEAT = "repeat"
    SPOOF = "spoof"

    @property
    def is_attack(self) -> bool:
        return self not in (Behavior.NORMAL, Behavior.NORMAL_V2)

    @classmethod
    def parse(cls, label: str) -> "Behavior":
        key = label.strip().lower().replace("-", "_")
        key = _BEHAVIOR_ALIASES.get(key, key)
        return cls(key)


_BEHAVIOR_ALIASES = {
    "confusion": "disorder",
    "normalv1": "normal",
    "normal_v1": "normal",
    "normalv2": "normal_v2",
}

BEHAVIORS = tuple(Behavior)
ATTACKS = tuple(b for b in Behavior if b.is_attack)


class DeviceType(str, enum.Enum):
    RPI3_1GB = "RPi3_1GB"
    RPI4_2GB = "RPi4_2GB"
    RPI4_4GB = "RPi4_4GB"


class Device(str, enum.Enum):
    """Physical sensors; RPi4_1 and RPi4_2 share a hardware type."""

    RPI3 = "RPi3"
    RPI4_1 = "RPi4_1"
    RPI4_2 = "RPi4_2"
    RPI4_3 = "RPi4_3"

    @property
    def device_type(self) -> DeviceType:
        return _DEVICE_TYPES[self]

    @classmethod
    def parse(cls, label: str) -> "Device":
        return cls(label.strip())


_DEVICE_TYPES = {
    Device.RPI3: DeviceType.RPI3_1GB,
    Device.RPI4_1: DeviceType.RPI4_2GB,
    Device.RPI4_2: DeviceType.RPI4_2GB,
    Device.RPI4_3: DeviceType.RPI4_4GB,
}

DEVICES = tuple(Device)


@dataclass(frozen=True)
class FingerprintRecord:
    device: Device
    behavior: Behavior
    features: tuple
    timestamp: float = 0.0


class Dataset:
    """Columnar table of fingerprint windows.

    ``ids`` identify records within the originating table and survive
    subsetting, so disjointness of derived sets can be checked.
    """

    def __init__(self, device, behavior, features, timestamp=None, ids=None):
        self.device = np.array([getattr(d, "value", d) for d in device], dtype=object)
        self.behavior = np.array([getattr(b, "value", b) for b in behavior], dtype=object)
        n = len(self.device)
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            features = features.reshape(n, -1) if n else np.zeros((0, N_RAW_FEATURES))
        self.features = features
        self.timestamp = np.zeros(n) if timestamp is None else np.asarray(timestamp, dtype=np.float64)
        self.ids = np.arange(n) if ids is None else np.asarray(ids, dtype=np.int64)
        if not (len(self.behavior) == self.features.shape[0] == len(self.timestamp) == len(self.ids) == n):
            raise ValueError("column lengths differ")

    @classmethod
    def from_records(cls, records: Iterable[FingerprintRecord]) -> "Dataset":
        records = list(records)
        width = len(records[0].features) if records else N_RAW_FEATURES
        return cls(
            [r.device for r in records],
            [r.behavior for r in records],
            np.array([r.features for r in records], dtype=np.float64).reshape(len(records), width),
            [r.timestamp for r in records],
        )

    @classmethod
    def empty(cls, n_features=N_RAW_FEATURES) -> "Dataset":
        return cls([], [], np.zeros((0, n_features)))

    def __len__(self):
        return len(self.device)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def __iter__(self):
        for i in range(len(self)):
            yield self.record(i)

    def record(self, i) -> FingerprintRecord:
        return FingerprintRecord(
            self.device[i], self.behavior[i], tuple(self.features[i].tolist()), float(self.timestamp[i])
        )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            len(self) == len(other)
            and list(self.device) == list(other.device)
            and list(self.behavior) == list(other.behavior)
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.timestamp, other.timestamp)
        )

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.device[idx], self.behavior[idx], self.features[idx], self.timestamp[idx], self.ids[idx])

    def where(self, device=None, behavior=None) -> "Dataset":
        mask = np.ones(len(self), dtype=bool)
        if device is not None:
            mask &= self.device == Device(device).value
        if behavior is not None:
            mask &= self.behavior == Behavior(behavior).value
        return self.subset(np.flatnonzero(mask))

    def with_features(self, features) -> "Dataset":
        return Dataset(self.device, self.behavior, features, self.timestamp, self.ids)

    @property
    def labels(self) -> np.ndarray:
        """Binary labels: 1 for attack behaviors, 0 for normal."""
        return np.array([Behavior(b).is_attack for b in self.behavior], dtype=np.float64)

    def counts(self) -> dict:
        out: dict = {}
        for d, b in zip(self.device, self.behavior):
            out[(d, b)] = out.get((d, b), 0) + 1
        return out

    @staticmethod
    def concat(parts: Iterable["Dataset"]) -> "Dataset":
        parts = [p for p in parts]
        if not parts:
            return Dataset.empty()
        return Dataset(
            np.concatenate([p.device for p in parts]),
            np.concatenate([p.behavior for p in parts]),
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.timestamp for p in parts]),
            np.concatenate([p.ids for p in parts]),
        )


def feature_columns(n=N_RAW_FEATURES) -> list[str]:
    return [f"e{i}" for i in range(n)]


def load_csv(path, column_map: Mapping[str, str] | None = None) -> Dataset:
    """Read a fingerprint CSV (``device,behavior,timestamp,e0..e74``).

    ``column_map`` renames upstream headers to the schema names before
    validation, e.g. ``{"label": "behavior"}``.
    """
    column_map = dict(column_map or {})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [column_map.get(h.strip(), h.strip()) for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file") from None
        for col in ("device", "behavior"):
            if col not in header:
                raise ParseError(f"missing column {col!r}")
        feat_cols = [h for h in header if h.startswith("e") and h[1:].isdigit()]
        feat_cols.sort(key=lambda h: int(h[1:]))
        if not feat_cols or [int(h[1:]) for h in feat_cols] != list(range(len(feat_cols))):
            raise ParseError("feature columns must be e0..eN without gaps")
        pos = {h: i for i, h in enumerate(header)}
        feat_pos = [pos[h] for h in feat_cols]
        ts_pos = pos.get("timestamp")

        devices, behaviors, times, rows = [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", row_no)
            try:
                devices.append(Device.parse(row[pos["device"]]))
            except ValueError:
                raise ParseError(f"unknown device {row[pos['device']]!r}", row_no) from None
            try:
                behaviors.append(Behavior.parse(row[pos["behavior"]]))
            except ValueError:
                raise ParseError(f"unknown behavior {row[pos['behavior']]!r}", row_no) from None
            try:
                values = [float(row[i]) for i in feat_pos]
                times.append(float(row[ts_pos]) if ts_pos is not None else 0.0)
            except ValueError as exc:
                raise ParseError(f"non-numeric value ({exc})", row_no) from None
            if not np.all(np.isfinite(values)):
                raise ParseError("non-finite feature value", row_no)
            rows.append(values)
    features = np.array(rows, dtype=np.float64).reshape(len(rows), len(feat_cols))
    return Dataset(devices, behaviors, features, times)


def write_csv(dataset: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["device", "behavior", "timestamp"] + feature_columns(dataset.n_features))
        for i in range(len(dataset)):
            writer.writerow(
                [Device(dataset.device[i]).value, Behavior(dataset.behavior[i]).value, repr(float(dataset.timestamp[i]))]
                + [repr(v) for v in dataset.features[i].tolist()]
            )


@dataclass
class SplitSpec:
    """Per-behavior sample counts for the train, validation and test sets."""

    train: dict
    val: dict
    test: dict
    seed: int = 0

    def __post_init__(self):
        for name in ("train", "val", "test"):
            quotas = {Behavior.parse(str(getattr(b, "value", b))): int(n) for b, n in getattr(self, name).items()}
            if any(n < 0 for n in quotas.values()):
                raise QuotaError(f"negative quota in {name}")
            setattr(self, name, quotas)

    def required(self) -> dict:
        out: dict = {}
        for quotas in (self.train, self.val, self.test):
            for b, n in quotas.items():
                out[b] = out.get(b, 0) + n
        return out


def split(records: Dataset, spec: SplitSpec, stream=()) -> dict[str, Dataset]:
    """Sample disjoint train/val/test sets honouring per-behavior counts."""
    need = spec.required()
    short = []
    pools = {}
    for b, n in need.items():
        idx = np.flatnonzero(records.behavior == b.value)
        if idx.size < n:
            short.append(f"{b.value} (need {n}, have {idx.size})")
        pools[b] = idx
    if short:
        raise QuotaError("insufficient records for " + ", ".join(short))

    rng = make_rng(spec.seed, SPLIT, *stream)
    parts: dict[str, list] = {"train": [], "val": [], "test": []}
    for b in BEHAVIORS:
        if b not in need:
            continue
        perm = rng.permutation(pools[b])
        offset = 0
        for name in ("train", "val", "test"):
            n = getattr(spec, name).get(b, 0)
            parts[name].append(perm[offset:offset + n])
            offset += n
    return {name: records.subset(np.sort(np.concatenate(idx)) if idx else np.array([], dtype=int))
            for name, idx in parts.items()}


def shard(records: Dataset, n_shards: int, seed: int, stream=()) -> list[Dataset]:
    """Deal one device's records into ``n_shards`` disjoint participants.

    Each behavior is shuffled separately and dealt round-robin, so every
    shard gets an equal share of every behavior.
    """
    if n_shards < 1:
        raise ValueError("n_shards must be positive")
    rng = make_rng(seed, SPLIT, "shard", *stream)
    buckets: list[list] = [[] for _ in range(n_shards)]
    for b in BEHAVIORS:
        idx = rng.permutation(np.flatnonzero(records.behavior == b.value))
        for k in range(n_shards):
            buckets[k].append(idx[k::n_shards])
    return [records.subset(np.sort(np.concatenate(parts))) for parts in buckets]
