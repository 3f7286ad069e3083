"""Scenario definitions and the run/sweep drivers behind the CLI."""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import adversary as adv
from .aggregation import MIN_PARTICIPANTS
from .data import BEHAVIORS, Behavior, Dataset, Device, SplitSpec, load_csv, shard, split
from .errors import ConfigError, ContextError, QuotaError
from .estimators import detector_from_state
from .evaluation import Confusion, EvaluationReport, per_behavior_accuracy
from .federation import (
    FederationConfig,
    ParticipantState,
    local_threshold,
    prepare,
    run_federation,
)
from .rng import ADVERSARY, make_rng
from .synth import SyntheticSpec, synthesize

SCENARIO_IDS = ("S1_anomaly_balanced", "S2_anomaly_newdevice", "S3_binary_balanced", "S4_binary_newdevice")

DESK_QUOTAS = {"train": 300, "val": 50, "test": 75}
PAPER_QUOTAS = {
    "autoencoder": {"train": 1500, "val": 150, "test": 75},
    "mlp": {"train": 250, "val": 25, "test": 75},
}

TRAIN_DEVICES = ["RPi3", "RPi4_1", "RPi4_3"]
ALL_TEST_DEVICES = ["RPi3", "RPi4_1", "RPi4_3", "RPi4_2"]
NEW_DEVICE_GROUPS = [
    {"name": "model_1", "train": ["RPi3", "RPi4_1"], "test": ["RPi4_3"]},
    {"name": "model_2", "train": ["RPi3", "RPi4_3"], "test": ["RPi4_1", "RPi4_2"]},
    {"name": "model_3", "train": ["RPi4_1", "RPi4_3"], "test": ["RPi3"]},
]
BINARY_BEHAVIORS = [["normal"], ["normal", "delay"], ["normal", "freeze"], ["normal", "noise"]]


@dataclass
class AttackPlan:
    """Where adversaries sit in a scenario.

    Data attacks turn the first ``count`` participants of ``device`` into
    adversaries (``mode="replace"``); model attacks normally join as extra
    participants without data (``mode="add"``).
    """

    kind: str
    count: int
    device: str | None = None
    mode: str | None = None
    behaviors: list | None = None
    threshold_overstatement: list | None = None
    sigma: float = adv.RANDOM_WEIGHT_STD
    allow_near_normal: bool = False

    def __post_init__(self):
        if self.kind not in adv.KINDS:
            raise ConfigError(f"attacks.kind: unknown attack {self.kind!r}")
        if self.count < 0:
            raise ConfigError("attacks.count must be >= 0")
        if self.mode is None:
            self.mode = "replace" if self.kind in adv.DATA_ATTACKS else "add"
        if self.mode not in ("replace", "add"):
            raise ConfigError("attacks.mode must be 'replace' or 'add'")
        if self.kind in adv.DATA_ATTACKS and self.mode != "replace":
            raise ConfigError("data attacks replace honest participants")
        if self.mode == "replace" and self.device is None:
            raise ConfigError("attacks.device is required for replacing adversaries")
        if self.device is not None:
            Device(self.device)

    def role(self, index: int) -> adv.AdversaryRole:
        if self.kind == "behavior_injection":
            behaviors = [self.behaviors[index]] if self.behaviors else [adv.INJECTION_ORDER[index % 4]]
        elif self.kind == "label_flip":
            behaviors = list(self.behaviors[index]) if self.behaviors else sorted(adv.FLIP_ORDER[index % 4])
        else:
            behaviors = []
        spec = adv.AttackSpec(self.kind, tuple(behaviors), self.sigma, self.allow_near_normal)
        over = tuple(self.threshold_overstatement) if self.threshold_overstatement else None
        return adv.AdversaryRole(spec, over)


@dataclass
class ScenarioConfig:
    id: str
    federation: FederationConfig
    groups: list
    participants_per_device: int = 4
    behaviors: list = field(default_factory=lambda: [["normal"]])
    quotas: dict = field(default_factory=lambda: dict(DESK_QUOTAS))
    attacks: list = field(default_factory=list)
    central_baseline: bool = True
    include_normal_v2_in_f1: bool = True

    @property
    def model(self) -> str:
        return self.federation.model

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, tree: dict) -> "ScenarioConfig":
        tree = copy.deepcopy(tree)
        known = {"id", "federation", "groups", "participants_per_device", "behaviors", "quotas", "attacks",
                 "central_baseline", "include_normal_v2_in_f1"}
        unknown = set(tree) - known
        if unknown:
            raise ConfigError(f"unknown scenario key(s): {', '.join(sorted(unknown))}")
        try:
            fed = FederationConfig(**tree.pop("federation", {}))
        except TypeError as exc:
            raise ConfigError(f"federation: {exc}") from None
        attacks = [AttackPlan(**a) for a in tree.pop("attacks", [])]
        cfg = cls(federation=fed, attacks=attacks, **tree)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            tree = yaml.safe_load(fh)
        if not isinstance(tree, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(tree)

    def validate(self):
        if not self.groups:
            raise ConfigError("scenario needs at least one training group")
        for g in self.groups:
            for d in g["train"] + g["test"]:
                Device(d)
        for sel in self.behaviors:
            for b in sel:
                Behavior.parse(b)
        for a in self.attacks:
            if a.mode == "replace" and a.count > self.participants_per_device:
                raise ConfigError(f"{a.count} adversaries exceed {self.participants_per_device} participants of {a.device}")
        rule = self.federation.aggregation
        for g in self.groups:
            k = self.participants_per_device * len(g["train"]) + sum(a.count for a in self.attacks if a.mode == "add")
            m = max(int(np.ceil(self.federation.client_fraction * k - 1e-9)), 1)
            if m < MIN_PARTICIPANTS[rule]:
                raise ConfigError(f"{rule} needs at least {MIN_PARTICIPANTS[rule]} participants per round, got {m}")


def builtin_scenario(scenario_id: str, seed: int = 0, paper_quotas: bool = False) -> ScenarioConfig:
    if scenario_id not in SCENARIO_IDS:
        raise ConfigError(f"unknown scenario {scenario_id!r}; choose from {', '.join(SCENARIO_IDS)}")
    model = "autoencoder" if scenario_id.startswith(("S1", "S2")) else "mlp"
    balanced = scenario_id.startswith(("S1", "S3"))
    groups = [{"name": "federation", "train": list(TRAIN_DEVICES), "test": list(ALL_TEST_DEVICES)}] if balanced \
        else copy.deepcopy(NEW_DEVICE_GROUPS)
    return ScenarioConfig(
        id=scenario_id,
        federation=FederationConfig(model=model, seed=seed),
        groups=groups,
        behaviors=[["normal"]] if model == "autoencoder" else copy.deepcopy(BINARY_BEHAVIORS),
        quotas=dict(PAPER_QUOTAS[model] if paper_quotas else DESK_QUOTAS),
    )


def load_scenario(ref: str, seed: int | None = None, paper_quotas: bool = False) -> ScenarioConfig:
    """A bundled scenario id or a path to a scenario YAML file."""
    if ref in SCENARIO_IDS:
        return builtin_scenario(ref, 0 if seed is None else seed, paper_quotas)
    if not Path(ref).is_file():
        raise ConfigError(f"unknown scenario {ref!r}; choose from {', '.join(SCENARIO_IDS)} or give a YAML path")
    cfg = ScenarioConfig.from_file(ref)
    if seed is not None:
        cfg.federation.seed = seed
    if paper_quotas:
        cfg.quotas = dict(PAPER_QUOTAS[cfg.model])
    return cfg


def load_data(source, seed: int = 0) -> Dataset:
    """``"synthetic"``, a synthetic spec (``.yaml``/``.yml``) or a CSV path."""
    if isinstance(source, Dataset):
        return source
    if source in (None, "synthetic"):
        return synthesize(SyntheticSpec.default(), seed)
    path = str(source)
    if path.endswith((".yaml", ".yml")):
        return synthesize(SyntheticSpec.from_file(path), seed)
    return load_csv(path)


def _split_participant(records, behaviors, quotas, seed, stream, test_only=False):
    train = {} if test_only else {b: quotas["train"] for b in behaviors}
    val = {} if test_only else {b: quotas["val"] for b in behaviors}
    test = {b.value: quotas["test"] for b in BEHAVIORS}
    try:
        return split(records, SplitSpec(train, val, test, seed), stream)
    except QuotaError as exc:
        raise QuotaError(f"{'/'.join(map(str, stream))}: {exc}") from None


def build_participants(cfg: ScenarioConfig, group: dict, data: Dataset):
    """Honest participants, adversaries and test-only shards for one group."""
    seed = cfg.federation.seed
    per = cfg.participants_per_device
    participants: list[ParticipantState] = []
    test_sets: dict[str, list] = {d: [] for d in group["test"]}
    replacing = {a.device: a for a in cfg.attacks if a.mode == "replace" and a.count > 0}

    for device in group["train"]:
        pool = data.where(device=device)
        shards = shard(pool, per, seed, stream=(device,))
        attack = replacing.get(device)
        for k, records in enumerate(shards):
            selected = cfg.behaviors[k % len(cfg.behaviors)]
            parts = _split_participant(records, selected, cfg.quotas, seed, (device, k))
            p = ParticipantState(len(participants), Device(device), parts["train"], parts["val"], parts["test"])
            if attack is not None and k < attack.count:
                p.role = attack.role(k)
                _poison(p, records, parts, cfg, k)
            participants.append(p)
            if device in test_sets:
                test_sets[device].append(parts["test"])

    for device in group["test"]:
        if device in group["train"]:
            continue
        pool = data.where(device=device)
        for k, records in enumerate(shard(pool, per, seed, stream=(device,))):
            parts = _split_participant(records, [], cfg.quotas, seed, (device, k), test_only=True)
            test_sets[device].append(parts["test"])

    n_quota = cfg.quotas["train"] * max(len(sel) for sel in cfg.behaviors)
    for a in cfg.attacks:
        if a.mode != "add":
            continue
        for j in range(a.count):
            device = group["train"][j % len(group["train"])]
            participants.append(ParticipantState(len(participants), Device(device), role=a.role(j), n_k=n_quota))

    return participants, {Device(d): Dataset.concat(v) for d, v in test_sets.items()}


def _poison(p: ParticipantState, records: Dataset, parts: dict, cfg: ScenarioConfig, k: int):
    spec = p.role.spec
    if spec.kind == "behavior_injection":
        rng = make_rng(cfg.federation.seed, ADVERSARY, p.device.value, k, "inject")
        used = set(parts["test"].ids.tolist())
        source = records.subset(np.flatnonzero(~np.isin(records.ids, list(used))))
        p.train = adv.inject_behavior(p.train, spec.behaviors[0], source, rng)
        source = source.subset(np.flatnonzero(~np.isin(source.ids, p.train.ids)))
        p.val = adv.inject_behavior(p.val, spec.behaviors[0], source, rng)
        if cfg.model == "mlp":
            p.train_labels = np.zeros(len(p.train))
            p.val_labels = np.zeros(len(p.val))
    elif spec.kind == "label_flip":
        if cfg.model != "mlp":
            raise ContextError("label flipping needs the binary classification model")
        p.train_labels = adv.flip_labels(p.train.labels, p.train.behavior, spec.behaviors)
        p.val_labels = adv.flip_labels(p.val.labels, p.val.behavior, spec.behaviors)


def _scaled(dataset: Dataset, plan) -> Dataset:
    return dataset.with_features(plan.transform(dataset.features))


def _central(participants, cfg: ScenarioConfig, plan):
    """Single-site model trained on all participants' pooled data."""
    holders = [p for p in participants if p.X_train is not None]
    pooled = ParticipantState(0, holders[0].device)
    pooled.X_train = np.vstack([p.X_train for p in holders])
    pooled.X_val = np.vstack([p.X_val for p in holders])
    if cfg.model == "mlp":
        pooled.train_labels = np.concatenate([p.train_labels for p in holders])
        pooled.val_labels = np.concatenate([p.val_labels for p in holders])
    central_cfg = replace(cfg.federation, aggregation="fedavg", client_fraction=1.0)
    state = run_federation(central_cfg, [pooled], plan=plan)
    if cfg.model == "autoencoder":
        state.threshold = local_threshold(state.model(), pooled.X_val)
    return state


@dataclass
class ScenarioResult:
    report: EvaluationReport
    traces: dict
    states: dict
    central: dict


def run_scenario(cfg: ScenarioConfig, data, central_baseline: bool | None = None) -> ScenarioResult:
    """Preprocess, train and evaluate every group of a scenario."""
    data = load_data(data, cfg.federation.seed)
    cfg.validate()
    central_baseline = cfg.central_baseline if central_baseline is None else central_baseline
    merged = EvaluationReport()
    traces, states, centrals = {}, {}, {}
    for group in cfg.groups:
        participants, tests = build_participants(cfg, group, data)
        plan = prepare(participants, cfg.federation)
        state = run_federation(cfg.federation, participants, plan)
        detector = detector_from_state(state)
        baseline = None
        if central_baseline:
            central = _central(participants, cfg, plan)
            centrals[group["name"]] = central
            baseline = detector_from_state(central).predict
        scaled = {d: _scaled(t, plan) for d, t in tests.items()}
        rep = per_behavior_accuracy(detector.predict, scaled, baseline, cfg.include_normal_v2_in_f1)
        merged.cells += rep.cells
        for key, conf in rep.confusion.items():
            if key == "overall":
                continue
            merged.confusion[key] = conf
        traces[group["name"]] = state.trace
        states[group["name"]] = state

    overall = Confusion()
    for key, conf in merged.confusion.items():
        overall += conf
    merged.confusion["overall"] = overall
    order = {d.value: i for i, d in enumerate(Device)}
    border = {b.value: i for i, b in enumerate(BEHAVIORS)}
    merged.cells.sort(key=lambda c: (order[c.device], border[c.behavior]))
    merged.metadata = {
        "scenario": cfg.id,
        "model": cfg.model,
        "aggregation": cfg.federation.aggregation,
        "seed": cfg.federation.seed,
        "adversaries": [{"kind": a.kind, "count": a.count, "device": a.device, "mode": a.mode} for a in cfg.attacks],
        "groups": [{"name": g["name"], "train": g["train"], "test": g["test"],
                    "threshold": states[g["name"]].threshold,
                    "n_features": states[g["name"]].plan.n_features} for g in cfg.groups],
        "quotas": cfg.quotas,
        "central_baseline": bool(central_baseline),
    }
    return ScenarioResult(merged, traces, states, centrals)


def config_hash(tree) -> str:
    blob = json.dumps(tree, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(out: Path, kind: str, config: dict, seed, data_source) -> None:
    manifest = {
        "kind": kind,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "data": str(data_source),
        "version": __version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def write_scenario_outputs(result: ScenarioResult, cfg: ScenarioConfig, out, data_source) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "report.csv", out / "report.json", out / "trace.jsonl"]
    files[0].write_text(result.report.to_csv())
    files[1].write_text(result.report.to_json())
    with open(files[2], "w") as fh:
        for name, trace in result.traces.items():
            for rec in trace:
                fh.write(json.dumps({"group": name, **rec}, sort_keys=True, default=_jsonable) + "\n")
    write_manifest(out, "run", cfg.to_dict(), cfg.federation.seed, data_source)
    return files + [out / "manifest.json"]


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    return str(x)


# --------------------------------------------------------------------- sweeps


@dataclass
class SweepSpec:
    """Grid of federation runs under one attack family."""

    scenario: str
    attack: str
    aggregations: list = field(default_factory=lambda: ["fedavg", "trimmed_mean", "trimmed_mean_2", "median"])
    adversaries: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    devices: list = field(default_factory=lambda: [None])
    seeds: list = field(default_factory=lambda: [0])
    mode: str | None = None
    threshold_overstatement: list | None = None
    sigma: float = adv.RANDOM_WEIGHT_STD
    data: str = "synthetic"
    paper_quotas: bool = False
    name: str | None = None

    def __post_init__(self):
        if self.attack not in adv.KINDS:
            raise ConfigError(f"attack: unknown kind {self.attack!r}")
        if self.attack in adv.DATA_ATTACKS and self.devices == [None]:
            self.devices = list(TRAIN_DEVICES)
        for rule in self.aggregations:
            if rule not in MIN_PARTICIPANTS:
                raise ConfigError(f"aggregations: unknown rule {rule!r}")

    @classmethod
    def from_dict(cls, tree: dict) -> "SweepSpec":
        try:
            spec = cls(**tree)
        except TypeError as exc:
            raise ConfigError(f"sweep spec: {exc}") from None
        spec.cells()
        return spec

    @classmethod
    def from_file(cls, path) -> "SweepSpec":
        with open(path, encoding="utf-8") as fh:
            tree = yaml.safe_load(fh)
        if not isinstance(tree, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(tree)

    def cells(self) -> list[dict]:
        out = []
        for seed in self.seeds:
            for device in self.devices:
                for count in self.adversaries:
                    for rule in self.aggregations:
                        cell = {"seed": seed, "device": device, "adversaries": count, "aggregation": rule}
                        self.cell_config(cell).validate()
                        out.append(cell)
        return out

    def cell_config(self, cell: dict) -> ScenarioConfig:
        cfg = load_scenario(self.scenario, cell["seed"], self.paper_quotas)
        cfg.federation.aggregation = cell["aggregation"]
        cfg.central_baseline = False
        cfg.attacks = []
        if cell["adversaries"] > 0:
            cfg.attacks = [AttackPlan(
                self.attack, cell["adversaries"], cell["device"], self.mode,
                threshold_overstatement=self.threshold_overstatement, sigma=self.sigma,
            )]
        return cfg


def builtin_sweep(name: str) -> SweepSpec:
    path = resources.files("fedspectre").joinpath(f"configs/sweeps/{name}.yaml")
    if not path.is_file():
        raise ConfigError(f"unknown sweep {name!r}")
    spec = SweepSpec.from_dict(yaml.safe_load(path.read_text(encoding="utf-8")))
    spec.name = spec.name or name
    return spec


def builtin_sweeps() -> list[str]:
    root = resources.files("fedspectre").joinpath("configs/sweeps")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def _run_cell(args):
    spec, cell, data = args
    cfg = spec.cell_config(cell)
    result = run_scenario(cfg, data if data is not None else load_data(spec.data, cell["seed"]))
    return result.report


def worker_count() -> int:
    env = os.environ.get("FEDSPECTRE_THREADS")
    if env:
        return max(int(env), 1)
    return os.cpu_count() or 1


def run_sweep(spec: SweepSpec, data=None, workers: int | None = None, out=None) -> list[dict]:
    """Run every grid cell and return one F1 row per cell.

    Cells are independent; with ``workers > 1`` they run in a process pool
    and results are reassembled in grid order.
    """
    cells = spec.cells()
    if data is None and spec.data not in ("synthetic", None) and not str(spec.data).endswith((".yaml", ".yml")):
        data = load_csv(spec.data)
    workers = worker_count() if workers is None else workers
    jobs = [(spec, cell, data) for cell in cells]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_run_cell, jobs))
    else:
        reports = [_run_cell(j) for j in jobs]

    rows = []
    for cell, rep in zip(cells, reports):
        scores = rep.f1_scores()
        row = {
            "scenario": spec.scenario,
            "attack": spec.attack,
            "adversary_device": cell["device"] or "",
            "aggregation": cell["aggregation"],
            "adversaries": cell["adversaries"],
            "seed": cell["seed"],
            "f1_overall": scores.get("overall"),
        }
        for d in ALL_TEST_DEVICES:
            row[f"f1_{d}"] = scores.get(d)
        rows.append(row)
        if out is not None:
            cell_dir = Path(out) / "cells"
            cell_dir.mkdir(parents=True, exist_ok=True)
            name = f"{cell['aggregation']}_{cell['device'] or 'any'}_f{cell['adversaries']}_s{cell['seed']}.json"
            (cell_dir / name).write_text(rep.to_json())
    return rows


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: "" if v is None else (round(v, 10) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def write_sweep_outputs(rows: list[dict], spec: SweepSpec, out) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    path.write_text(sweep_csv(rows))
    tree = asdict(spec)
    tree.pop("name")
    write_manifest(out, "sweep", tree, spec.seeds, spec.data)
    return [path, out / "manifest.json"]
