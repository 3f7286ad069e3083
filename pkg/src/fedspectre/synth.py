"""Synthetic fingerprint generator.

A desk-scale stand-in for the public dataset.  Every device type gets a
baseline event-count profile; normal windows are the baseline plus a
low-rank activity component and per-feature noise.  Each behavior then
shifts (in units of the per-feature spread) a set of feature indices, and
may widen the spread.  A few raw columns are exact linear copies or
constants so the correlation filter has something to remove.

The spec is a plain key-value tree (usually YAML); see
``configs/desk_synthetic.yaml`` for the bundled default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .data import BEHAVIORS, DEVICES, WINDOW_SECONDS, Behavior, Dataset, Device, DeviceType
from .errors import SpecError
from .rng import SYNTH, make_rng

FAMILIES = ("normal", "uniform")
NOISE_MODELS = ("additive", "multiplicative")


@dataclass
class BehaviorEffect:
    shift: float = 0.0
    spread: float = 1.0
    features: list = field(default_factory=list)
    family: str = "normal"


@dataclass
class TypeProfile:
    location: float
    profile_spread: float
    cv: float
    inherit: str | None = None
    jitter: float = 0.0


@dataclass
class SyntheticSpec:
    n_features: int
    latent_dim: int
    latent_weight: float
    latent_family: str
    noise_model: str
    shared_load: bool
    counts: dict
    device_types: dict
    behaviors: dict
    overrides: dict
    duplicates: dict
    constants: dict
    devices: list

    @classmethod
    def from_dict(cls, tree: dict) -> "SyntheticSpec":
        try:
            return _parse_spec(tree)
        except SpecError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecError(f"invalid synthetic spec: {exc}") from None

    @classmethod
    def from_file(cls, path) -> "SyntheticSpec":
        with open(path, encoding="utf-8") as fh:
            tree = yaml.safe_load(fh)
        if not isinstance(tree, dict):
            raise SpecError(f"{path}: top level must be a mapping")
        return cls.from_dict(tree)

    @classmethod
    def default(cls) -> "SyntheticSpec":
        return cls.from_dict(default_spec_tree())

    def count(self, behavior: Behavior) -> int:
        return int(self.counts.get(behavior.value, self.counts.get("default", 0)))

    def effect(self, device_type: DeviceType, behavior: Behavior) -> BehaviorEffect:
        base = self.behaviors.get(behavior.value, BehaviorEffect())
        over = self.overrides.get(device_type.value, {}).get(behavior.value)
        if not over:
            return base
        merged = dict(base.__dict__)
        merged.update(over)
        return _effect(behavior.value, merged, self.n_features)


def default_spec_tree() -> dict:
    text = resources.files("fedspectre").joinpath("configs/desk_synthetic.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


def _check_indices(name, idx, n):
    idx = [int(i) for i in idx]
    bad = [i for i in idx if not 0 <= i < n]
    if bad:
        raise SpecError(f"{name}: feature indices {bad} out of range")
    return idx


def _effect(name, tree, n):
    family = tree.get("family", "normal")
    if family not in FAMILIES:
        raise SpecError(f"behaviors.{name}.family: unknown family {family!r}")
    spread = float(tree.get("spread", 1.0))
    if spread < 0:
        raise SpecError(f"behaviors.{name}.spread: negative scale")
    return BehaviorEffect(
        shift=float(tree.get("shift", 0.0)),
        spread=spread,
        features=_check_indices(f"behaviors.{name}.features", tree.get("features", []), n),
        family=family,
    )


def _parse_spec(tree):
    n = int(tree.get("n_features", 75))
    if n < 1:
        raise SpecError("n_features must be positive")
    known = {"n_features", "latent_dim", "latent_weight", "latent_family", "noise_model", "shared_load", "counts", "device_types", "behaviors",
             "overrides", "duplicates", "constants", "devices"}
    unknown = set(tree) - known
    if unknown:
        raise SpecError(f"unknown key(s): {', '.join(sorted(unknown))}")

    latent_weight = float(tree.get("latent_weight", 0.8))
    if not 0 <= latent_weight <= 1:
        raise SpecError("latent_weight must lie in [0, 1]")
    noise_model = tree.get("noise_model", "additive")
    if noise_model not in NOISE_MODELS:
        raise SpecError(f"noise_model: choose from {', '.join(NOISE_MODELS)}, got {noise_model!r}")
    latent_family = tree.get("latent_family", "normal")
    if latent_family not in FAMILIES:
        raise SpecError(f"latent_family: unknown family {latent_family!r}")

    types = {}
    for name, t in tree["device_types"].items():
        DeviceType(name)
        prof = TypeProfile(
            location=float(t.get("location", -1.0 if "inherit" in t else 100.0)),
            profile_spread=float(t.get("profile_spread", 0.5)),
            cv=float(t.get("cv", -1.0 if "inherit" in t else 0.1)),
            inherit=t.get("inherit"),
            jitter=float(t.get("jitter", 0.0)),
        )
        # an inheriting type takes unset location/cv from its parent below
        if prof.inherit is None and (prof.location <= 0 or prof.cv <= 0 or prof.profile_spread < 0 or prof.jitter < 0):
            raise SpecError(f"device_types.{name}: location and cv must be positive, spreads non-negative")
        types[name] = prof
    for name, prof in types.items():
        if prof.inherit is not None and prof.inherit not in types:
            raise SpecError(f"device_types.{name}.inherit: unknown type {prof.inherit!r}")
        if prof.inherit is not None:
            parent = types[prof.inherit]
            if parent.inherit is not None:
                raise SpecError(f"device_types.{name}.inherit: {prof.inherit!r} is itself derived; chains are not supported")
            if prof.location == -1.0:
                prof.location = parent.location
            if prof.cv == -1.0:
                prof.cv = parent.cv
            if prof.location <= 0 or prof.cv <= 0 or prof.jitter < 0:
                raise SpecError(f"device_types.{name}: location and cv must be positive, spreads non-negative")

    behaviors = {}
    for name, b in (tree.get("behaviors") or {}).items():
        Behavior(name)
        behaviors[name] = _effect(name, b or {}, n)

    overrides = {}
    for tname, per in (tree.get("overrides") or {}).items():
        DeviceType(tname)
        for bname in per:
            Behavior(bname)
            if float(per[bname].get("spread", 1.0)) < 0:
                raise SpecError(f"overrides.{tname}.{bname}.spread: negative scale")
        overrides[tname] = per

    counts = {str(k): int(v) for k, v in (tree.get("counts") or {"default": 100}).items()}
    if any(v < 0 for v in counts.values()):
        raise SpecError("counts must be non-negative")

    duplicates = {}
    for k, v in (tree.get("duplicates") or {}).items():
        src, slope, intercept = v
        _check_indices("duplicates", [k, src], n)
        duplicates[int(k)] = (int(src), float(slope), float(intercept))
    constants = {int(k): float(v) for k, v in (tree.get("constants") or {}).items()}
    _check_indices("constants", list(constants), n)

    devices = [Device(d).value for d in tree.get("devices", [d.value for d in DEVICES])]
    for d in devices:
        if Device(d).device_type.value not in types:
            raise SpecError(f"device {d} has no device_types entry for {Device(d).device_type.value}")
    return SyntheticSpec(
        n_features=n,
        latent_dim=int(tree.get("latent_dim", 4)),
        latent_weight=latent_weight,
        latent_family=latent_family,
        noise_model=noise_model,
        shared_load=bool(tree.get("shared_load", False)),
        counts=counts,
        device_types=types,
        behaviors=behaviors,
        overrides=overrides,
        duplicates=duplicates,
        constants=constants,
        devices=devices,
    )


def _unit_noise(rng, family: str, shape) -> np.ndarray:
    """Zero-mean, unit-variance draws."""
    if family == "uniform":
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), shape)
    return rng.standard_normal(shape)


def _type_profile(spec: SyntheticSpec, name: str, seed: int, free: list):
    """Baseline levels, per-feature spread and latent loadings for a type."""
    prof = spec.device_types[name]
    if prof.inherit is not None:
        base, _, loadings = _type_profile(spec, prof.inherit, seed, free)
        rng = make_rng(seed, SYNTH, "profile", name)
        ratio = prof.location / spec.device_types[prof.inherit].location
        base = base * ratio * np.exp(prof.jitter * rng.standard_normal(base.size))
        return base, prof.cv * base, loadings
    rng = make_rng(seed, SYNTH, "profile", name)
    n = len(free)
    base = prof.location * np.exp(prof.profile_spread * rng.standard_normal(n))
    scale = prof.cv * base
    loadings = rng.standard_normal((spec.latent_dim, n))
    if spec.shared_load:
        # first latent factor drives every feature the same way (overall activity)
        loadings[0] = np.abs(loadings[0]) + 1.0
    loadings /= np.linalg.norm(loadings, axis=0, keepdims=True)
    return base, scale, loadings


def synthesize(spec: SyntheticSpec | None = None, seed: int = 0) -> Dataset:
    """Generate a labelled fingerprint table for every device and behavior."""
    spec = spec or SyntheticSpec.default()
    n = spec.n_features
    derived = set(spec.duplicates) | set(spec.constants)
    free = [j for j in range(n) if j not in derived]
    col = {j: i for i, j in enumerate(free)}
    w = spec.latent_weight

    devices, behaviors, blocks, times = [], [], [], []
    for dev_name in spec.devices:
        device = Device(dev_name)
        tname = device.device_type.value
        base, scale, loadings = _type_profile(spec, tname, seed, free)
        clock = 0.0
        for behavior in BEHAVIORS:
            m = spec.count(behavior)
            if m == 0:
                continue
            eff = spec.effect(device.device_type, behavior)
            rng = make_rng(seed, SYNTH, dev_name, behavior.value)
            z = _unit_noise(rng, spec.latent_family, (m, spec.latent_dim))
            eps = _unit_noise(rng, eff.family, (m, len(free)))
            unit = w * (z @ loadings) + np.sqrt(1.0 - w * w) * eps
            shift = np.zeros(len(free))
            spread = np.ones(len(free))
            for j in eff.features:
                if j in col:
                    shift[col[j]] = eff.shift
                    spread[col[j]] = eff.spread
            if spec.noise_model == "multiplicative":
                # cv is the log-scale spread, so shifts are multiplicative too
                x_free = base * np.exp((scale / base) * (shift + spread * unit))
            else:
                x_free = base + scale * (shift + spread * unit)
            x = np.empty((m, n))
            x[:, free] = np.maximum(x_free, 0.0)
            for j, c in spec.constants.items():
                x[:, j] = c
            for j, (src, slope, intercept) in spec.duplicates.items():
                x[:, j] = slope * x[:, src] + intercept
            blocks.append(x)
            devices += [device] * m
            behaviors += [behavior] * m
            times.append(clock + WINDOW_SECONDS * np.arange(m))
            clock += WINDOW_SECONDS * m
    if not blocks:
        return Dataset.empty(n)
    return Dataset(devices, behaviors, np.vstack(blocks), np.concatenate(times))
