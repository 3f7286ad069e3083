"""Data and model poisoning attacks.

Data poisoning rewrites an adversary's local sets before it trains
honestly; model poisoning replaces its upload.  Nothing here touches
another participant's state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Behavior, Dataset
from .errors import ContextError, SpecError
from .nn import ParameterVector

KINDS = ("behavior_injection", "label_flip", "model_cancel", "random_weights")
DATA_ATTACKS = ("behavior_injection", "label_flip")
MODEL_ATTACKS = ("model_cancel", "random_weights")

# assignment order for the k-th adversary of a device type
INJECTION_ORDER = (Behavior.SPOOF, Behavior.MIMIC, Behavior.DELAY, Behavior.DISORDER)
FLIP_ORDER = (
    {Behavior.NORMAL},
    {Behavior.NORMAL, Behavior.DELAY},
    {Behavior.NORMAL, Behavior.FREEZE},
    {Behavior.NORMAL, Behavior.NOISE},
)
NEAR_NORMAL = (Behavior.FREEZE, Behavior.REPEAT)

RANDOM_WEIGHT_STD = 3.0
OVERSTATEMENT_RANGE = (1e6, 1e9)


@dataclass
class AttackSpec:
    """One attack family and its parameters.

    ``behaviors`` is the injected behavior (injection) or the flipped set
    (label flip).  ``sigma`` is the random-weight standard deviation.
    """

    kind: str
    behaviors: tuple = ()
    sigma: float = RANDOM_WEIGHT_STD
    allow_near_normal: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown attack kind {self.kind!r}")
        self.behaviors = tuple(Behavior.parse(getattr(b, "value", b)) for b in self.behaviors)
        if self.kind == "behavior_injection":
            if len(self.behaviors) != 1:
                raise SpecError("behavior_injection takes exactly one behavior")
            if self.behaviors[0] in NEAR_NORMAL and not self.allow_near_normal:
                raise SpecError(f"injecting {self.behaviors[0].value} is disabled (set allow_near_normal)")
        if self.kind == "random_weights" and self.sigma < 0:
            raise SpecError("sigma must be non-negative")

    @property
    def is_data_attack(self) -> bool:
        return self.kind in DATA_ATTACKS


@dataclass
class AdversaryRole:
    spec: AttackSpec
    threshold_overstatement: tuple | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.threshold_overstatement is not None:
            low, high = self.threshold_overstatement
            if not low < high:
                raise SpecError("threshold overstatement needs low < high")
            self.threshold_overstatement = (float(low), float(high))


def inject_behavior(local_train: Dataset, behavior, source: Dataset, rng=None) -> Dataset:
    """Replace a training set with ``behavior`` samples of the same device.

    The result has the same size as ``local_train``; samples are drawn from
    ``source`` without replacement when it is large enough.
    """
    behavior = Behavior.parse(getattr(behavior, "value", behavior))
    n = len(local_train)
    if behavior == Behavior.NORMAL:
        return local_train
    devices = set(local_train.device.tolist()) or set(source.device.tolist())
    pool = np.flatnonzero((source.behavior == behavior.value) & np.isin(source.device, list(devices)))
    if pool.size == 0 and n > 0:
        raise SpecError(f"no {behavior.value} records available for device(s) {sorted(devices)}")
    if rng is None:
        rng = np.random.default_rng(0)
    idx = rng.choice(pool, size=n, replace=pool.size < n) if n else pool[:0]
    return source.subset(np.sort(idx))


def flip_labels(labels, behaviors_of_rows, behaviors) -> np.ndarray:
    """Flip binary labels of rows whose behavior is in ``behaviors``."""
    if labels is None:
        raise ContextError("label flipping needs labelled data")
    labels = np.asarray(labels, dtype=np.float64).copy()
    targets = {Behavior.parse(getattr(b, "value", b)).value for b in behaviors}
    mask = np.isin(np.asarray(behaviors_of_rows, dtype=object), list(targets))
    labels[mask] = 1.0 - labels[mask]
    return labels


def cancel_alpha(K: int, f: int) -> float:
    """Solve K - f + alpha*f = 0 for alpha."""
    if f < 1:
        raise SpecError("model canceling needs f >= 1")
    if f > K:
        raise SpecError(f"adversary count f={f} exceeds participant count K={K}")
    return (f - K) / f


def cancel_update(last_global: ParameterVector, K: int, f: int) -> ParameterVector:
    return ParameterVector(cancel_alpha(K, f) * last_global.values, last_global.layout)


def random_update(layout: ParameterVector | tuple, rng, sigma: float = RANDOM_WEIGHT_STD) -> ParameterVector:
    """i.i.d. N(0, sigma^2) entries shaped like ``layout``.

    ``layout`` is a template vector or a ``(layout_tag, size)`` pair.
    """
    if isinstance(layout, ParameterVector):
        tag, size = layout.layout, layout.values.size
    else:
        tag, size = layout
    return ParameterVector(rng.normal(0.0, sigma, size=size), tag)


def overstate_threshold(rng, low: float = OVERSTATEMENT_RANGE[0], high: float = OVERSTATEMENT_RANGE[1]) -> float:
    return float(rng.uniform(low, high))
