"""Server-side aggregation rules over flattened parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InsufficientParticipantsError, ProtocolError, ShapeError
from .nn import ParameterVector


@dataclass
class WeightedUpdate:
    params: ParameterVector
    n_k: int = 1

    def __post_init__(self):
        if self.n_k < 1:
            raise ProtocolError(f"n_k must be >= 1, got {self.n_k}")


def _stack(updates):
    if not updates:
        raise ProtocolError("no updates to aggregate")
    updates = [u if isinstance(u, WeightedUpdate) else WeightedUpdate(u) for u in updates]
    layout = updates[0].params.layout
    for u in updates:
        if u.params.layout != layout or u.params.values.shape != updates[0].params.values.shape:
            raise ShapeError(f"layout {u.params.layout!r} does not match {layout!r}")
    return updates, layout, np.stack([u.params.values for u in updates])


def fed_avg(updates) -> ParameterVector:
    """Weighted mean with weights n_k / sum(n_k)."""
    updates, layout, M = _stack(updates)
    n = np.array([u.n_k for u in updates], dtype=np.float64)
    return ParameterVector((n / n.sum()) @ M, layout)


def trimmed_mean(updates, k: int = 1) -> ParameterVector:
    """Per coordinate, drop the k largest and k smallest values, then average.

    The mean of the survivors is unweighted.  ``k=0`` is the plain mean.
    """
    updates, layout, M = _stack(updates)
    if k < 0:
        raise ValueError("k must be non-negative")
    if M.shape[0] <= 2 * k:
        raise InsufficientParticipantsError(f"trimmed mean with k={k} needs more than {2 * k} updates, got {M.shape[0]}")
    # stable sort keeps ties ordered by participant index
    S = np.sort(M, axis=0, kind="stable")
    return ParameterVector(S[k:M.shape[0] - k].mean(axis=0), layout)


def coordinate_median(updates) -> ParameterVector:
    """Per-coordinate median; even counts average the two middle values."""
    updates, layout, M = _stack(updates)
    return ParameterVector(np.median(M, axis=0), layout)


RULES = {
    "fedavg": fed_avg,
    "trimmed_mean": lambda u: trimmed_mean(u, 1),
    "trimmed_mean_2": lambda u: trimmed_mean(u, 2),
    "median": coordinate_median,
}

# smallest participant count each rule accepts
MIN_PARTICIPANTS = {"fedavg": 1, "trimmed_mean": 3, "trimmed_mean_2": 5, "median": 1}


def aggregate(rule: str, updates) -> ParameterVector:
    try:
        fn = RULES[rule]
    except KeyError:
        raise ProtocolError(f"unknown aggregation rule {rule!r}; choose from {sorted(RULES)}") from None
    return fn(updates)
