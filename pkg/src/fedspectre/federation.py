"""Coordinator and participant logic for federated training.

The coordinator runs in-process.  Every exchange with participants goes
through explicit message objects (summaries, min/max reports, parameter
uploads, thresholds) so the transport could be swapped out.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import adversary as adv
from .aggregation import MIN_PARTICIPANTS, RULES, WeightedUpdate, aggregate
from .data import Dataset, Device
from .errors import ConfigError, ThresholdError
from .nn import (
    BatchNorm,
    ModelParams,
    OptimizerState,
    ParameterVector,
    build_model,
    forward,
    loss_value,
    reconstruction_errors,
    train_epoch,
)
from .preprocessing import FeaturePlan, ScalingHandshake, zscore_outlier_filter
from .rng import ADVERSARY, SELECT, SHUFFLE, make_rng

log = logging.getLogger(__name__)

THRESHOLD_SIGMAS = 3.0
THRESHOLD_Z_LIMIT = 1.5


@dataclass
class FederationConfig:
    model: str = "autoencoder"
    aggregation: str = "fedavg"
    rounds: int = 15
    local_epochs: int = 5
    batch_size: int = 64
    client_fraction: float = 1.0
    learning_rate: float = 1e-3
    momentum: float = 0.9
    early_stop_delta: float = 1e-4
    seed: int = 0
    hidden: int | None = None

    def __post_init__(self):
        if self.model not in ("autoencoder", "mlp"):
            raise ConfigError(f"model must be 'autoencoder' or 'mlp', got {self.model!r}")
        if self.aggregation not in RULES:
            raise ConfigError(f"unknown aggregation {self.aggregation!r}; choose from {sorted(RULES)}")
        if not 0 < self.client_fraction <= 1:
            raise ConfigError("client_fraction must lie in (0, 1]")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.local_epochs < 0:
            raise ConfigError("local_epochs must be >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")

    @property
    def loss(self) -> str:
        return "mse" if self.model == "autoencoder" else "bce"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ParticipantState:
    """A federation member.  Raw sets are kept next to their scaled matrices."""

    id: int
    device: Device
    train: Dataset | None = None
    val: Dataset | None = None
    test: Dataset | None = None
    role: adv.AdversaryRole | None = None
    train_labels: np.ndarray | None = None
    val_labels: np.ndarray | None = None
    n_k: int | None = None
    X_train: np.ndarray | None = field(default=None, repr=False)
    X_val: np.ndarray | None = field(default=None, repr=False)
    threshold: float | None = None

    @property
    def honest(self) -> bool:
        return self.role is None

    @property
    def uploads_model_attack(self) -> bool:
        return self.role is not None and self.role.spec.kind in adv.MODEL_ATTACKS

    @property
    def has_training_data(self) -> bool:
        return self.train is not None and len(self.train) > 0

    def weight(self) -> int:
        if self.n_k is not None:
            return max(int(self.n_k), 1)
        return max(len(self.X_train) if self.X_train is not None else 0, 1)


def prepare(participants: list[ParticipantState], config: FederationConfig, absolute_correlation=False) -> FeaturePlan:
    """Filter local sets and fix the global feature plan.

    Each data-holding participant drops z-score outliers from its train and
    validation sets, reports a feature summary and then min/max over the
    announced features; all sets are scaled with the resulting plan.
    """
    handshake = ScalingHandshake()
    trainers = [p for p in participants if p.has_training_data]
    if not trainers:
        raise ConfigError("no participant holds training data")
    for p in trainers:
        before_train, before_val = p.train, p.val
        p.train, p.val = zscore_outlier_filter(p.train, p.val if p.val is not None else Dataset.empty(p.train.n_features))
        if p.train_labels is not None:
            p.train_labels = _keep_labels(before_train, p.train, p.train_labels)
        if p.val_labels is not None and before_val is not None:
            p.val_labels = _keep_labels(before_val, p.val, p.val_labels)
        handshake.report_summary(p.id, p.train.features)
    handshake.announce_features(absolute_correlation)
    for p in trainers:
        handshake.report_minmax(p.id, p.train.features)
    plan = handshake.finalize()
    for p in trainers:
        p.X_train = plan.transform(p.train.features)
        p.X_val = plan.transform(p.val.features) if p.val is not None else np.zeros((0, plan.n_features))
        if config.model == "mlp":
            if p.train_labels is None:
                p.train_labels = p.train.labels
            if p.val_labels is None:
                p.val_labels = p.val.labels
    return plan


def _keep_labels(before: Dataset, after: Dataset, labels):
    pos = {rid: i for i, rid in enumerate(before.ids.tolist())}
    return np.asarray(labels)[[pos[r] for r in after.ids.tolist()]]


def _targets(p: ParticipantState, config: FederationConfig, which: str):
    X = p.X_train if which == "train" else p.X_val
    if config.model == "autoencoder":
        return X, X
    y = p.train_labels if which == "train" else p.val_labels
    return X, np.asarray(y, dtype=np.float64).reshape(-1, 1)


def validation_loss(model: ModelParams, p: ParticipantState, config: FederationConfig) -> float:
    X, T = _targets(p, config, "val")
    if X is None or len(X) == 0:
        return float("nan")
    out, _ = forward(model, X, "eval")
    return loss_value(config.loss, out, T)


def client_update(p: ParticipantState, w: ParameterVector, template: ModelParams, config: FederationConfig,
                  round_index: int = 0, epochs: int | None = None, batch_size: int | None = None):
    """Local minibatch SGD from ``w`` with per-participant early stopping.

    Returns ``(params, info)``; ``params`` is ``None`` when the participant
    has no training data.  Training stops after the first epoch whose
    validation loss fails to improve on the best so far by more than
    ``early_stop_delta``; the weights at that point are returned.
    """
    epochs = config.local_epochs if epochs is None else epochs
    batch_size = config.batch_size if batch_size is None else batch_size
    info = {"epochs": 0, "train_loss": None, "val_loss": None}
    if p.X_train is None or len(p.X_train) < 2:
        log.warning("participant %s has no usable training data; skipped", p.id)
        return None, info
    model = template.unflatten(w)
    if epochs == 0:
        return w.copy(), info
    opt = OptimizerState(config.learning_rate, config.momentum)
    rng = make_rng(config.seed, SHUFFLE, p.id, round_index)
    X, T = _targets(p, config, "train")
    best = validation_loss(model, p, config)
    for _ in range(epochs):
        info["train_loss"] = train_epoch(model, opt, X, T, config.loss, batch_size, rng)
        info["epochs"] += 1
        current = validation_loss(model, p, config)
        info["val_loss"] = current
        if math.isnan(current):
            continue
        if not best - current > config.early_stop_delta:
            break
        best = current
    return model.flatten(), info


def local_threshold(model: ModelParams, normal_val) -> float:
    """Mean plus three population standard deviations of reconstruction MSE."""
    X = np.asarray(normal_val, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ThresholdError("threshold needs a non-empty validation set")
    return threshold_from_errors(reconstruction_errors(model, X))


def threshold_from_errors(errors) -> float:
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        raise ThresholdError("no reconstruction errors")
    return float(errors.mean() + THRESHOLD_SIGMAS * errors.std())


def federated_threshold(thresholds, z_limit: float = THRESHOLD_Z_LIMIT) -> float:
    """Maximum of the thresholds whose |z| within the list is <= ``z_limit``."""
    t = np.asarray(list(thresholds), dtype=np.float64)
    if t.size == 0:
        raise ThresholdError("no thresholds reported")
    sigma = t.std()
    if sigma == 0:
        return float(t.max())
    z = np.abs((t - t.mean()) / sigma)
    return float(t[z <= z_limit].max())


@dataclass
class GlobalModelState:
    config: FederationConfig
    template: ModelParams
    params: ParameterVector
    round: int = 0
    threshold: float | None = None
    thresholds: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    plan: FeaturePlan | None = None

    def model(self) -> ModelParams:
        return self.template.unflatten(self.params)


def select_clients(K: int, fraction: float, seed: int, round_index: int) -> list[int]:
    """Indices of the m = max(ceil(C*K), 1) clients taking part in a round."""
    m = max(math.ceil(fraction * K - 1e-9), 1)
    if m >= K:
        return list(range(K))
    rng = make_rng(seed, SELECT, round_index)
    return sorted(int(i) for i in rng.choice(K, size=m, replace=False))


def broadcast_and_collect(participants, selected, w, template, config, round_index):
    """Honest members train; adversaries return their crafted uploads.

    Output is ordered by participant id.
    """
    members = [participants[i] for i in selected]
    K = len(members)
    f_cancel = sum(1 for p in members if p.role is not None and p.role.spec.kind == "model_cancel")
    updates, infos = [], {}
    for p in sorted(members, key=lambda q: q.id):
        if p.uploads_model_attack:
            rng = make_rng(config.seed, ADVERSARY, p.id, round_index)
            if p.role.spec.kind == "model_cancel":
                params = adv.cancel_update(w, K, f_cancel)
            else:
                params = adv.random_update(w, rng, p.role.spec.sigma)
            info = {"epochs": 0, "train_loss": None, "val_loss": None, "attack": p.role.spec.kind}
        else:
            params, info = client_update(p, w, template, config, round_index)
            if params is None:
                infos[p.id] = info
                continue
        info["upload_norm"] = float(np.linalg.norm(params.values))
        infos[p.id] = info
        updates.append((p.id, WeightedUpdate(params, p.weight())))
    return updates, infos


def _running_slices(template: ModelParams):
    """(mean, var) index slices of every batch-norm layer in the flat vector."""
    out, offset = [], 0
    for layer in template.layers:
        if isinstance(layer, BatchNorm):
            n = layer.gamma.size
            start = offset + 2 * n
            out.append((slice(start, start + n), slice(start + n, start + 2 * n)))
        offset += sum(a.size for a in layer.state())
    return out


def to_moments(vector: ParameterVector, template: ModelParams) -> ParameterVector:
    """Swap running variances for raw second moments E[x^2].

    Averaging second moments (rather than variances) pools the statistics
    of participants whose activations sit at different means.
    """
    v = vector.values.copy()
    for mean, var in _running_slices(template):
        v[var] = v[var] + v[mean] ** 2
    return ParameterVector(v, vector.layout)


def from_moments(vector: ParameterVector, template: ModelParams) -> ParameterVector:
    v = vector.values.copy()
    for mean, var in _running_slices(template):
        v[var] = np.maximum(v[var] - v[mean] ** 2, 0.0)
    return ParameterVector(v, vector.layout)


def run_federation(config: FederationConfig, participants: list[ParticipantState],
                   plan: FeaturePlan | None = None) -> GlobalModelState:
    """Run all rounds of federated training, then fix the global threshold.

    Participants must already be prepared (see :func:`prepare`) unless
    ``plan`` is None, in which case they are prepared here.
    """
    if plan is None:
        plan = prepare(participants, config)
    K = len(participants)
    m = max(math.ceil(config.client_fraction * K - 1e-9), 1)
    need = MIN_PARTICIPANTS[config.aggregation]
    if m < need:
        raise ConfigError(f"{config.aggregation} needs at least {need} clients per round, config selects {m}")
    for i, p in enumerate(participants):
        if p.id != i:
            raise ConfigError("participant ids must be 0..K-1 in order")

    template = build_model(config.model, plan.n_features, config.seed, config.hidden)
    state = GlobalModelState(config, template, template.flatten(), plan=plan)
    for t in range(config.rounds):
        selected = select_clients(K, config.client_fraction, config.seed, t)
        updates, infos = broadcast_and_collect(participants, selected, state.params, template, config, t)
        if not updates:
            raise ConfigError(f"round {t}: no participant produced an update")
        moments = [WeightedUpdate(to_moments(u.params, template), u.n_k) for _, u in updates]
        state.params = from_moments(aggregate(config.aggregation, moments), template)
        state.round = t + 1
        state.trace.append({
            "round": t + 1,
            "selected": selected,
            "participants": {pid: infos[pid] for pid in sorted(infos)},
            "global_norm": float(np.linalg.norm(state.params.values)),
        })

    if config.model == "autoencoder":
        final = state.model()
        for p in participants:
            t = participant_threshold(p, final, config)
            if t is not None:
                state.thresholds[p.id] = t
                p.threshold = t
        state.threshold = federated_threshold([state.thresholds[k] for k in sorted(state.thresholds)])
    return state


def participant_threshold(p: ParticipantState, model: ModelParams, config: FederationConfig):
    """The threshold a participant reports, or None if it has nothing to say."""
    if p.role is not None and p.role.threshold_overstatement is not None:
        rng = make_rng(config.seed, ADVERSARY, p.id, "threshold")
        return adv.overstate_threshold(rng, *p.role.threshold_overstatement)
    if p.X_val is None or len(p.X_val) == 0:
        return None
    return local_threshold(model, p.X_val)
