"""scikit-learn style wrappers around the detector models.

Both estimators expect features that are already selected and scaled (see
:class:`fedspectre.preprocessing.FederatedMinMaxScaler`).  ``fit`` trains on
a single site with the same loop the federation uses, so a fitted estimator
is the centralized counterpart of a federated run with identical
hyperparameters.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Device
from .federation import FederationConfig, GlobalModelState, ParticipantState, local_threshold, run_federation
from .nn import logits, reconstruction_errors, sigmoid
from .preprocessing import FeaturePlan


def _identity_plan(d):
    return FeaturePlan(list(range(d)), np.zeros(d), np.ones(d))


class _DetectorBase(BaseEstimator):
    _model_kind = ""

    def __init__(self, hidden=None, rounds=15, local_epochs=5, batch_size=64, learning_rate=1e-3,
                 momentum=0.9, early_stop_delta=1e-4, random_state=0):
        self.hidden = hidden
        self.rounds = rounds
        self.local_epochs = local_epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.early_stop_delta = early_stop_delta
        self.random_state = random_state

    def _config(self) -> FederationConfig:
        return FederationConfig(
            model=self._model_kind,
            aggregation="fedavg",
            rounds=self.rounds,
            local_epochs=self.local_epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            early_stop_delta=self.early_stop_delta,
            seed=0 if self.random_state is None else int(self.random_state),
            hidden=self.hidden,
        )

    def _train(self, participant: ParticipantState, d: int) -> GlobalModelState:
        state = run_federation(self._config(), [participant], plan=_identity_plan(d))
        self.state_ = state
        self.model_ = state.model()
        self.n_features_in_ = d
        return state


class AutoencoderDetector(_DetectorBase):
    """Reconstruction-error anomaly detector.

    ``predict`` returns 1 for attack (MSE strictly above ``threshold_``) and
    0 for normal.
    """

    _model_kind = "autoencoder"

    def fit(self, X, y=None, X_val=None):
        X = check_array(X, ensure_min_samples=2)
        X_val = X if X_val is None else check_array(X_val)
        p = ParticipantState(0, Device.RPI3, X_train=X, X_val=X_val)
        self._train(p, X.shape[1])
        self.threshold_ = local_threshold(self.model_, X_val)
        return self

    @classmethod
    def from_state(cls, state: GlobalModelState) -> "AutoencoderDetector":
        c = state.config
        est = cls(c.hidden, c.rounds, c.local_epochs, c.batch_size, c.learning_rate, c.momentum,
                  c.early_stop_delta, c.seed)
        est.state_ = state
        est.model_ = state.model()
        est.threshold_ = state.threshold
        est.n_features_in_ = est.model_.input_dim
        return est

    def score_samples(self, X):
        check_is_fitted(self, "model_")
        return reconstruction_errors(self.model_, check_array(X))

    def predict(self, X):
        return (self.score_samples(X) > self.threshold_).astype(int)


class MLPDetector(ClassifierMixin, _DetectorBase):
    """Binary normal/attack classifier on the MLP logit (tie -> normal)."""

    _model_kind = "mlp"

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y, ensure_min_samples=2)
        if X_val is None:
            X_val, y_val = X, y
        p = ParticipantState(0, Device.RPI3, X_train=X, X_val=check_array(X_val),
                             train_labels=np.asarray(y, dtype=np.float64),
                             val_labels=np.asarray(y_val, dtype=np.float64))
        self._train(p, X.shape[1])
        self.classes_ = np.array([0, 1])
        return self

    @classmethod
    def from_state(cls, state: GlobalModelState) -> "MLPDetector":
        c = state.config
        est = cls(c.hidden, c.rounds, c.local_epochs, c.batch_size, c.learning_rate, c.momentum,
                  c.early_stop_delta, c.seed)
        est.state_ = state
        est.model_ = state.model()
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = est.model_.input_dim
        return est

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return logits(self.model_, check_array(X))

    def predict_proba(self, X):
        p = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)


def detector_from_state(state: GlobalModelState):
    if state.config.model == "autoencoder":
        return AutoencoderDetector.from_state(state)
    return MLPDetector.from_state(state)
