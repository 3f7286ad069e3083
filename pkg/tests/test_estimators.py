import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fedspectre.estimators import AutoencoderDetector, MLPDetector


@pytest.fixture(scope="module")
def blobs():
    rng = np.random.default_rng(0)
    normal = rng.uniform(0.2, 0.4, size=(300, 6))
    attack = rng.uniform(0.6, 0.9, size=(100, 6))
    return normal, attack


def test_autoencoder_detector_flags_far_points(blobs):
    normal, attack = blobs
    det = AutoencoderDetector(rounds=3, batch_size=16).fit(normal[:240], X_val=normal[240:])
    assert det.predict(attack).mean() > 0.9
    assert det.predict(normal[240:]).mean() < 0.1
    assert det.score_samples(attack).shape == (100,)


def test_mlp_detector_separates_blobs(blobs):
    normal, attack = blobs
    X = np.vstack([normal, attack])
    y = np.r_[np.zeros(len(normal)), np.ones(len(attack))]
    det = MLPDetector(rounds=3, batch_size=16, learning_rate=0.01).fit(X, y)
    assert det.score(X, y) > 0.95
    assert det.predict_proba(X).shape == (400, 2)
    assert np.allclose(det.predict_proba(X).sum(axis=1), 1.0)


def test_estimators_follow_sklearn_conventions(blobs):
    est = AutoencoderDetector(hidden=4, rounds=2)
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.predict(blobs[0])


def test_fit_is_deterministic(blobs):
    a = AutoencoderDetector(rounds=2, random_state=5).fit(blobs[0])
    b = AutoencoderDetector(rounds=2, random_state=5).fit(blobs[0])
    assert a.threshold_ == b.threshold_
    assert np.array_equal(a.score_samples(blobs[1]), b.score_samples(blobs[1]))
