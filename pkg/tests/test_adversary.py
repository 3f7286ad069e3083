import numpy as np
import pytest

from fedspectre import adversary as adv
from fedspectre.aggregation import fed_avg
from fedspectre.data import Behavior, Dataset, Device
from fedspectre.errors import ContextError, SpecError
from fedspectre.nn import ParameterVector


def _records():
    devices = [Device.RPI3] * 6 + [Device.RPI4_1] * 2
    behaviors = [Behavior.NORMAL] * 3 + [Behavior.SPOOF] * 3 + [Behavior.SPOOF] * 2
    return Dataset(devices, behaviors, np.arange(8 * 3, dtype=float).reshape(8, 3))


def test_attack_spec_validation():
    with pytest.raises(SpecError):
        adv.AttackSpec("poison_everything")
    with pytest.raises(SpecError):
        adv.AttackSpec("behavior_injection", ("spoof", "delay"))
    with pytest.raises(SpecError):
        adv.AttackSpec("behavior_injection", ("freeze",))
    assert adv.AttackSpec("behavior_injection", ("freeze",), allow_near_normal=True).behaviors == (Behavior.FREEZE,)
    with pytest.raises(SpecError):
        adv.AttackSpec("random_weights", sigma=-1.0)
    with pytest.raises(SpecError):
        adv.AdversaryRole(adv.AttackSpec("model_cancel"), threshold_overstatement=(5.0, 1.0))


def test_inject_behavior_keeps_size_and_device():
    data = _records()
    local = data.subset([0, 1, 2])
    out = adv.inject_behavior(local, "spoof", data, np.random.default_rng(0))
    assert len(out) == 3
    assert set(out.behavior) == {"spoof"}
    assert set(out.device) == {"RPi3"}


def test_inject_normal_is_identity_and_missing_pool_fails():
    data = _records()
    local = data.subset([0, 1])
    assert adv.inject_behavior(local, Behavior.NORMAL, data) is local
    with pytest.raises(SpecError):
        adv.inject_behavior(local, "delay", data)


def test_flip_labels():
    y = adv.flip_labels([0, 1, 1, 0], ["normal", "delay", "noise", "normal"], ["normal", "delay"])
    assert y.tolist() == [1.0, 0.0, 1.0, 1.0]
    with pytest.raises(ContextError):
        adv.flip_labels(None, [], [])


@pytest.mark.parametrize("K", range(2, 19))
def test_cancel_alpha_zeroes_equal_weight_fedavg(K):
    w = ParameterVector(np.random.default_rng(K).normal(size=20), "t")
    for f in range(1, K):
        ups = [w] * (K - f) + [adv.cancel_update(w, K, f)] * f
        assert np.max(np.abs(fed_avg(ups).values)) < 1e-12


def test_cancel_alpha_errors():
    with pytest.raises(SpecError):
        adv.cancel_alpha(5, 0)
    with pytest.raises(SpecError):
        adv.cancel_alpha(3, 4)


def test_random_update_is_seeded():
    w = ParameterVector(np.zeros(1000), "t")
    a = adv.random_update(w, np.random.default_rng(1), sigma=2.0)
    b = adv.random_update(("t", 1000), np.random.default_rng(1), sigma=2.0)
    assert np.array_equal(a.values, b.values)
    assert a.values.std() == pytest.approx(2.0, rel=0.1)


def test_overstated_threshold_range():
    rng = np.random.default_rng(0)
    vals = [adv.overstate_threshold(rng) for _ in range(100)]
    assert min(vals) >= 1e6 and max(vals) <= 1e9
