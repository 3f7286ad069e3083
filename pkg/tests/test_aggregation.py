import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedspectre.aggregation import WeightedUpdate, aggregate, coordinate_median, fed_avg, trimmed_mean
from fedspectre.errors import InsufficientParticipantsError, ProtocolError, ShapeError
from fedspectre.nn import ParameterVector


def pv(x, layout="t"):
    return ParameterVector(np.asarray(x, dtype=float), layout)


def oracle_trimmed(M, k):
    out = []
    for col in M.T:
        s = sorted(col.tolist())
        out.append(np.mean(s[k:len(s) - k]))
    return np.array(out)


def oracle_median(M):
    out = []
    for col in M.T:
        s = sorted(col.tolist())
        n = len(s)
        out.append(s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2)
    return np.array(out)


def test_fedavg_weights_by_dataset_size():
    out = fed_avg([WeightedUpdate(pv([0.0, 0.0]), 1), WeightedUpdate(pv([4.0, 8.0]), 3)])
    assert np.allclose(out.values, [3.0, 6.0])
    assert out.layout == "t"


def test_plain_vectors_count_as_equal_weight():
    assert np.allclose(fed_avg([pv([1.0]), pv([3.0])]).values, [2.0])


def test_trimmed_mean_drops_extremes():
    ups = [pv([v]) for v in (1.0, 2.0, 3.0, 100.0, -100.0)]
    assert trimmed_mean(ups, 1).values[0] == 2.0
    assert trimmed_mean(ups, 2).values[0] == 2.0


def test_trimmed_mean_needs_enough_updates():
    with pytest.raises(InsufficientParticipantsError):
        trimmed_mean([pv([1.0])] * 4, 2)
    with pytest.raises(InsufficientParticipantsError):
        aggregate("trimmed_mean", [pv([1.0])] * 2)


def test_median_even_count_averages_middle():
    assert coordinate_median([pv([v]) for v in (1.0, 2.0, 10.0, 20.0)]).values[0] == 6.0


def test_errors():
    with pytest.raises(ProtocolError):
        fed_avg([])
    with pytest.raises(ShapeError):
        fed_avg([pv([1.0]), pv([1.0], "other")])
    with pytest.raises(ProtocolError):
        aggregate("krum", [pv([1.0])])
    with pytest.raises(ProtocolError):
        WeightedUpdate(pv([1.0]), 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 19).flatmap(lambda n: arrays(np.float64, (n, 7), elements=st.floats(-1e6, 1e6))))
def test_rules_match_sort_oracle(M):
    ups = [pv(row) for row in M]
    assert np.array_equal(coordinate_median(ups).values, oracle_median(M))
    assert np.allclose(trimmed_mean(ups, 1).values, oracle_trimmed(M, 1), rtol=1e-12, atol=1e-6)
    if M.shape[0] > 4:
        assert np.allclose(trimmed_mean(ups, 2).values, oracle_trimmed(M, 2), rtol=1e-12, atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (5, 4), elements=st.floats(-100, 100)), st.permutations(range(5)))
def test_rules_are_permutation_invariant(M, perm):
    a = [pv(r) for r in M]
    b = [a[i] for i in perm]
    for rule in ("trimmed_mean", "trimmed_mean_2", "median"):
        assert np.array_equal(aggregate(rule, a).values, aggregate(rule, b).values)
    assert np.allclose(aggregate("fedavg", a).values, aggregate("fedavg", b).values)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-50, 50)), st.integers(1, 9))
def test_identical_updates_are_a_fixed_point(w, n):
    ups = [pv(w)] * n
    for rule in ("fedavg", "median"):
        assert np.allclose(aggregate(rule, ups).values, w)
