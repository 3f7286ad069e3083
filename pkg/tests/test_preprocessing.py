import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedspectre.errors import ProtocolError
from fedspectre.preprocessing import (
    CorrelationFilter,
    FederatedMinMaxScaler,
    FeaturePlan,
    ScalingHandshake,
    correlation_filter,
    feature_summary,
    federated_minmax,
    local_minmax,
    scale,
    zscore_mask,
    zscore_outlier_filter,
)


def test_zscore_drops_outlier_rows():
    X = np.zeros((50, 3))
    X[:, 0] = np.arange(50) % 5
    X[7, 0] = 100.0
    keep = zscore_mask(X)
    assert not keep[7] and keep.sum() == 49
    train, val = zscore_outlier_filter(X, X[:10])
    assert len(train) == 49 and len(val) == 10


def test_zscore_constant_features_never_exclude():
    assert zscore_mask(np.ones((5, 2))).all()
    assert zscore_mask(np.zeros((0, 2))).size == 0


def test_correlation_filter_drops_constants_and_duplicates():
    rng = np.random.default_rng(0)
    a = rng.normal(size=100)
    b = rng.normal(size=100)
    X = np.column_stack([a, 2 * a + 3, np.full(100, 7.0), b, -a])
    assert correlation_filter(X) == [0, 3, 4]
    assert correlation_filter(X, absolute=True) == [0, 3]
    assert CorrelationFilter().fit(X).transform(X).shape == (100, 3)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (30, 4), elements=st.floats(-1e3, 1e3)), st.integers(1, 29))
def test_summaries_merge_exactly(X, cut):
    whole = feature_summary(X)
    merged = feature_summary(X[:cut]).merge(feature_summary(X[cut:]))
    assert np.allclose(whole.mean, merged.mean, atol=1e-9)
    assert np.allclose(whole.comoment, merged.comoment, rtol=1e-9, atol=1e-6)


def test_federated_minmax_union_and_unclipped_extrapolation():
    plan = federated_minmax([[0.0, 5.0], [1.0, 5.0]], [[2.0, 5.0], [4.0, 5.0]], [3, 9])
    # feature 9 is constant across everyone and is dropped
    assert plan.kept_indices == [3]
    raw = np.zeros(10)
    raw[3] = 8.0
    assert scale(raw, plan)[0] == 2.0
    raw[3] = 0.0
    assert scale(raw, plan)[0] == 0.0


def test_plan_validation():
    with pytest.raises(ProtocolError):
        FeaturePlan([], [], [])
    with pytest.raises(ProtocolError):
        FeaturePlan([2, 1], [0, 0], [1, 1])
    with pytest.raises(ProtocolError):
        FeaturePlan([0], [1.0], [0.0])
    with pytest.raises(ProtocolError):
        federated_minmax([[0.0]], [[1.0, 2.0]])


def test_handshake_matches_pooled_computation():
    rng = np.random.default_rng(1)
    parts = [rng.normal(size=(20, 5)) for _ in range(3)]
    for p in parts:
        p[:, 4] = 2 * p[:, 0]
    hs = ScalingHandshake()
    with pytest.raises(ProtocolError):
        hs.report_minmax(0, parts[0])
    for i, p in enumerate(parts):
        hs.report_summary(i, p)
    kept = hs.announce_features()
    for i, p in enumerate(parts):
        hs.report_minmax(i, p)
    plan = hs.finalize()
    pooled = np.vstack(parts)
    assert kept == correlation_filter(pooled) == [0, 1, 2, 3]
    lo, hi = local_minmax(pooled, kept)
    assert np.array_equal(plan.min, lo) and np.array_equal(plan.max, hi)


def test_federated_scaler_partial_fit():
    s = FederatedMinMaxScaler().partial_fit([[0.0, 1.0], [2.0, 1.0]]).partial_fit([[4.0, 1.0]])
    assert s.transform([[2.0, 1.0]]).tolist() == [[0.5]]
    s.fit([[0.0, 0.0], [1.0, 2.0]])
    assert s.transform([[1.0, 1.0]]).tolist() == [[1.0, 0.5]]
