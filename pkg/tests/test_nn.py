import numpy as np
import pytest

from fedspectre.errors import ArchitectureError, DegenerateBatchError, InvalidCacheError, InvalidLabelError, ShapeError
from fedspectre.nn import (
    LayerSpec,
    OptimizerState,
    ParameterVector,
    backward,
    build_autoencoder,
    build_mlp,
    build_model,
    forward,
    gelu,
    loss_bce_logits,
    loss_mse,
    reconstruction_errors,
    sgd_step,
    sigmoid,
    train_epoch,
)
from gradcheck import max_relative_error


def test_autoencoder_shapes_and_counts():
    m = build_autoencoder(68)
    assert [s.kind for s in m.specs] == ["dense", "batchnorm", "gelu", "dense", "gelu"]
    assert m.input_dim == m.output_dim == 68
    # 68*32+32 + 2*32 + 32*68+68
    assert m.n_learnable == 4516
    assert m.n_state == 4516 + 64
    out, _ = forward(m, np.zeros((5, 68)))
    assert out.shape == (5, 68)


def test_mlp_shapes_and_counts():
    m = build_mlp(68)
    assert m.output_dim == 1
    assert m.n_learnable == 68 * 256 + 256 + 2 * 256 + 256 + 1
    assert forward(m, np.zeros((3, 68)))[0].shape == (3, 1)


def test_same_seed_same_init():
    a = build_autoencoder(10, seed=4).flatten().values
    b = build_autoencoder(10, seed=4).flatten().values
    c = build_autoencoder(10, seed=5).flatten().values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_bad_architectures():
    with pytest.raises(ArchitectureError):
        build_autoencoder(0)
    with pytest.raises(ArchitectureError):
        build_model("cnn", 4)
    with pytest.raises(ArchitectureError):
        LayerSpec("gelu", 3, 4)


def test_forward_rejects_wrong_width_and_single_row_training():
    m = build_autoencoder(6)
    with pytest.raises(ShapeError):
        forward(m, np.zeros((2, 5)))
    with pytest.raises(DegenerateBatchError):
        forward(m, np.zeros((1, 6)), "train")


def test_eval_mode_is_pure_and_train_updates_running_stats():
    m = build_autoencoder(6, hidden=4)
    before = m.flatten().values.copy()
    X = np.random.default_rng(0).normal(size=(8, 6))
    forward(m, X, "eval")
    assert np.array_equal(before, m.flatten().values)
    forward(m, X, "train")
    bn = m.layers[1]
    assert not np.allclose(bn.running_mean, 0.0)


def test_gelu_values():
    assert gelu(np.array([0.0]))[0] == 0.0
    assert gelu(np.array([10.0]))[0] == pytest.approx(10.0)
    assert gelu(np.array([-1.0]))[0] == pytest.approx(-0.15865525393145707)


def test_losses():
    assert loss_mse(np.ones((2, 3)), np.zeros((2, 3))) == 1.0
    # log(2) at a zero logit, stable for huge logits
    assert loss_bce_logits(np.zeros((4, 1)), np.ones((4, 1))) == pytest.approx(np.log(2))
    assert loss_bce_logits(np.array([[800.0]]), np.array([[1.0]])) == pytest.approx(0.0)
    assert np.isfinite(loss_bce_logits(np.array([[-800.0]]), np.array([[1.0]])))
    with pytest.raises(InvalidLabelError):
        loss_bce_logits(np.zeros((1, 1)), np.array([[0.5]]))
    with pytest.raises(ShapeError):
        loss_mse(np.zeros(3), np.zeros(4))


def test_sigmoid_extremes():
    s = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.array_equal(s, [0.0, 0.5, 1.0])


def test_backward_requires_train_cache():
    m = build_mlp(4, hidden=4)
    _, cache = forward(m, np.zeros((2, 4)), "eval")
    with pytest.raises(InvalidCacheError):
        backward(m, cache, "bce", np.zeros((2, 1)))


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, size=(6, 8))
    rel, abs_ = max_relative_error(build_autoencoder(8, seed=seed, hidden=4), X, X, "mse")
    assert rel < 1e-4 and abs_ < 1e-8
    y = rng.integers(0, 2, size=(6, 1)).astype(float)
    rel, abs_ = max_relative_error(build_mlp(8, seed=seed, hidden=8), X, y, "bce")
    assert rel < 1e-4 and abs_ < 1e-8


def test_sgd_step_heavy_ball():
    m = build_mlp(2, hidden=2)
    start = m.flatten(running=False).values.copy()
    g = ParameterVector(np.ones(m.n_learnable), "")
    st = OptimizerState(learning_rate=0.1, momentum=0.5)
    sgd_step(m, g, st)
    assert np.allclose(m.flatten(running=False).values, start - 0.1)
    sgd_step(m, g, st)
    # second velocity is 0.5*1 + 1
    assert np.allclose(m.flatten(running=False).values, start - 0.1 - 0.15)
    with pytest.raises(ShapeError):
        sgd_step(m, ParameterVector(np.ones(3), ""), st)


def test_optimizer_rejects_bad_hyperparameters():
    with pytest.raises(ValueError):
        OptimizerState(learning_rate=0)
    with pytest.raises(ValueError):
        OptimizerState(momentum=1.0)


def test_training_reduces_reconstruction_error():
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 1, size=(200, 6))
    m = build_autoencoder(6, hidden=4)
    st = OptimizerState(learning_rate=0.05)
    before = reconstruction_errors(m, X).mean()
    for _ in range(30):
        train_epoch(m, st, X, X, "mse", 16, rng)
    assert reconstruction_errors(m, X).mean() < 0.5 * before


def test_flatten_load_round_trip_and_layout_check():
    m = build_autoencoder(5, hidden=3)
    v = m.flatten()
    v.values[:] = np.arange(v.values.size)
    m2 = build_autoencoder(5, hidden=3, seed=9).load(v)
    assert np.array_equal(m2.flatten().values, v.values)
    with pytest.raises(ShapeError):
        build_autoencoder(6, hidden=3).load(v)
    with pytest.raises(ShapeError):
        m.load(ParameterVector(np.zeros(3), v.layout))


def test_load_clamps_negative_running_variance():
    m = build_autoencoder(4, hidden=2)
    v = m.flatten()
    v.values[:] = -1.0
    m.load(v)
    assert np.all(m.layers[1].running_var == 0.0)
