import math

import numpy as np
import pytest

from oracles import conv_valid_loop, finite_difference_check
from mfeo.cnn import (
    CnnModel,
    TrainConfig,
    conv_forward,
    forward,
    forward_maps,
    init_model,
    load_model,
    loss,
    loss_and_grads,
    predict,
    predict_proba,
    reshape_to_map,
    save_model,
    sigmoid,
    softmax,
    subsample_forward,
    train,
)


def toy_set(n=10, d=40, seed=0):
    """Two classes whose feature vectors differ in where the mass sits."""
    rng = np.random.default_rng(seed)
    X = rng.normal(0, 0.3, (n, d))
    y = np.arange(n) % 2
    X[y == 0, : d // 2] += 2.0
    X[y == 1, d // 2:] += 2.0
    return X, y


def tiny_model():
    # K=1, C=2, 6x6 input: conv gives 2x2, pooling gives a single value
    return CnnModel(np.full((1, 5, 5), 0.1), np.array([0.2]),
                    np.array([[1.0], [-2.0]]), np.array([0.0, 0.5]), side=6)


def test_reshape_examples(rng):
    v = rng.normal(size=1024)
    m = reshape_to_map(v)
    assert m.shape == (32, 32)
    assert np.allclose(m.ravel(), (v - v.mean()) / v.std(), rtol=0, atol=1e-12)
    v = rng.normal(size=310)
    m = reshape_to_map(v).ravel()
    assert not m[310:].any()
    assert np.allclose(m[:310], (v - v.mean()) / v.std(), rtol=0, atol=1e-12)
    assert np.count_nonzero(m[:310]) == 310
    with pytest.raises(ValueError, match="at most 1024"):
        reshape_to_map(np.ones(1025))


def test_conv_examples(rng):
    model = init_model(2, n_maps=3, seed=1)
    model.conv_bias[:] = [0.5, -1.0, 0.0]
    out = conv_forward(np.zeros((32, 32)), model)
    assert out.shape == (3, 28, 28)
    for k, b in enumerate(model.conv_bias):
        assert np.all(out[k] == sigmoid(b))
    model.kernels[:] = 0
    model.kernels[0, 0, 0] = 1.0
    model.conv_bias[:] = 0
    x = rng.normal(size=(32, 32))
    assert np.array_equal(conv_forward(x, model)[0], sigmoid(x[:28, :28]))


def test_conv_matches_loop(rng):
    model = init_model(2, n_maps=2, side=12, seed=4)
    model.conv_bias[:] = rng.normal(size=2)
    x = rng.normal(size=(12, 12))
    out = conv_forward(x, model)
    for k in range(2):
        z = conv_valid_loop(x, model.kernels[k], model.conv_bias[k])
        assert np.max(np.abs(out[k] - 1 / (1 + np.exp(-z)))) <= 1e-12
    assert np.all((out > 0) & (out < 1))


def test_subsample_examples(rng):
    assert np.all(subsample_forward(np.full((4, 6), 0.3)) == 0.3)
    assert subsample_forward(np.array([[0.0, 0.0], [1.0, 1.0]]))[0, 0] == 0.5
    x = rng.random((3, 8, 10))
    out = subsample_forward(x)
    for k in range(3):
        for i in range(4):
            for j in range(5):
                block = x[k, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                assert abs(out[k, i, j] - (block[0, 0] + block[0, 1] + block[1, 0] + block[1, 1]) / 4) < 1e-15
    assert abs(out.mean() - x.mean()) <= 1e-12
    with pytest.raises(ValueError):
        subsample_forward(np.zeros((3, 4)))


def test_forward_sums_to_one(rng):
    model = init_model(5, seed=2)
    p = forward(model, rng.normal(size=200))
    assert p.shape == (5,) and np.all(p > 0) and abs(p.sum() - 1) <= 1e-12


def test_zero_dense_gives_uniform(rng):
    model = init_model(4, seed=2)
    model.dense_w[:] = 0
    assert np.allclose(forward(model, rng.normal(size=100)), 0.25, rtol=0, atol=1e-15)
    assert predict(model, rng.normal(size=100)) == 0


def test_tiny_model_hand_computation():
    model = tiny_model()
    x = np.arange(36, dtype=float).reshape(6, 6) / 36
    acts = []
    for i in range(2):
        for j in range(2):
            z = 0.2 + sum(0.1 * x[i + u, j + v] for u in range(5) for v in range(5))
            acts.append(1 / (1 + math.exp(-z)))
    f = sum(acts) / 4
    logits = [f * 1.0 + 0.0, f * -2.0 + 0.5]
    e = [math.exp(a) for a in logits]
    expected = [e[0] / sum(e), e[1] / sum(e)]
    got = forward_maps(model, x[None])[0]
    assert np.max(np.abs(got - expected)) <= 1e-12
    # f is about 0.85 here, so class 0 wins; flip the dense layer to favour class 1
    model.dense_w[:] = [[-1.0], [2.0]]
    assert int(np.argmax(forward_maps(model, x[None])[0])) == 1
    feats = np.arange(36, dtype=float)
    assert predict(model, feats) == predict(model, feats) == 1


def test_softmax_shift_invariance(rng):
    z = rng.normal(size=(4, 6))
    assert np.max(np.abs(softmax(z) - softmax(z + 123.456))) <= 1e-12


def test_loss_values():
    assert loss(np.array([1.0, 0.0]), 0) == 0.0
    assert abs(loss(np.array([1 / math.e, 1 - 1 / math.e]), 0) - 1.0) < 1e-15
    assert abs(loss(np.full(4, 0.25), 3) - math.log(4)) < 1e-15
    assert loss(np.array([0.0, 1.0]), 0) == -math.log(1e-12)
    probes = [loss(np.array([p, 1 - p]), 0) for p in (0.9, 0.99, 0.999)]
    assert probes[0] > probes[1] > probes[2] > 0


def test_gradient_check(rng):
    model = init_model(3, n_maps=2, side=8, seed=0)
    model.conv_bias[:] = rng.normal(size=2) * 0.1
    model.dense_b[:] = rng.normal(size=3) * 0.1
    maps = rng.normal(size=(4, 8, 8))
    labels = np.array([0, 1, 2, 1])
    worst, n = finite_difference_check(lambda: loss_and_grads(model, maps, labels), model.params())
    assert n == 50 + 2 + 24 + 3
    assert worst < 1e-6


def test_zero_learning_rate_leaves_model_unchanged():
    X, y = toy_set()
    model = init_model(2, seed=3)
    trained, losses = train(model, X, y, TrainConfig(learning_rate=0.0, epochs=5))
    for name, p in model.params().items():
        assert np.array_equal(p, trained.params()[name])
    assert max(losses) - min(losses) <= 1e-12


def test_training_is_deterministic_and_pure():
    X, y = toy_set()
    model = init_model(2, seed=3)
    before = model.dense_w.copy()
    cfg = TrainConfig(epochs=10, batch_size=3, seed=7)
    a = train(model, X, y, cfg)
    b = train(model, X, y, cfg)
    assert a[1] == b[1]
    assert np.array_equal(model.dense_w, before)


def test_overfits_tiny_separable_set():
    X, y = toy_set()
    model, losses = train(init_model(2, seed=0), X, y, TrainConfig(learning_rate=0.5, epochs=500, batch_size=10))
    assert np.array_equal(predict_proba(model, X).argmax(axis=1), y)
    assert losses[-1] < losses[0]


def test_train_rejects_bad_inputs():
    X, y = toy_set()
    with pytest.raises(ValueError):
        train(init_model(2), X, y + 5, TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=1.5).validate()
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0).validate()


def test_non_finite_loss_aborts():
    X, y = toy_set()
    model = init_model(2, seed=0)
    # finite weights whose logits overflow
    model.dense_w[:] = 1e308
    with pytest.raises(FloatingPointError, match="epoch 0"), np.errstate(all="ignore"):
        train(model, X, y, TrainConfig(epochs=1))


def test_model_file_round_trip(tmp_path):
    model = init_model(3, n_maps=4, seed=5)
    model.conv_bias[:] = [0.1, -0.2, 1e-300, 3.5]
    save_model(model, tmp_path / "m.bin")
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw[:12] == b"MFEOCNNMODEL" and raw[12:16] == (1).to_bytes(4, "little")
    assert raw[16:32] == b"".join(v.to_bytes(4, "little") for v in (4, 5, 32, 3))
    assert len(raw) == 32 + 8 * (4 * 25 + 4 + 3 * 4 * 196 + 3)
    back = load_model(tmp_path / "m.bin")
    for name, p in model.params().items():
        assert p.tobytes() == back.params()[name].tobytes()
    (tmp_path / "bad.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        load_model(tmp_path / "bad.bin")
