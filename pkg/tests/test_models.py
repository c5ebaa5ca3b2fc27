import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import unlearnkit as uk
from unlearnkit.errors import ArgumentError, NumericError, ShapeContractError
from unlearnkit.models import (
    ConstantObjective,
    CrossEntropyObjective,
    cross_entropy,
    softmax,
    zeros_like_params,
)
from unlearnkit.optim import OptimConfig

from conftest import linear_arch, linear_state, realized_central_difference, zero_state


def test_zero_weights_give_uniform_softmax(rng):
    state = zero_state(uk.make_mlp2(4, 5), 5)
    batch = rng.random((6, 4)).astype(np.float32)
    logits = uk.forward(state, batch)
    assert np.array_equal(logits, np.zeros((6, 5)))
    assert np.allclose(softmax(logits), 1 / 5)
    assert cross_entropy(logits, np.zeros(6, dtype=np.int64)) == pytest.approx(np.log(5), rel=1e-6)


def test_hand_set_weights_compute_by_hand():
    # two identity hidden layers keep non-negative inputs unchanged, so the
    # logits are just the head matrix applied to x
    arch = uk.make_mlp2(2, 2, hidden=2)
    state = zero_state(arch, 2)
    state.params[0]["W"][:] = np.eye(2)
    state.params[1]["W"][:] = np.eye(2)
    state.params[2]["W"][:] = np.array([[1.0, -2.0], [0.5, 3.0]])
    state.params[2]["b"][:] = np.array([0.25, -1.0])
    x = np.array([[0.2, 0.4]], dtype=np.float32)
    expected = x @ state.params[2]["W"] + state.params[2]["b"]
    assert np.allclose(uk.forward(state, x), expected, atol=1e-7)


def test_batch_independence(rng):
    state = uk.init_state(uk.make_cnn_s(3, side=8, channels=3), 3, 2)
    batch = rng.random((32, 8, 8, 3)).astype(np.float32)
    row = uk.forward(state, batch[:1])
    full = uk.forward(state, batch)
    assert np.allclose(row[0], full[0], atol=1e-6)


def test_forward_shape_contract():
    state = linear_state(4, 3)
    with pytest.raises(ShapeContractError):
        uk.forward(state, np.zeros((2, 5)))


def test_state_rejects_nonfinite_params():
    state = linear_state(4, 3)
    bad = [{k: v.copy() for k, v in g.items()} for g in state.params]
    bad[0]["W"][0, 0] = np.nan
    with pytest.raises(NumericError):
        uk.ClassifierState(state.arch, bad, 3)


def test_grad_params_constant_objective_is_zero(rng):
    state = uk.init_state(uk.make_mlp2(3, 4), 4, 1)
    grads = uk.grad_params(state, rng.random((5, 3)), ConstantObjective(2.5))
    for got, want in zip(grads, zeros_like_params(state)):
        for key in got:
            assert np.array_equal(got[key], want[key])


def test_grad_params_linear_softmax_closed_form(rng):
    state = linear_state(6, 4, seed=3)
    x = rng.random((8, 6))
    y = rng.integers(0, 4, 8)
    grads = uk.grad_params(state, x, CrossEntropyObjective(y))
    logits = uk.forward(state, x, dtype=np.float64)
    resid = softmax(logits)
    resid[np.arange(8), y] -= 1.0
    dW = x.T @ resid / 8
    db = resid.mean(axis=0)
    assert np.allclose(grads[0]["W"], dW, rtol=1e-6, atol=1e-12)
    assert np.allclose(grads[0]["b"], db, rtol=1e-6, atol=1e-12)


def test_grad_params_finite_difference_mlp(rng):
    state = uk.init_state(uk.make_mlp2(5, 3), 3, 9)
    assert state.num_params() <= 5000
    x = rng.random((7, 5)).astype(np.float32)
    y = rng.integers(0, 3, 7)
    obj = CrossEntropyObjective(y)
    grads = uk.grad_params(state, x, obj)
    checked = 0
    while checked < 50:
        li = int(rng.integers(len(state.params)))
        key = "W" if rng.random() < 0.8 else "b"
        arr = state.params[li][key]
        idx = tuple(int(rng.integers(0, d)) for d in arr.shape)
        fd = realized_central_difference(lambda: obj(state, x), arr, idx, 1e-4)
        an = grads[li][key][idx]
        if abs(fd) < 1e-10 and abs(an) < 1e-10:
            continue
        assert an == pytest.approx(fd, rel=1e-3, abs=1e-9)
        checked += 1


def test_grad_input_zero_model(rng):
    state = zero_state(linear_arch(4, 3), 3)
    g = uk.grad_input(state, rng.random(4).astype(np.float32), 1)
    assert np.array_equal(g, np.zeros(4))


def test_grad_input_linear_closed_form(rng):
    state = linear_state(5, 3, seed=4)
    x = rng.random(5)
    g = uk.grad_input(state, x, 2)
    logits = uk.forward(state, x[None], dtype=np.float64)
    resid = softmax(logits)[0]
    resid[2] -= 1.0
    expected = state.params[0]["W"].astype(np.float64) @ resid
    assert np.allclose(g, expected, rtol=1e-6, atol=1e-12)


def test_grad_input_maximize_flips_sign(rng):
    state = linear_state(5, 3, seed=4)
    x = rng.random(5)
    assert np.allclose(
        uk.grad_input(state, x, 1, "maximize"), -uk.grad_input(state, x, 1, "minimize")
    )


def test_grad_input_finite_difference_cnn(rng):
    state = uk.init_state(uk.make_cnn_s(3, side=8, channels=3), 3, 5)
    x = rng.random((2, 8, 8, 3)).astype(np.float32)
    y = np.array([0, 2])
    obj = CrossEntropyObjective(y)
    g = uk.grad_input(state, x, y)
    checked = 0
    while checked < 20:
        idx = tuple(int(rng.integers(0, d)) for d in x.shape)
        fd = realized_central_difference(
            lambda: obj.value(uk.forward(state, x, dtype=np.float64)), x, idx, 1e-4
        )
        if abs(fd) < 1e-10:
            continue
        assert g[idx] == pytest.approx(fd, rel=1e-3, abs=1e-9)
        checked += 1


def test_pretrain_fits_separable_blobs():
    ds = uk.make_synthetic(2, 20, 4, 0.05, 3)
    state0 = uk.init_state(uk.make_mlp2(4, 2), 2, 1)
    cfg = OptimConfig(lr=0.1, momentum=0.9, weight_decay=0.0, epochs=200, batch_size=16, seed=1)
    state = uk.pretrain(state0, ds, cfg)
    assert state.metadata["pretrain"]["train_accuracy"] == 1.0
    assert uk.accuracy(state, ds) == 1.0


def test_pretrain_zero_epochs_returns_input_params():
    ds = uk.make_synthetic(2, 5, 3, 0.1, 0)
    state0 = uk.init_state(uk.make_mlp2(3, 2), 2, 0)
    state = uk.pretrain(state0, ds, OptimConfig(lr=0.1, epochs=0, seed=0))
    for a, b in zip(state0.params, state.params):
        for key in a:
            assert np.array_equal(a[key], b[key])


def test_pretrain_deterministic():
    ds = uk.make_synthetic(3, 10, 4, 0.2, 5)
    state0 = uk.init_state(uk.make_mlp2(4, 3), 3, 2)
    cfg = OptimConfig(lr=0.05, epochs=5, batch_size=8, seed=9)
    a = uk.pretrain(state0, ds, cfg)
    b = uk.pretrain(state0, ds, cfg)
    for ga, gb in zip(a.params, b.params):
        for key in ga:
            assert np.array_equal(ga[key], gb[key])


def test_accuracy_perfect_and_empty(blob_problem):
    ds, state = blob_problem
    assert uk.accuracy(state, ds) == 1.0
    with pytest.raises(ArgumentError):
        uk.accuracy(state, ds.take([]))


def test_accuracy_counting_oracle(rng):
    ds = uk.make_synthetic(4, 25, 3, 0.5, 6)
    state = linear_state(3, 4, seed=8)
    preds = uk.predict(state, ds.inputs)
    want = sum(int(p == l) for p, l in zip(preds, ds.labels)) / len(ds)
    assert uk.accuracy(state, ds) == want


def test_accuracy_with_override_labels(blob_problem):
    ds, state = blob_problem
    wrong = (ds.labels + 1) % 3
    assert uk.accuracy(state, ds, labels=wrong) == 0.0


def test_checkpoint_roundtrip_bit_identical(tmp_path, blob_problem):
    _, state = blob_problem
    path = tmp_path / "model.ckpt"
    uk.save_checkpoint(state, path)
    loaded = uk.load_checkpoint(path)
    assert loaded.arch == state.arch
    assert loaded.num_classes == state.num_classes
    assert loaded.metadata == state.metadata
    for a, b in zip(state.params, loaded.params):
        for key in a:
            assert a[key].dtype == np.float32
            assert np.array_equal(a[key], b[key])


def test_checkpoint_rejects_wrong_format(tmp_path):
    ds = uk.make_synthetic_images(2, 2, side=8, seed=0)
    uk.save_dataset(ds, tmp_path / "d")
    with pytest.raises(ArgumentError):
        uk.load_checkpoint(tmp_path / "d" / "index.json")


@settings(max_examples=25, deadline=None)
@given(shift=st.floats(-50, 50), seed=st.integers(0, 10_000))
def test_argmax_invariant_to_constant_logit_shift(shift, seed):
    r = np.random.default_rng(seed)
    logits = r.standard_normal((4, 6))
    assert np.array_equal(np.argmax(logits + shift, axis=1), np.argmax(logits, axis=1))


def test_forward_with_activations_names():
    state = uk.init_state(uk.make_cnn_s(3, side=8, channels=3), 3, 0)
    _, acts = uk.forward_with_activations(state, np.zeros((2, 8, 8, 3), dtype=np.float32))
    assert [name for name, _ in acts] == ["conv1_relu", "conv2_relu", "dense1_relu", "logits"]
    state = uk.init_state(uk.make_mlp2(4, 3), 3, 0)
    _, acts = uk.forward_with_activations(state, np.zeros((2, 4), dtype=np.float32))
    assert [name for name, _ in acts] == ["dense1_relu", "dense2_relu", "logits"]


def test_grad_params_finite_difference_cnn(rng):
    state = uk.init_state(uk.make_cnn_s(3, side=8, channels=3), 3, 11)
    x = rng.random((3, 8, 8, 3)).astype(np.float32)
    y = rng.integers(0, 3, 3)
    obj = CrossEntropyObjective(y)
    grads = uk.grad_params(state, x, obj)
    checked = 0
    while checked < 30:
        li = int(rng.integers(len(state.params)))
        key = "W" if rng.random() < 0.8 else "b"
        arr = state.params[li][key]
        idx = tuple(int(rng.integers(0, d)) for d in arr.shape)
        fd = realized_central_difference(lambda: obj(state, x), arr, idx, 1e-4)
        an = grads[li][key][idx]
        if abs(fd) < 1e-10 and abs(an) < 1e-10:
            continue
        assert an == pytest.approx(fd, rel=1e-3, abs=1e-9)
        checked += 1
