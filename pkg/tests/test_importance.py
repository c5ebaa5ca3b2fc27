import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import unlearnkit as uk
from unlearnkit.errors import ArgumentError, ShapeContractError
from unlearnkit.importance import ImportanceMap, penalty_gradient

from conftest import linear_arch, linear_state, realized_central_difference, zero_state


def flat_map(omega):
    return np.concatenate([v.ravel() for g in omega.values for v in g.values()])


def test_zero_model_has_zero_importance(rng):
    state = zero_state(linear_arch(4, 3), 3)
    ds = uk.make_synthetic(3, 2, 4, 0.2, 0)
    omega = uk.mas_importance(state, ds)
    assert np.array_equal(flat_map(omega), np.zeros(state.num_params()))


def test_linear_model_closed_form(rng):
    # logits = x W + b, so d||logits||^2/dW = 2 * outer(x, logits)
    state = linear_state(5, 3, seed=1)
    x = rng.random(5).astype(np.float32)
    ds = uk.Dataset(x[None], np.array([0]), np.array([0]), 3)
    omega = uk.mas_importance(state, ds)
    logits = uk.forward(state, x[None], dtype=np.float64)[0]
    want_w = np.abs(2.0 * np.outer(x.astype(np.float64), logits))
    want_b = np.abs(2.0 * logits)
    assert np.allclose(omega.values[0]["W"], want_w, rtol=1e-6, atol=1e-12)
    assert np.allclose(omega.values[0]["b"], want_b, rtol=1e-6, atol=1e-12)


def test_mas_finite_difference_oracle(rng):
    state = uk.init_state(uk.make_mlp2(4, 3), 3, 6)
    ds = uk.make_synthetic(3, 4, 4, 0.3, 2)  # 12 examples
    omega = uk.mas_importance(state, ds)

    def norm_sq(pos):
        logits = uk.forward(state, ds.inputs[pos : pos + 1], dtype=np.float64)
        return float(np.sum(logits * logits))

    checked = 0
    while checked < 50:
        li = int(rng.integers(len(state.params)))
        key = "W" if rng.random() < 0.8 else "b"
        arr = state.params[li][key]
        idx = tuple(int(rng.integers(0, d)) for d in arr.shape)
        fds = [
            realized_central_difference(lambda p=pos: norm_sq(p), arr, idx, 1e-4)
            for pos in range(len(ds))
        ]
        want = float(np.mean(np.abs(fds)))
        got = omega.values[li][key][idx]
        if want < 1e-8:
            continue
        assert got == pytest.approx(want, rel=1e-3)
        checked += 1


def test_mas_softmax_flag_differs(rng):
    state = linear_state(4, 3, seed=2)
    ds = uk.make_synthetic(3, 3, 4, 0.4, 1)
    on_logits = uk.mas_importance(state, ds, importance_on="logits")
    on_probs = uk.mas_importance(state, ds, importance_on="softmax")
    assert not np.allclose(flat_map(on_logits), flat_map(on_probs))
    with pytest.raises(ArgumentError):
        uk.mas_importance(state, ds, importance_on="other")


def test_mas_empty_dataset_rejected(rng):
    state = linear_state(4, 3)
    ds = uk.make_synthetic(3, 2, 4, 0.2, 0)
    with pytest.raises(ArgumentError):
        uk.mas_importance(state, ds.take([]))


def test_mas_reduction_order_stability():
    state = uk.init_state(uk.make_mlp2(4, 3), 3, 0)
    ds = uk.make_synthetic(3, 5, 4, 0.3, 3)
    forward_order = uk.mas_importance(state, ds)
    reverse_order = uk.mas_importance(state, ds.take(np.arange(len(ds))[::-1]))
    assert np.allclose(flat_map(forward_order), flat_map(reverse_order), atol=1e-9)


def test_normalize_affine_rescale():
    omega = ImportanceMap([{"W": np.array([2.0, 4.0, 6.0])}])
    normed = uk.normalize_layerwise(omega)
    assert np.allclose(normed.values[0]["W"], [0.0, 0.5, 1.0], atol=1e-9)
    assert normed.normalized and not normed.inverted


def test_normalize_constant_layer_maps_to_zero():
    omega = ImportanceMap([{"W": np.array([3.0, 3.0, 3.0])}])
    normed = uk.normalize_layerwise(omega)
    assert np.array_equal(normed.values[0]["W"], np.zeros(3))


def test_normalize_per_layer_extrema():
    omega = ImportanceMap(
        [
            {"W": np.array([1.0, 5.0]), "b": np.array([3.0])},
            {"W": np.array([10.0, 30.0]), "b": np.array([20.0])},
        ]
    )
    normed = uk.normalize_layerwise(omega)
    for group in normed.values:
        flat = np.concatenate([v.ravel() for v in group.values()])
        assert flat.min() == 0.0
        assert flat.max() == pytest.approx(1.0, abs=1e-9)
    # the layer is the normalization unit: weights and bias share min/max
    assert normed.values[0]["b"][0] == pytest.approx(0.5, abs=1e-9)


def test_normalize_rejects_double_normalization():
    omega = uk.normalize_layerwise(ImportanceMap([{"W": np.array([1.0, 2.0])}]))
    with pytest.raises(ArgumentError):
        uk.normalize_layerwise(omega)


def test_invert_basics():
    normed = ImportanceMap([{"W": np.array([0.0, 0.5, 1.0])}], normalized=True)
    inv = uk.invert(normed)
    assert np.allclose(inv.values[0]["W"], [1.0, 0.5, 0.0])
    assert inv.inverted
    zeros = ImportanceMap([{"W": np.zeros(4)}], normalized=True)
    assert np.array_equal(uk.invert(zeros).values[0]["W"], np.ones(4))


def test_invert_is_involution():
    normed = ImportanceMap([{"W": np.array([0.1, 0.9, 0.4])}], normalized=True)
    twice = uk.invert(uk.invert(normed))
    assert np.allclose(twice.values[0]["W"], normed.values[0]["W"], atol=1e-12)
    assert not twice.inverted


def test_invert_requires_normalized():
    with pytest.raises(ArgumentError):
        uk.invert(ImportanceMap([{"W": np.array([2.0])}]))


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(1e-3, 1e3), seed=st.integers(0, 100))
def test_normalize_scale_invariance(scale, seed):
    r = np.random.default_rng(seed)
    raw = {"W": r.random((3, 2)), "b": r.random(2)}
    omega = ImportanceMap([{k: v.copy() for k, v in raw.items()}])
    scaled = ImportanceMap([{k: scale * v for k, v in raw.items()}])
    a = uk.normalize_layerwise(omega)
    b = uk.normalize_layerwise(scaled)
    for key in raw:
        assert np.allclose(a.values[0][key], b.values[0][key], atol=1e-9)


def test_penalty_zero_at_reference(blob_problem):
    _, state = blob_problem
    omega = uk.invert(uk.normalize_layerwise(uk.mas_importance(state, _make_probe_ds())))
    assert uk.importance_penalty(state, state.copy(), omega) == 0.0


def _make_probe_ds():
    return uk.make_synthetic(3, 2, 6, 0.3, 0)


def test_penalty_unit_displacement():
    state = zero_state(linear_arch(2, 2), 2)
    moved = state.copy()
    moved.params[0]["W"][0, 0] = 1.0
    ones = ImportanceMap(
        [{k: np.ones_like(v, dtype=np.float64) for k, v in g.items()} for g in state.params],
        normalized=True,
        inverted=True,
    )
    assert uk.importance_penalty(moved, state, ones) == pytest.approx(1.0, abs=1e-12)


def test_penalty_matches_elementwise_loop(rng):
    state = linear_state(4, 4, seed=3)  # 20 parameters
    moved = state.copy()
    for group in moved.params:
        for key in group:
            group[key] += rng.standard_normal(group[key].shape).astype(np.float32) * 0.1
    omega = ImportanceMap(
        [{k: rng.random(v.shape) for k, v in g.items()} for g in state.params],
        normalized=True,
        inverted=True,
    )
    want = 0.0
    for gm, gs, go in zip(moved.params, state.params, omega.values):
        for key in gm:
            for idx in np.ndindex(gm[key].shape):
                diff = float(gm[key][idx]) - float(gs[key][idx])
                want += float(go[key][idx]) * diff * diff
    assert uk.importance_penalty(moved, state, omega) == pytest.approx(want, rel=1e-7)


def test_penalty_gradient_finite_difference(rng):
    state = linear_state(3, 3, seed=5)
    ref = state.copy()
    for group in state.params:
        for key in group:
            group[key] += rng.standard_normal(group[key].shape).astype(np.float32) * 0.2
    omega = ImportanceMap(
        [{k: rng.random(v.shape) for k, v in g.items()} for g in state.params],
        normalized=True,
        inverted=True,
    )
    grads = penalty_gradient(state, ref, omega)
    for _ in range(20):
        li = 0
        key = "W" if rng.random() < 0.7 else "b"
        arr = state.params[li][key]
        idx = tuple(int(rng.integers(0, d)) for d in arr.shape)
        fd = realized_central_difference(
            lambda: uk.importance_penalty(state, ref, omega), arr, idx, 1e-3
        )
        assert grads[li][key][idx] == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_congruence_enforced(blob_problem):
    _, state = blob_problem
    other = linear_state(4, 3)
    omega = uk.mas_importance(other, uk.make_synthetic(3, 2, 4, 0.2, 0))
    with pytest.raises(ShapeContractError):
        uk.importance_penalty(state, state.copy(), omega)


def test_raw_map_nonnegative_and_congruent(blob_problem):
    ds, state = blob_problem
    omega = uk.mas_importance(state, ds.take(range(6)))
    omega.check_congruent(state)
    assert (flat_map(omega) >= 0).all()
    normed = uk.normalize_layerwise(omega)
    vals = flat_map(normed)
    assert (vals >= 0).all() and (vals <= 1.0).all()


def test_importance_roundtrip(tmp_path, blob_problem):
    ds, state = blob_problem
    omega = uk.invert(uk.normalize_layerwise(uk.mas_importance(state, ds.take(range(4)))))
    path = tmp_path / "omega.blob"
    uk.save_importance_map(omega, path)
    loaded = uk.load_importance_map(path)
    assert loaded.normalized and loaded.inverted
    for a, b in zip(omega.values, loaded.values):
        for key in a:
            # storage is float32 blocks; compare at that precision
            assert np.array_equal(a[key].astype(np.float32), b[key].astype(np.float32))
