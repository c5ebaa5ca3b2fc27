import numpy as np
import pytest

import unlearnkit as uk
from unlearnkit.optim import OptimConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def linear_arch(dim, num_classes, name="linear"):
    """Single dense layer, no activation: logits = x @ W + b."""
    return {
        "name": name,
        "input_shape": [dim],
        "layers": [
            {"name": "head", "kind": "dense", "in": dim, "out": num_classes, "activation": None}
        ],
    }


def linear_state(dim, num_classes, seed=0):
    return uk.init_state(linear_arch(dim, num_classes), num_classes, seed)


def zero_state(arch, num_classes):
    state = uk.init_state(arch, num_classes, 0)
    for group in state.params:
        for key in group:
            group[key][:] = 0.0
    return state


@pytest.fixture(scope="session")
def blob_problem():
    """Separable 3-class blobs with a fitted MLP-2; shared across tests."""
    ds = uk.make_synthetic(3, 40, 6, 0.08, 11)
    state0 = uk.init_state(uk.make_mlp2(6, 3), 3, 7)
    cfg = OptimConfig(lr=0.1, momentum=0.9, weight_decay=0.0, epochs=80, batch_size=32, seed=7)
    state = uk.pretrain(state0, ds, cfg)
    assert state.metadata["pretrain"]["train_accuracy"] == 1.0
    return ds, state


@pytest.fixture(scope="session")
def forgettable_problem():
    """Overlapping blobs with a moderately confident model.

    Wide spread keeps examples near the decision boundaries, so the
    early-stopped unlearning loops actually terminate at toy scale.
    """
    ds = uk.make_synthetic(3, 40, 6, 0.3, 11)
    state0 = uk.init_state(uk.make_mlp2(6, 3), 3, 7)
    cfg = OptimConfig(lr=0.1, momentum=0.9, weight_decay=1e-3, epochs=20, batch_size=32, seed=7)
    state = uk.pretrain(state0, ds, cfg)
    assert state.metadata["pretrain"]["train_accuracy"] >= 0.95
    return ds, state


def realized_central_difference(value_fn, array, idx, h):
    """Central difference using the float32-realized perturbation size."""
    orig = array[idx]
    hi = np.float32(float(orig) + h)
    lo = np.float32(float(orig) - h)
    array[idx] = hi
    f_hi = value_fn()
    array[idx] = lo
    f_lo = value_fn()
    array[idx] = orig
    return (f_hi - f_lo) / (float(hi) - float(lo))
