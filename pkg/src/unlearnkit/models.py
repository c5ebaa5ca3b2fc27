"""Differentiable classifier contract: two reference nets, gradients, training.

Parameters live in float32 (matching the checkpoint block format); compute
may run in float32 (training fast path) or float64 (gradient oracles). The
backward pass is hand-written per layer kind and is validated against finite
differences in the test suite.
"""

import copy as _copy
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .errors import ArgumentError, NumericError, ShapeContractError
from .serialize import read_blob, write_blob

PARAM_KINDS = ("dense", "conv")


def make_mlp2(input_dim, num_classes, hidden=64):
    """Descriptor for the flat-input reference net: dense-relu x2 + head."""
    return {
        "name": "mlp2",
        "input_shape": [int(input_dim)],
        "layers": [
            {"name": "dense1", "kind": "dense", "in": int(input_dim), "out": hidden, "activation": "relu"},
            {"name": "dense2", "kind": "dense", "in": hidden, "out": hidden, "activation": "relu"},
            {"name": "head", "kind": "dense", "in": hidden, "out": int(num_classes), "activation": None},
        ],
    }


def make_cnn_s(num_classes, side=32, channels=3):
    """Descriptor for the image reference net.

    conv3x3(32)-relu-pool2 / conv3x3(64)-relu-pool2 / dense(128)-relu / head.
    Convolutions are stride 1 with pad 1, so pooling alone halves the grid.
    """
    if side % 4 != 0:
        raise ArgumentError("side must be divisible by 4 for the two pool stages")
    flat = (side // 4) * (side // 4) * 64
    return {
        "name": "cnn_s",
        "input_shape": [int(side), int(side), int(channels)],
        "layers": [
            {"name": "conv1", "kind": "conv", "kh": 3, "kw": 3, "cin": int(channels), "cout": 32, "pad": 1, "activation": "relu"},
            {"name": "pool1", "kind": "maxpool", "size": 2},
            {"name": "conv2", "kind": "conv", "kh": 3, "kw": 3, "cin": 32, "cout": 64, "pad": 1, "activation": "relu"},
            {"name": "pool2", "kind": "maxpool", "size": 2},
            {"name": "flatten", "kind": "flatten"},
            {"name": "dense1", "kind": "dense", "in": flat, "out": 128, "activation": "relu"},
            {"name": "head", "kind": "dense", "in": 128, "out": int(num_classes), "activation": None},
        ],
    }


def _param_shapes(layer):
    if layer["kind"] == "dense":
        return {"W": (layer["in"], layer["out"]), "b": (layer["out"],)}
    if layer["kind"] == "conv":
        return {"W": (layer["kh"], layer["kw"], layer["cin"], layer["cout"]), "b": (layer["cout"],)}
    return None


@dataclass
class ClassifierState:
    """Named, layer-grouped parameter arrays plus the architecture descriptor."""

    arch: dict
    params: list
    num_classes: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = [
            {k: np.asarray(v, dtype=np.float32) for k, v in group.items()} for group in self.params
        ]
        expected = [l for l in self.arch["layers"] if l["kind"] in PARAM_KINDS]
        if len(expected) != len(self.params):
            raise ShapeContractError(
                f"arch declares {len(expected)} parametric layers, got {len(self.params)} groups"
            )
        for layer, group in zip(expected, self.params):
            shapes = _param_shapes(layer)
            if set(shapes) != set(group):
                raise ShapeContractError(f"layer {layer['name']}: expected params {sorted(shapes)}")
            for key, shape in shapes.items():
                if tuple(group[key].shape) != shape:
                    raise ShapeContractError(
                        f"layer {layer['name']}.{key}: expected shape {shape}, got {group[key].shape}"
                    )
            if not all(np.isfinite(arr).all() for arr in group.values()):
                raise NumericError(f"layer {layer['name']} holds non-finite parameters")

    @property
    def layer_names(self):
        return [l["name"] for l in self.arch["layers"] if l["kind"] in PARAM_KINDS]

    @property
    def input_shape(self):
        return tuple(self.arch["input_shape"])

    def copy(self):
        return ClassifierState(
            _copy.deepcopy(self.arch),
            [{k: v.copy() for k, v in g.items()} for g in self.params],
            self.num_classes,
            _copy.deepcopy(self.metadata),
        )

    def num_params(self):
        return int(sum(arr.size for g in self.params for arr in g.values()))


def init_state(arch, num_classes, seed, metadata=None):
    """He-normal weights, zero biases; deterministic given seed."""
    rng = np.random.default_rng(seed)
    params = []
    for layer in arch["layers"]:
        shapes = _param_shapes(layer)
        if shapes is None:
            continue
        if layer["kind"] == "dense":
            fan_in = layer["in"]
        else:
            fan_in = layer["kh"] * layer["kw"] * layer["cin"]
        std = np.sqrt(2.0 / fan_in)
        group = {
            "W": (rng.standard_normal(shapes["W"]) * std).astype(np.float32),
            "b": np.zeros(shapes["b"], dtype=np.float32),
        }
        params.append(group)
    meta = {"init_seed": int(seed)}
    if metadata:
        meta.update(metadata)
    return ClassifierState(arch, params, num_classes, meta)


def zeros_like_params(state):
    """A GradientMap-shaped list of zero arrays congruent with state.params."""
    return [{k: np.zeros_like(v, dtype=np.float64) for k, v in g.items()} for g in state.params]


def congruent(struct_a, struct_b):
    if len(struct_a) != len(struct_b):
        return False
    for ga, gb in zip(struct_a, struct_b):
        if set(ga) != set(gb):
            return False
        for k in ga:
            if ga[k].shape != gb[k].shape:
                return False
    return True


# ---------------------------------------------------------------------------
# forward / backward engine


def _check_batch(state, batch):
    batch = np.asarray(batch)
    if tuple(batch.shape[1:]) != state.input_shape:
        raise ShapeContractError(
            f"batch shape {batch.shape[1:]} does not match input shape {state.input_shape}"
        )
    return batch


def _forward(state, batch, dtype, want_activations=False):
    """Run the net, returning (logits, caches, activations)."""
    x = np.ascontiguousarray(batch, dtype=dtype)
    caches = []
    activations = []
    p = 0
    for layer in state.arch["layers"]:
        kind = layer["kind"]
        if kind == "dense":
            w = state.params[p]["W"].astype(dtype)
            b = state.params[p]["b"].astype(dtype)
            z = x @ w + b
            cache = {"kind": "dense", "x": x, "w": w}
            p += 1
        elif kind == "conv":
            w = state.params[p]["W"].astype(dtype)
            b = state.params[p]["b"].astype(dtype)
            z, cols = K.conv2d_forward(x, w, b, layer["pad"])
            cache = {"kind": "conv", "cols": cols, "w": w, "pad": layer["pad"], "hw": x.shape[1:3]}
            p += 1
        elif kind == "maxpool":
            z, idx = K.maxpool2_forward(x)
            caches.append({"kind": "maxpool", "idx": idx, "hw": x.shape[1:3]})
            x = z
            continue
        elif kind == "flatten":
            caches.append({"kind": "flatten", "shape": x.shape})
            x = x.reshape(x.shape[0], -1)
            continue
        else:
            raise ShapeContractError(f"unknown layer kind {kind}")
        if layer.get("activation") == "relu":
            a = np.maximum(z, 0)
            cache["relu_mask"] = z > 0
            if want_activations:
                activations.append((f"{layer['name']}_relu", a))
            x = a
        else:
            x = z
        caches.append(cache)
    if want_activations:
        activations.append(("logits", x))
    return x, caches, activations


def _backward(state, caches, dlogits, need_param_grads=True):
    """Backpropagate d(objective)/d(logits); returns (GradientMap, dx)."""
    grads = [None] * len(state.params)
    d = dlogits
    p = len(state.params)
    for cache in reversed(caches):
        kind = cache["kind"]
        if kind == "maxpool":
            h, w = cache["hw"]
            d = K.maxpool2_backward(np.ascontiguousarray(d), cache["idx"], h, w)
        elif kind == "flatten":
            d = d.reshape(cache["shape"])
        elif kind == "dense":
            p -= 1
            if "relu_mask" in cache:
                d = d * cache["relu_mask"]
            if need_param_grads:
                grads[p] = {"W": cache["x"].T @ d, "b": d.sum(axis=0)}
            d = d @ cache["w"].T
        elif kind == "conv":
            p -= 1
            if "relu_mask" in cache:
                d = d * cache["relu_mask"]
            d, dw, db = K.conv2d_backward(
                cache["cols"], cache["w"], np.ascontiguousarray(d), cache["pad"], cache["hw"],
                need_param_grads=need_param_grads,
            )
            if need_param_grads:
                grads[p] = {"W": dw, "b": db}
    return grads, d


def forward(state, batch, dtype=np.float32):
    """Logits for a batch; deterministic, shape-checked."""
    batch = _check_batch(state, batch)
    logits, _, _ = _forward(state, batch, dtype)
    return logits


def forward_with_activations(state, batch, dtype=np.float32):
    """Logits plus named post-ReLU activations and the final logits."""
    batch = _check_batch(state, batch)
    logits, _, acts = _forward(state, batch, dtype, want_activations=True)
    return logits, acts


def predict(state, inputs, batch_size=64):
    """Argmax class per example; ties resolve to the lowest class index."""
    inputs = _check_batch(state, inputs)
    out = np.empty(len(inputs), dtype=np.int64)
    for start in range(0, len(inputs), batch_size):
        logits = forward(state, inputs[start : start + batch_size])
        out[start : start + len(logits)] = np.argmax(logits, axis=1)
    return out


def accuracy(state, ds, labels=None):
    """Fraction of correct predictions on a dataset (0..1)."""
    if len(ds) == 0:
        raise ArgumentError("accuracy undefined on an empty dataset")
    want = ds.labels if labels is None else np.asarray(labels, dtype=np.int64)
    got = predict(state, ds.inputs)
    return float(np.mean(got == want))


# ---------------------------------------------------------------------------
# objectives and gradient operations


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def cross_entropy(logits, labels):
    """Mean cross-entropy of logits against integer labels."""
    logp = log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


class CrossEntropyObjective:
    """sign * mean CE(logits, labels); sign=-1 gives the ascent objective."""

    def __init__(self, labels, sign=1.0):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.sign = float(sign)

    def __call__(self, state, batch, dtype=np.float64):
        return self.value(forward(state, batch, dtype=dtype))

    def value(self, logits):
        return self.sign * cross_entropy(logits, self.labels)

    def dlogits(self, logits):
        n = len(self.labels)
        g = softmax(logits)
        g[np.arange(n), self.labels] -= 1.0
        return self.sign * g / n


class ConstantObjective:
    """Objective with no logit dependence; gradients vanish."""

    def __init__(self, value=0.0):
        self._value = float(value)

    def __call__(self, state, batch, dtype=np.float64):
        return self._value

    def value(self, logits):
        return self._value

    def dlogits(self, logits):
        return np.zeros_like(logits)


def grad_params(state, batch, objective, dtype=np.float64):
    """Parameter gradients of a logit-level objective on one batch."""
    batch = _check_batch(state, batch)
    logits, caches, _ = _forward(state, batch, dtype)
    val = objective.value(logits)
    if not np.isfinite(val):
        raise NumericError(f"objective is non-finite ({val})")
    grads, _ = _backward(state, caches, objective.dlogits(logits).astype(dtype))
    return grads


def grad_input(state, x, label, sign_target="minimize", dtype=np.float64):
    """Gradient of mean CE toward `label` w.r.t. the input.

    minimize: gradient of CE (step against it to approach the label);
    maximize: gradient of -CE. Accepts a single example or a batch.
    """
    x = np.asarray(x)
    single = tuple(x.shape) == state.input_shape
    batch = x[None] if single else _check_batch(state, x)
    labels = np.full(len(batch), label, dtype=np.int64) if np.ndim(label) == 0 else np.asarray(label)
    if labels.min() < 0 or labels.max() >= state.num_classes:
        raise ArgumentError("label out of range")
    sign = {"minimize": 1.0, "maximize": -1.0}[sign_target]
    objective = CrossEntropyObjective(labels, sign=sign)
    logits, caches, _ = _forward(state, batch, dtype)
    val = objective.value(logits)
    if not np.isfinite(val):
        raise NumericError(f"objective is non-finite ({val})")
    _, dx = _backward(state, caches, objective.dlogits(logits).astype(dtype))
    return dx[0] if single else dx


def backprop_batch(state, batch, dlogits_fn, dtype=np.float32):
    """Fast-path gradients: dlogits_fn(logits) -> (loss, dlogits)."""
    logits, caches, _ = _forward(state, batch, dtype)
    loss, dlogits = dlogits_fn(logits)
    grads, _ = _backward(state, caches, np.asarray(dlogits, dtype=dtype))
    return loss, grads


# ---------------------------------------------------------------------------
# training


def pretrain(state, ds, cfg):
    """Train a copy of `state` on `ds` with SGD momentum; deterministic per seed.

    Returns a new state whose metadata records the recipe and the final
    training accuracy. cfg.epochs == 0 returns the input parameters untouched.
    """
    from .optim import SgdMomentum

    out = state.copy()
    if cfg.epochs > 0:
        opt = SgdMomentum(out, cfg.lr, cfg.momentum, cfg.weight_decay)
        rng = np.random.default_rng(cfg.seed)
        n = len(ds)
        smooth = np.float32(cfg.label_smoothing)
        off_target = smooth / ds.num_classes
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                pick = order[start : start + cfg.batch_size]
                batch = ds.inputs[pick]
                labels = ds.labels[pick]

                def dlogits_fn(logits):
                    loss = cross_entropy(logits, labels)
                    g = softmax(logits) - off_target
                    g[np.arange(len(labels)), labels] -= 1.0 - smooth
                    return loss, g / len(labels)

                loss, grads = backprop_batch(out, batch, dlogits_fn)
                if not np.isfinite(loss):
                    raise NumericError("training loss diverged", epoch=epoch)
                opt.step(out, grads)
    train_acc = accuracy(out, ds)
    out.metadata = dict(out.metadata)
    out.metadata["pretrain"] = {
        "epochs": cfg.epochs,
        "lr": cfg.lr,
        "momentum": cfg.momentum,
        "weight_decay": cfg.weight_decay,
        "batch_size": cfg.batch_size,
        "seed": cfg.seed,
        "train_accuracy": train_acc,
    }
    return out


# ---------------------------------------------------------------------------
# checkpoints

_CHECKPOINT_FORMAT = "unlearnkit-checkpoint"


def save_checkpoint(state, path):
    """JSON header + raw little-endian float32 blocks in layer order."""
    entries = []
    arrays = []
    for name, group in zip(state.layer_names, state.params):
        for key in ("W", "b"):
            entries.append({"layer": name, "param": key})
            arrays.append(group[key])
    header = {
        "format": _CHECKPOINT_FORMAT,
        "version": 1,
        "arch": state.arch,
        "num_classes": state.num_classes,
        "metadata": state.metadata,
        "entries": entries,
    }
    write_blob(path, header, arrays)


def load_checkpoint(path):
    header, arrays = read_blob(path)
    if header.get("format") != _CHECKPOINT_FORMAT:
        raise ArgumentError(f"{path}: not a checkpoint file")
    params = []
    it = iter(arrays)
    for layer in header["arch"]["layers"]:
        if layer["kind"] in PARAM_KINDS:
            params.append({"W": next(it), "b": next(it)})
    return ClassifierState(header["arch"], params, header["num_classes"], header["metadata"])
