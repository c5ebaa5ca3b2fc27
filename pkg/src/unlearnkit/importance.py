"""Weight importance from output-norm gradients, and the drift penalty.

Importance of parameter i is the per-example absolute gradient of the
squared L2 norm of the model output, averaged over examples. Layer-wise
min-max normalization and inversion turn it into the penalty weights that
hold unimportant-for-the-forget-set parameters near their pretrained values.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ShapeContractError
from .models import _backward, _forward, congruent, softmax
from .serialize import read_blob, write_blob

ON_LOGITS = "logits"
ON_SOFTMAX = "softmax"


@dataclass
class ImportanceMap:
    """Per-parameter scalars congruent with a ClassifierState's params."""

    values: list
    normalized: bool = False
    inverted: bool = False

    def __post_init__(self):
        self.values = [
            {k: np.asarray(v, dtype=np.float64) for k, v in g.items()} for g in self.values
        ]

    def copy(self):
        return ImportanceMap(
            [{k: v.copy() for k, v in g.items()} for g in self.values],
            self.normalized,
            self.inverted,
        )

    def check_congruent(self, state):
        if not congruent(self.values, state.params):
            raise ShapeContractError("importance map is not congruent with the model parameters")


def mas_importance(state, ds, importance_on=ON_LOGITS):
    """Raw importance: mean over examples of |d ||g(x)||_2^2 / d theta|.

    The absolute value applies per example, before averaging. importance_on
    selects whether the output norm is taken on logits (default) or on
    softmax probabilities.
    """
    if len(ds) == 0:
        raise ArgumentError("importance needs at least one example")
    if importance_on not in (ON_LOGITS, ON_SOFTMAX):
        raise ArgumentError(f"importance_on must be '{ON_LOGITS}' or '{ON_SOFTMAX}'")
    per_example = [[] for _ in state.params]
    for pos in range(len(ds)):
        x = ds.inputs[pos : pos + 1]
        logits, caches, _ = _forward(state, x, np.float64)
        if importance_on == ON_LOGITS:
            dlogits = 2.0 * logits
        else:
            s = softmax(logits)
            dlogits = 2.0 * (s * s - s * (s * s).sum(axis=1, keepdims=True))
        grads, _ = _backward(state, caches, dlogits)
        for slot, g in zip(per_example, grads):
            slot.append({k: np.abs(v) for k, v in g.items()})
    values = []
    for slot in per_example:
        keys = slot[0].keys()
        values.append({k: np.mean(np.stack([entry[k] for entry in slot]), axis=0) for k in keys})
    return ImportanceMap(values)


def normalize_layerwise(omega: ImportanceMap):
    """Min-max rescale each layer group to [0, 1].

    The rescale is (x - min) / (max - min + 1e-12), jointly over the layer's
    weight and bias entries; a constant layer maps to all zeros.
    """
    if omega.normalized:
        raise ArgumentError("importance map is already normalized")
    out = []
    for group in omega.values:
        flat = np.concatenate([v.ravel() for v in group.values()])
        lo, hi = float(flat.min()), float(flat.max())
        scale = hi - lo + 1e-12
        out.append({k: (v - lo) / scale for k, v in group.items()})
    return ImportanceMap(out, normalized=True)


def invert(omega: ImportanceMap):
    """1 - omega; applying it twice returns the original map."""
    if not omega.normalized:
        raise ArgumentError("invert expects a normalized importance map")
    values = [{k: 1.0 - v for k, v in g.items()} for g in omega.values]
    return ImportanceMap(values, normalized=True, inverted=not omega.inverted)


def importance_penalty(state, state_tilde, omega_bar: ImportanceMap):
    """sum_i omega_bar_i * (theta_i - theta_tilde_i)^2 in float64."""
    omega_bar.check_congruent(state)
    if not congruent(state.params, state_tilde.params):
        raise ShapeContractError("states are not congruent")
    total = 0.0
    for group, ref, om in zip(state.params, state_tilde.params, omega_bar.values):
        for key in group:
            diff = group[key].astype(np.float64) - ref[key].astype(np.float64)
            total += float(np.sum(om[key] * diff * diff))
    return total


def penalty_gradient(state, state_tilde, omega_bar: ImportanceMap):
    """d penalty / d theta_i = 2 * omega_bar_i * (theta_i - theta_tilde_i)."""
    omega_bar.check_congruent(state)
    grads = []
    for group, ref, om in zip(state.params, state_tilde.params, omega_bar.values):
        grads.append(
            {
                k: 2.0 * om[k] * (group[k].astype(np.float64) - ref[k].astype(np.float64))
                for k in group
            }
        )
    return grads


_IMPORTANCE_FORMAT = "unlearnkit-importance"


def save_importance_map(omega: ImportanceMap, path):
    entries = []
    arrays = []
    for idx, group in enumerate(omega.values):
        for key in sorted(group):
            entries.append({"layer": idx, "param": key})
            arrays.append(group[key])
    header = {
        "format": _IMPORTANCE_FORMAT,
        "version": 1,
        "normalized": omega.normalized,
        "inverted": omega.inverted,
        "entries": entries,
    }
    write_blob(path, header, arrays)


def load_importance_map(path):
    header, arrays = read_blob(path)
    if header.get("format") != _IMPORTANCE_FORMAT:
        raise ArgumentError(f"{path}: not an importance-map file")
    values = []
    for entry, arr in zip(header["entries"], arrays):
        if entry["layer"] == len(values):
            values.append({})
        values[entry["layer"]][entry["param"]] = arr.astype(np.float64)
    return ImportanceMap(values, header["normalized"], header["inverted"])
