"""Post-unlearning analytics: accuracies, pre/post confusion, layer-wise CKA.

Everything here is read-only over checkpoints and datasets and is emitted as
JSON plus flat CSVs so external plotting never needs this package.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import Dataset, ForgetManifest, RELABEL
from .errors import ArgumentError, DegenerateInputError
from .models import accuracy, forward_with_activations, predict


def confusion_prepost(s_before, s_after, d_f: Dataset):
    """C x C counts of (prediction before, prediction after) over the forget split."""
    c = s_before.num_classes
    if len(d_f) == 0:
        return np.zeros((c, c), dtype=np.int64)
    pre = predict(s_before, d_f.inputs)
    post = predict(s_after, d_f.inputs)
    return np.bincount(pre * c + post, minlength=c * c).reshape(c, c).astype(np.int64)


def _centered_gram(x):
    x = np.asarray(x, dtype=np.float64)
    x = x - x.mean(axis=0, keepdims=True)
    return x @ x.T


def _cka_from_grams(kx, ky):
    norm = np.sqrt(float(np.sum(kx * kx)) * float(np.sum(ky * ky)))
    if norm == 0.0:
        raise DegenerateInputError("zero-variance activations; CKA undefined")
    return float(np.sum(kx * ky) / norm)


def cka_linear(x, y):
    """Linear centered kernel alignment of two activation matrices.

    Columns are centered; the value is ||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F),
    computed through the N x N Gram matrices so wide activations stay cheap.
    Symmetric in its arguments, in [0, 1], invariant to isotropic scaling and
    orthogonal transforms of either argument.
    """
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    if len(x) != len(y):
        raise ArgumentError("activation matrices must have the same number of rows")
    if len(x) < 2:
        raise ArgumentError("CKA needs at least 2 examples")
    return _cka_from_grams(_centered_gram(x), _centered_gram(y))


def _activation_grams(state, inputs, chunk=256):
    """Centered Gram per named capture point (post-ReLU outputs and logits)."""
    collected = None
    for start in range(0, len(inputs), chunk):
        _, acts = forward_with_activations(state, inputs[start : start + chunk])
        if collected is None:
            collected = [(name, [a.reshape(len(a), -1)]) for name, a in acts]
        else:
            for slot, (_, a) in zip(collected, acts):
                slot[1].append(a.reshape(len(a), -1))
    names = [name for name, _ in collected]
    grams = [_centered_gram(np.concatenate(chunks, axis=0)) for _, chunks in collected]
    return names, grams


def layerwise_cka(s_before, s_after, ds: Dataset, max_examples=512):
    """CKA between every before-layer / after-layer pair on up to
    max_examples examples (taken in dataset order). Entry (i, j) compares
    capture point i of the pre-unlearning model with point j of the
    post-unlearning model."""
    if len(ds) < 2:
        raise ArgumentError("layerwise CKA needs at least 2 examples")
    inputs = ds.inputs[: min(len(ds), max_examples)]
    _, grams_before = _activation_grams(s_before, inputs)
    _, grams_after = _activation_grams(s_after, inputs)
    out = np.empty((len(grams_before), len(grams_after)))
    for i, kx in enumerate(grams_before):
        for j, ky in enumerate(grams_after):
            out[i, j] = _cka_from_grams(kx, ky)
    return out


def activation_names(state):
    """Capture-point names in network order for one model."""
    names = [
        f"{layer['name']}_relu"
        for layer in state.arch["layers"]
        if layer.get("activation") == "relu"
    ]
    return names + ["logits"]


@dataclass
class EvalReport:
    """Accuracies (percent) per split and state, plus confusion and CKA."""

    accuracies: dict
    confusion: np.ndarray
    cka: np.ndarray | None
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "accuracies": self.accuracies,
            "confusion": np.asarray(self.confusion, dtype=np.int64).tolist(),
            "cka": None if self.cka is None else np.asarray(self.cka).tolist(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, doc):
        cka = doc.get("cka")
        return cls(
            doc["accuracies"],
            np.asarray(doc["confusion"], dtype=np.int64),
            None if cka is None else np.asarray(cka, dtype=np.float64),
            doc.get("metadata", {}),
        )


def evaluate(
    s_before,
    s_after,
    d_f: Dataset,
    d_r: Dataset,
    d_test: Dataset,
    manifest: ForgetManifest,
    max_examples=512,
    metadata=None,
):
    """Full report: accuracies on all splits for both states, the pre/post
    confusion matrix on the forget split, and the layer-wise CKA map on the
    forget split. In relabel mode the forget split is scored against the
    manifest's new labels. Empty splits are omitted from the accuracy table.
    """
    labels_f = manifest.targets_for(d_f) if manifest.mode == RELABEL else None
    accs = {}
    for split, ds, labels in (("d_f", d_f, labels_f), ("d_r", d_r, None), ("d_test", d_test, None)):
        if ds is None or len(ds) == 0:
            continue
        accs[split] = {
            "before": 100.0 * accuracy(s_before, ds, labels=labels),
            "after": 100.0 * accuracy(s_after, ds, labels=labels),
        }
    confusion = confusion_prepost(s_before, s_after, d_f)
    cka = layerwise_cka(s_before, s_after, d_f, max_examples) if len(d_f) >= 2 else None
    meta = {"mode": manifest.mode, "k": len(manifest)}
    if metadata:
        meta.update(metadata)
    return EvalReport(accs, confusion, cka, meta)


def emit_report(report: EvalReport, directory):
    """Write report.json plus accuracies.csv, confusion.csv and cka.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "report.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    )
    run_id = report.metadata.get("run_id", "")
    method = report.metadata.get("method", "")
    k = report.metadata.get("k", "")
    with open(directory / "accuracies.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "method", "k", "split", "state", "accuracy"])
        for split in sorted(report.accuracies):
            for state in ("before", "after"):
                writer.writerow([run_id, method, k, split, state, repr(report.accuracies[split][state])])
    np.savetxt(directory / "confusion.csv", report.confusion, fmt="%d", delimiter=",")
    if report.cka is not None:
        np.savetxt(directory / "cka.csv", report.cka, fmt="%.17g", delimiter=",")
    return directory / "report.json"


def parse_report(path):
    """Read back a report.json (or the directory holding one)."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return EvalReport.from_dict(json.loads(path.read_text()))
