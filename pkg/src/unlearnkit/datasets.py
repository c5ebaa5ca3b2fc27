"""Datasets, forget-set selection, and the forget/remaining split.

Instance identity is carried by explicit integer ids rather than array
position, so deletion requests stay traceable across checkpoints and
continual fragments.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ManifestError

MISCLASSIFY = "misclassify"
RELABEL = "relabel"
MODES = (MISCLASSIFY, RELABEL)


@dataclass
class Dataset:
    """Labeled examples with stable ids.

    inputs: float32 array, (N, d) for flat vectors or (N, H, W, C) for
    images (image values must lie in [0, 1]). labels: int64 class ids in
    [0, num_classes). ids: unique int64 instance identifiers.
    """

    inputs: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if not (len(self.inputs) == len(self.labels) == len(self.ids)):
            raise ArgumentError("inputs, labels and ids must have equal length")
        if len(np.unique(self.ids)) != len(self.ids):
            raise ArgumentError("ids must be unique")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ArgumentError("labels must lie in [0, num_classes)")
        if self.inputs.ndim == 4 and len(self.inputs):
            lo, hi = float(self.inputs.min()), float(self.inputs.max())
            if lo < 0.0 or hi > 1.0:
                raise ArgumentError(f"image values must lie in [0, 1], got [{lo}, {hi}]")

    def __len__(self):
        return len(self.ids)

    @property
    def input_shape(self):
        return self.inputs.shape[1:]

    def take(self, positions):
        """New Dataset holding the rows at `positions`, in that order."""
        positions = np.asarray(positions, dtype=np.int64)
        return Dataset(
            self.inputs[positions], self.labels[positions], self.ids[positions], self.num_classes
        )

    def index_of(self, ids):
        """Positions of the given ids; raises ManifestError on unknown ids."""
        lookup = {int(i): pos for pos, i in enumerate(self.ids)}
        try:
            return np.array([lookup[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise ManifestError(f"id {exc.args[0]} not present in dataset") from exc


@dataclass
class ForgetManifest:
    """A deletion request: which instances, and what to do with them."""

    ids: list
    mode: str
    seed: int
    relabel_targets: dict | None = None

    def __post_init__(self):
        self.ids = [int(i) for i in self.ids]
        if self.mode not in MODES:
            raise ArgumentError(f"mode must be one of {MODES}")
        if len(set(self.ids)) != len(self.ids):
            raise ManifestError("manifest ids must be distinct")
        if self.mode == RELABEL:
            if self.relabel_targets is None:
                raise ManifestError("relabel mode requires relabel_targets")
            self.relabel_targets = {int(k): int(v) for k, v in self.relabel_targets.items()}
            if set(self.relabel_targets) != set(self.ids):
                raise ManifestError("relabel_targets must cover exactly the manifest ids")
        elif self.relabel_targets is not None:
            raise ManifestError("relabel_targets only valid in relabel mode")

    def __len__(self):
        return len(self.ids)

    def validate_against(self, ds: Dataset):
        """Check id membership and relabel-target legality for `ds`."""
        positions = ds.index_of(self.ids)
        if self.mode == RELABEL:
            for pos, ident in zip(positions, self.ids):
                y = int(ds.labels[pos])
                y_star = self.relabel_targets[ident]
                if not 0 <= y_star < ds.num_classes:
                    raise ManifestError(f"relabel target {y_star} out of range for id {ident}")
                if y_star == y:
                    raise ManifestError(f"relabel target equals original label for id {ident}")

    def targets_for(self, ds: Dataset):
        """Relabel targets aligned with ds row order (relabel mode only)."""
        return np.array([self.relabel_targets[int(i)] for i in ds.ids], dtype=np.int64)

    def fragments(self, size):
        """Split into manifests of at most `size` ids, preserving order."""
        if size < 1:
            raise ArgumentError("fragment size must be >= 1")
        out = []
        for start in range(0, len(self.ids), size):
            chunk = self.ids[start : start + size]
            targets = None
            if self.mode == RELABEL:
                targets = {i: self.relabel_targets[i] for i in chunk}
            out.append(ForgetManifest(chunk, self.mode, self.seed, targets))
        return out


def _simplex_means(num_classes, dim):
    """Unit-edge regular simplex vertices, centered, embedded in `dim` dims.

    Uses the Helmert basis of the sum-zero subspace, so the construction is
    closed-form and platform-stable.
    """
    c = num_classes
    if dim < c - 1:
        raise ArgumentError(f"dim must be >= num_classes - 1 to place a simplex, got {dim}")
    helmert = np.zeros((c - 1, c))
    for k in range(1, c):
        helmert[k - 1, :k] = 1.0
        helmert[k - 1, k] = -k
        helmert[k - 1] /= np.sqrt(k * (k + 1))
    centered = np.eye(c) - 1.0 / c
    coords = centered @ helmert.T / np.sqrt(2.0)  # (c, c-1), pairwise distance 1
    means = np.zeros((c, dim))
    means[:, : c - 1] = coords
    return means


def make_synthetic(num_classes, per_class, dim, spread, seed):
    """Isotropic Gaussian blobs, one mean per class on a unit-edge simplex.

    Flat vectors (no value clipping); inter-mean distance is exactly 1, so
    `spread` alone controls class separability. Deterministic given seed.
    """
    if num_classes < 2 or per_class < 1 or dim < 2:
        raise ArgumentError("need num_classes >= 2, per_class >= 1, dim >= 2")
    if spread <= 0:
        raise ArgumentError("spread must be positive")
    means = _simplex_means(num_classes, dim)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((num_classes, per_class, dim))
    inputs = (means[:, None, :] + spread * noise).reshape(-1, dim)
    labels = np.repeat(np.arange(num_classes), per_class)
    return Dataset(inputs, labels, np.arange(len(labels)), num_classes)


def _bilinear_upsample(grids, side):
    """Upsample (N, g, g, C) -> (N, side, side, C) with bilinear interpolation."""
    g = grids.shape[1]
    pos = np.clip((np.arange(side) + 0.5) * g / side - 0.5, 0, g - 1)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, g - 1)
    frac = pos - i0
    rows = grids[:, i0] * (1 - frac)[None, :, None, None] + grids[:, i1] * frac[None, :, None, None]
    cols = (
        rows[:, :, i0] * (1 - frac)[None, None, :, None]
        + rows[:, :, i1] * frac[None, None, :, None]
    )
    return cols


def make_synthetic_images(
    num_classes,
    per_class,
    side=32,
    channels=3,
    signal=0.35,
    noise=0.12,
    style=0.0,
    label_noise=0.0,
    seed=0,
    template_seed=None,
):
    """Image-shaped stand-in data: smooth class templates, optional smooth
    per-example style fields, and white pixel noise.

    Class templates are low-frequency random fields, orthonormalized so
    every class pair sits at the same distance (`signal` alone sets the
    class geometry). `style` adds an instance-specific mid-frequency field,
    projected off the class-template subspace, to each example: an easily
    memorized per-instance signature that gives models something individual
    to key on, analogous to the memorization component of natural-image
    training. `label_noise` relabels that fraction of examples to a random
    wrong class (training-set realism: forces per-instance memorization).
    Examples are clip(0.5 + signal*T_class + style*S_example + noise*N, 0, 1).
    `template_seed` pins the class structure so train/test splits can share
    it while drawing independent examples.
    """
    if num_classes < 2 or per_class < 1:
        raise ArgumentError("need num_classes >= 2 and per_class >= 1")
    if not 0 <= label_noise < 1:
        raise ArgumentError("label_noise must be in [0, 1)")
    dim = side * side * channels
    if num_classes > dim:
        raise ArgumentError("more classes than pixels; cannot build orthogonal templates")
    trng = np.random.default_rng(seed if template_seed is None else template_seed)
    lowres = trng.standard_normal((num_classes, 4, 4, channels))
    templates = _bilinear_upsample(lowres, side)
    templates -= templates.mean(axis=(1, 2, 3), keepdims=True)
    q, _ = np.linalg.qr(templates.reshape(num_classes, dim).T)
    templates = (q.T * np.sqrt(dim)).reshape(num_classes, side, side, channels)

    rng = np.random.default_rng(seed)
    count = num_classes * per_class
    images = 0.5 + np.repeat(signal * templates, per_class, axis=0)
    if style:
        grid = max(side // 2, 2)
        fields = rng.standard_normal((count, grid, grid, channels))
        smooth = _bilinear_upsample(fields, side).reshape(count, dim)
        smooth -= smooth @ q @ q.T  # keep signatures out of the class subspace
        smooth -= smooth.mean(axis=1, keepdims=True)
        smooth /= smooth.std(axis=1, keepdims=True)
        images += style * smooth.reshape(count, side, side, channels)
    images += noise * rng.standard_normal((count, side, side, channels))
    images = np.clip(images, 0.0, 1.0)
    labels = np.repeat(np.arange(num_classes), per_class)
    if label_noise:
        flips = rng.random(count) < label_noise
        draws = rng.integers(0, num_classes - 1, count)
        noisy = np.where(draws >= labels, draws + 1, draws)
        labels = np.where(flips, noisy, labels)
    return Dataset(images, labels, np.arange(count), num_classes)


def select_forget_set(ds: Dataset, k, mode, seed):
    """Draw k distinct instances uniformly without replacement.

    Seed policy (stable contract, mirrored by the reservoir-sampling oracle
    in the tests): a default_rng(seed) first draws one uniform key per
    dataset row in row order; the k smallest keys win, ordered by ascending
    key. In relabel mode the same generator then draws, per selected
    instance in manifest order, a target uniform over the classes other than
    the original label.
    """
    if not 1 <= k <= len(ds):
        raise ArgumentError(f"k must be in [1, {len(ds)}], got {k}")
    if mode not in MODES:
        raise ArgumentError(f"mode must be one of {MODES}")
    rng = np.random.default_rng(seed)
    keys = rng.random(len(ds))
    order = np.argsort(keys, kind="stable")[:k]
    chosen = [int(ds.ids[i]) for i in order]
    targets = None
    if mode == RELABEL:
        if ds.num_classes < 2:
            raise ArgumentError("relabel mode needs at least 2 classes")
        targets = {}
        for pos, ident in zip(order, chosen):
            y = int(ds.labels[pos])
            draw = int(rng.integers(0, ds.num_classes - 1))
            targets[ident] = draw + 1 if draw >= y else draw
    manifest = ForgetManifest(chosen, mode, int(seed), targets)
    manifest.validate_against(ds)
    return manifest


def split_remaining(ds: Dataset, manifest: ForgetManifest):
    """Partition ds into (forget, remaining).

    The forget split holds exactly the manifest ids in manifest order; the
    remaining split keeps the original row order.
    """
    forget_positions = ds.index_of(manifest.ids)
    mask = np.ones(len(ds), dtype=bool)
    mask[forget_positions] = False
    forget = ds.take(forget_positions)
    remaining = ds.take(np.flatnonzero(mask))
    return forget, remaining


def save_manifest(manifest: ForgetManifest, path):
    doc = {"mode": manifest.mode, "seed": manifest.seed, "ids": manifest.ids}
    if manifest.relabel_targets is not None:
        doc["relabel_targets"] = {str(k): v for k, v in manifest.relabel_targets.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    targets = doc.get("relabel_targets")
    if targets is not None:
        targets = {int(k): int(v) for k, v in targets.items()}
    return ForgetManifest(doc["ids"], doc["mode"], int(doc["seed"]), targets)


def save_dataset(ds: Dataset, directory):
    """Write a dataset directory: raw arrays plus a JSON index."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = {
        "num_classes": ds.num_classes,
        "shape": list(ds.input_shape),
        "count": len(ds),
    }
    (directory / "index.json").write_text(json.dumps(index, sort_keys=True) + "\n")
    ds.inputs.astype("<f4").tofile(directory / "inputs.bin")
    ds.labels.astype("<i8").tofile(directory / "labels.bin")
    ds.ids.astype("<i8").tofile(directory / "ids.bin")


def load_dataset(directory):
    from pathlib import Path

    directory = Path(directory)
    index = json.loads((directory / "index.json").read_text())
    shape = [index["count"]] + list(index["shape"])
    inputs = np.fromfile(directory / "inputs.bin", dtype="<f4").reshape(shape)
    labels = np.fromfile(directory / "labels.bin", dtype="<i8")
    ids = np.fromfile(directory / "ids.bin", dtype="<i8")
    return Dataset(inputs, labels, ids, index["num_classes"])
