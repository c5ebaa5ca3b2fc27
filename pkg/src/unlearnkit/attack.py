"""Targeted L2 projected-gradient attacks and the adversarial-set builder.

Each record's randomness (attack target, random start) comes from a seed
sequence derived from (global seed, source id, record index), so the builder
is order-independent and safe to parallelize.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .datasets import Dataset
from .errors import ArgumentError, NumericError
from .models import _backward, _check_batch, _forward, CrossEntropyObjective, predict
from .serialize import read_blob, write_blob

PER_IMAGE = "per_image"
PER_EXAMPLE = "per_example"

_BALL_SLACK = 1.0 + 1e-5
_PGD_CHUNK = 64


@dataclass
class AttackConfig:
    epsilon: float = 0.4
    step_size: float = 0.1
    iterations: int = 100
    random_start: bool = True
    clamp_pixels: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ArgumentError("epsilon must be positive")
        if self.iterations < 1:
            raise ArgumentError("iterations must be >= 1")
        if self.step_size < 0:
            raise ArgumentError("step_size must be non-negative")


@dataclass
class AdversarialSet:
    """Generated examples (x', target) with provenance back to their sources."""

    inputs: np.ndarray
    targets: np.ndarray
    source_ids: np.ndarray
    record_index: np.ndarray
    config: dict

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float32)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        self.source_ids = np.asarray(self.source_ids, dtype=np.int64)
        self.record_index = np.asarray(self.record_index, dtype=np.int64)
        if not (len(self.inputs) == len(self.targets) == len(self.source_ids) == len(self.record_index)):
            raise ArgumentError("adversarial set fields must have equal length")

    def __len__(self):
        return len(self.targets)

    @classmethod
    def empty(cls, input_shape, config=None):
        return cls(
            np.zeros((0, *input_shape), dtype=np.float32),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
            dict(config or {}),
        )

    def validate_against(self, source: Dataset, epsilon):
        """Check ball containment and target legality for every record."""
        positions = source.index_of(self.source_ids)
        delta = self.inputs - source.inputs[positions]
        norms = np.linalg.norm(delta.reshape(len(self), -1), axis=1)
        if np.any(norms > epsilon * _BALL_SLACK):
            raise ArgumentError(f"record outside the L2 ball: max norm {norms.max():.6f}")
        if np.any(self.targets == source.labels[positions]):
            raise ArgumentError("attack target equals the source label")


def _ball_noise(rng, shape, epsilon):
    """A point drawn uniformly from the L2 ball of radius epsilon."""
    v = rng.standard_normal(shape)
    norm = np.linalg.norm(v)
    if norm == 0:
        return np.zeros(shape)
    radius = epsilon * rng.random() ** (1.0 / v.size)
    return v * (radius / norm)


def _project_ball(z, x0, epsilon):
    delta = z - x0
    flat = delta.reshape(len(z), -1)
    norms = np.linalg.norm(flat, axis=1)
    factor = np.minimum(1.0, epsilon / np.maximum(norms, 1e-12))
    return x0 + (flat * factor[:, None]).reshape(delta.shape)


def _pgd_batch(state, x0, targets, cfg, starts=None, dtype=np.float32):
    """Run the PGD iterations on a batch; `starts` are pre-drawn offsets."""
    x0 = np.ascontiguousarray(x0, dtype=dtype)
    if cfg.clamp_pixels and (x0.min() < 0.0 or x0.max() > 1.0):
        raise ArgumentError("clamp_pixels requires inputs already within [0, 1]")
    z = x0.copy()
    if starts is not None:
        z = _project_ball(x0 + starts.astype(dtype), x0, cfg.epsilon)
        if cfg.clamp_pixels:
            z = np.clip(z, 0.0, 1.0)
    objective = CrossEntropyObjective(targets)
    for _ in range(cfg.iterations):
        logits, caches, _ = _forward(state, z, dtype)
        _, grad = _backward(state, caches, objective.dlogits(logits).astype(dtype), need_param_grads=False)
        gnorm = np.linalg.norm(grad.reshape(len(z), -1), axis=1)
        if not np.all(np.isfinite(gnorm)):
            raise NumericError("non-finite attack gradient")
        step = grad.reshape(len(z), -1) / np.maximum(gnorm, 1e-12)[:, None]
        z = z - cfg.step_size * step.reshape(z.shape).astype(dtype)
        z = _project_ball(z, x0, cfg.epsilon)
        if cfg.clamp_pixels:
            z = np.clip(z, 0.0, 1.0)
    return z


def pgd_l2_targeted(state, x, y_bar, cfg: AttackConfig, rng=None):
    """Targeted L2-PGD: normalized descent on CE toward y_bar, projected
    onto the epsilon ball around x each step (then clamped to [0, 1] when
    clamp_pixels). Returns the final iterate."""
    if not 0 <= int(y_bar) < state.num_classes:
        raise ArgumentError(f"attack target {y_bar} out of range")
    x = np.asarray(x, dtype=np.float32)
    single = tuple(x.shape) == state.input_shape
    batch = x[None] if single else _check_batch(state, x)
    starts = None
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        starts = np.stack([_ball_noise(rng, batch.shape[1:], cfg.epsilon) for _ in batch])
    targets = np.full(len(batch), int(y_bar), dtype=np.int64)
    out = _pgd_batch(state, batch, targets, cfg, starts)
    return out[0] if single else out


def _draw_target(rng, y, num_classes):
    draw = int(rng.integers(0, num_classes - 1))
    return draw + 1 if draw >= y else draw


def generate_adversarial_set(state, d_f: Dataset, n_adv, cfg: AttackConfig, target_policy=PER_IMAGE):
    """Attack every forget instance n_adv times.

    per_image: one target per source, shared by its records (the default);
    per_example: an independent target per record. Record order is source
    order crossed with record index; total is len(d_f) * n_adv.
    """
    if n_adv < 1:
        raise ArgumentError("n_adv must be >= 1")
    if target_policy not in (PER_IMAGE, PER_EXAMPLE):
        raise ArgumentError(f"unknown target_policy {target_policy}")
    if d_f.num_classes < 2:
        raise ArgumentError("cannot pick an attack target with a single class")

    sources = []
    targets = []
    source_ids = []
    record_index = []
    starts = []
    for pos in range(len(d_f)):
        sid = int(d_f.ids[pos])
        y = int(d_f.labels[pos])
        if target_policy == PER_IMAGE:
            img_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, sid]))
            shared = _draw_target(img_rng, y, d_f.num_classes)
        for j in range(n_adv):
            rec_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, sid, j]))
            if target_policy == PER_EXAMPLE:
                targets.append(_draw_target(rec_rng, y, d_f.num_classes))
            else:
                targets.append(shared)
            starts.append(
                _ball_noise(rec_rng, d_f.input_shape, cfg.epsilon) if cfg.random_start else None
            )
            sources.append(d_f.inputs[pos])
            source_ids.append(sid)
            record_index.append(j)

    adv = np.empty((len(sources), *d_f.input_shape), dtype=np.float32)
    targets = np.asarray(targets, dtype=np.int64)
    for lo in range(0, len(sources), _PGD_CHUNK):
        hi = min(lo + _PGD_CHUNK, len(sources))
        x0 = np.stack(sources[lo:hi])
        st = np.stack(starts[lo:hi]) if cfg.random_start else None
        adv[lo:hi] = _pgd_batch(state, x0, targets[lo:hi], cfg, st)
    return AdversarialSet(adv, targets, source_ids, record_index, asdict(cfg))


def targeted_success_rate(state, advset: AdversarialSet):
    """Fraction of records the model classifies as their attack target."""
    if len(advset) == 0:
        raise ArgumentError("empty adversarial set")
    return float(np.mean(predict(state, advset.inputs) == advset.targets))


_ADVSET_FORMAT = "unlearnkit-advset"


def save_adversarial_set(advset: AdversarialSet, path):
    header = {"format": _ADVSET_FORMAT, "version": 1, "config": advset.config}
    write_blob(path, header, [advset.inputs, advset.targets, advset.source_ids, advset.record_index])


def load_adversarial_set(path):
    header, arrays = read_blob(path)
    if header.get("format") != _ADVSET_FORMAT:
        raise ArgumentError(f"{path}: not an adversarial-set file")
    inputs, targets, source_ids, record_index = arrays
    return AdversarialSet(inputs, targets, source_ids, record_index, header["config"])
