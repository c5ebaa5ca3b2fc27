"""Unlearning objectives, the early-stopped loops, and the baselines.

All loops share one epoch engine: SGD with momentum minimizes the method's
loss over the forget split, with regularizer batches (adversarial replay,
or the remaining data in the oracle's case) drawn cyclically inside each
step so every update sees both terms. Loops exit the first epoch-end check
at which the forget-split accuracy hits its target (0% for misclassify,
100% on the new labels for relabel), or after max_epochs.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .attack import AdversarialSet, AttackConfig, generate_adversarial_set
from .datasets import Dataset, ForgetManifest, MISCLASSIFY, RELABEL
from .errors import ArgumentError, ManifestError, NumericError
from .importance import (
    ImportanceMap,
    importance_penalty,
    invert,
    mas_importance,
    normalize_layerwise,
    penalty_gradient,
)
from .models import accuracy, backprop_batch, cross_entropy, forward, softmax
from .optim import SgdMomentum

NEGGRAD = "neggrad"
CORRECT = "correct"
ADV = "adv"
ADV_IMP = "adv_imp"
ORACLE = "oracle"
RAWP = "rawp"
METHODS = (NEGGRAD, CORRECT, ADV, ADV_IMP, ORACLE, RAWP)

REACHED_TARGET = "reached_target"
MAX_EPOCHS = "max_epochs"


@dataclass
class UnlearnConfig:
    method: str = ADV_IMP
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-5
    lam: float = 1.0
    lam_adv: float | None = None  # defaults to lam
    lam_imp: float | None = None  # defaults to lam
    max_epochs: int = 100
    batch_f: int = 32
    batch_adv: int | None = None  # None: 4x the effective forget batch
    n_adv: int = 20
    attack: AttackConfig = field(default_factory=AttackConfig)
    target_policy: str = "per_image"
    importance_on: str = "logits"
    gamma: float = 0.01
    awp_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ArgumentError(f"method must be one of {METHODS}")
        if self.lr < 0:
            raise ArgumentError("lr must be non-negative")
        if self.max_epochs < 1:
            raise ArgumentError("max_epochs must be >= 1")
        if self.lam < 0:
            raise ArgumentError("lambda must be non-negative")
        if self.gamma < 0:
            raise ArgumentError("gamma must be non-negative")
        if isinstance(self.attack, dict):
            self.attack = AttackConfig(**self.attack)

    def resolve_batch_adv(self, forget_count):
        if self.batch_adv is not None:
            return self.batch_adv
        return 4 * min(self.batch_f, forget_count)

    @property
    def effective_lam_adv(self):
        return self.lam if self.lam_adv is None else self.lam_adv

    @property
    def effective_lam_imp(self):
        return self.lam if self.lam_imp is None else self.lam_imp


@dataclass
class UnlearnResult:
    state: object
    epochs_run: int
    stop_reason: str
    trace: list
    method: str
    mode: str

    def final_accuracy(self):
        return self.trace[-1]["d_f_accuracy"]


# ---------------------------------------------------------------------------
# losses (float64; exact identities asserted by the tests)


def loss_ms(state, inputs, labels):
    """Misclassification objective: the negated cross-entropy on (x_f, y_f)."""
    return -cross_entropy(forward(state, inputs, dtype=np.float64), labels)


def loss_cor(state, inputs, targets):
    """Relabeling objective: plain cross-entropy toward the new labels y*."""
    return cross_entropy(forward(state, inputs, dtype=np.float64), targets)


def loss_ul(state, inputs, labels, mode):
    if mode == MISCLASSIFY:
        return loss_ms(state, inputs, labels)
    if mode == RELABEL:
        return loss_cor(state, inputs, labels)
    raise ArgumentError(f"unknown mode {mode}")


def loss_adv(state, f_inputs, f_labels, adv_inputs, adv_targets, mode, lam=1.0):
    """Unlearning loss plus lam * mean CE of adversarial records toward
    their attack targets. An empty adversarial batch contributes nothing."""
    base = loss_ul(state, f_inputs, f_labels, mode)
    if lam == 0 or len(adv_inputs) == 0:
        return base
    return base + lam * cross_entropy(forward(state, adv_inputs, dtype=np.float64), adv_targets)


def loss_adv_imp(
    state,
    state_tilde,
    omega_bar,
    f_inputs,
    f_labels,
    adv_inputs,
    adv_targets,
    mode,
    lam=1.0,
    lam_imp=None,
):
    """loss_adv plus the importance-weighted quadratic drift penalty."""
    lam_imp = lam if lam_imp is None else lam_imp
    base = loss_adv(state, f_inputs, f_labels, adv_inputs, adv_targets, mode, lam)
    if lam_imp == 0:
        return base
    return base + lam_imp * importance_penalty(state, state_tilde, omega_bar)


# ---------------------------------------------------------------------------
# loop machinery


def _mean_ce_grads(labels, sign):
    def fn(logits):
        loss = cross_entropy(logits, labels)
        g = softmax(logits)
        g[np.arange(len(labels)), labels] -= 1.0
        return sign * loss, sign * g / len(labels)

    return fn


class _CyclicBatcher:
    """Serve fixed-size batches from a fixed order, wrapping around."""

    def __init__(self, count, batch_size, order):
        self.order = order
        self.batch_size = min(batch_size, count) if count else 0
        self.cursor = 0

    def next_batch(self):
        n = len(self.order)
        picked = [(self.cursor + i) % n for i in range(self.batch_size)]
        self.cursor = (self.cursor + self.batch_size) % n
        return self.order[picked]


def _resolve_unlearn_labels(d_f: Dataset, manifest: ForgetManifest):
    """Labels the loss trains against and labels accuracy is scored against."""
    manifest.validate_against(d_f)
    if list(manifest.ids) != [int(i) for i in d_f.ids]:
        raise ManifestError("forget split must hold exactly the manifest ids in manifest order")
    if manifest.mode == RELABEL:
        targets = manifest.targets_for(d_f)
        return targets, targets, 1.0
    return d_f.labels, d_f.labels, 0.0


def prepare_omega_bar(state, d_f, importance_on="logits"):
    """Measure raw importance on the forget split, normalize per layer, invert."""
    return invert(normalize_layerwise(mas_importance(state, d_f, importance_on)))


def _trace_row(epoch, state, d_f, eval_labels, report_on):
    row = {"epoch": epoch, "d_f_accuracy": accuracy(state, d_f, labels=eval_labels)}
    for name, ds in (report_on or {}).items():
        row[f"{name}_accuracy"] = accuracy(state, ds)
    return row


def run_unlearning(
    s0,
    d_f: Dataset,
    manifest: ForgetManifest,
    cfg: UnlearnConfig,
    adv_set: AdversarialSet | None = None,
    omega_bar: ImportanceMap | None = None,
    report_on=None,
):
    """The early-stopped unlearning loop for neggrad/correct/adv/adv_imp.

    Adversarial replay and importance maps are generated from (s0, d_f)
    unless precomputed ones are supplied. The penalty reference is frozen at
    s0 for the whole run.
    """
    if cfg.method not in (NEGGRAD, CORRECT, ADV, ADV_IMP):
        raise ArgumentError(f"run_unlearning does not handle method {cfg.method}")
    train_labels, eval_labels, target = _resolve_unlearn_labels(d_f, manifest)
    if cfg.method == CORRECT and manifest.mode != RELABEL:
        raise ArgumentError("the correct baseline requires a relabel manifest")
    if cfg.method == NEGGRAD and manifest.mode != MISCLASSIFY:
        raise ArgumentError("neggrad requires a misclassify manifest")

    uses_adv = cfg.method in (ADV, ADV_IMP)
    if uses_adv and adv_set is None:
        adv_set = generate_adversarial_set(s0, d_f, cfg.n_adv, cfg.attack, cfg.target_policy)
    if not uses_adv:
        adv_set = AdversarialSet.empty(d_f.input_shape)
    if cfg.method == ADV_IMP and omega_bar is None:
        omega_bar = prepare_omega_bar(s0, d_f, cfg.importance_on)

    state = s0.copy()
    state_tilde = s0.copy() if cfg.method == ADV_IMP else None
    sign = -1.0 if manifest.mode == MISCLASSIFY else 1.0
    lam_adv = cfg.effective_lam_adv
    lam_imp = cfg.effective_lam_imp

    opt = SgdMomentum(state, cfg.lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    adv_batcher = None
    if len(adv_set) and lam_adv > 0:
        adv_batcher = _CyclicBatcher(
            len(adv_set), cfg.resolve_batch_adv(len(d_f)), rng.permutation(len(adv_set))
        )

    trace = [_trace_row(0, state, d_f, eval_labels, report_on)]
    epochs_run = 0
    acc = trace[0]["d_f_accuracy"]
    n = len(d_f)
    while acc != target and epochs_run < cfg.max_epochs:
        order = rng.permutation(n)
        ul_losses = []
        adv_losses = []
        for start in range(0, n, cfg.batch_f):
            pick = order[start : start + cfg.batch_f]
            loss, grads = backprop_batch(
                state, d_f.inputs[pick], _mean_ce_grads(train_labels[pick], sign)
            )
            ul_losses.append(loss)
            if adv_batcher is not None:
                apick = adv_batcher.next_batch()
                adv_loss, adv_grads = backprop_batch(
                    state, adv_set.inputs[apick], _mean_ce_grads(adv_set.targets[apick], 1.0)
                )
                adv_losses.append(adv_loss)
                # every example of the joint forget/replay batch carries equal
                # weight, as in one SGD pass over the concatenated datasets
                w_f = np.float32(len(pick) / (len(pick) + len(apick)))
                w_a = np.float32(lam_adv * len(apick) / (len(pick) + len(apick)))
                for g, ga in zip(grads, adv_grads):
                    for key in g:
                        g[key] *= w_f
                        g[key] += w_a * ga[key]
            if state_tilde is not None and lam_imp > 0:
                for g, gp in zip(grads, penalty_gradient(state, state_tilde, omega_bar)):
                    for key in g:
                        g[key] += lam_imp * gp[key].astype(np.float32)
            if not np.isfinite(loss) or (adv_losses and not np.isfinite(adv_losses[-1])):
                raise NumericError("unlearning loss diverged", epoch=epochs_run + 1)
            opt.step(state, grads)
        epochs_run += 1
        row = _trace_row(epochs_run, state, d_f, eval_labels, report_on)
        row["loss_ul"] = float(np.mean(ul_losses))
        if adv_losses:
            row["loss_adv"] = float(np.mean(adv_losses))
        if state_tilde is not None:
            row["loss_imp"] = importance_penalty(state, state_tilde, omega_bar)
        trace.append(row)
        acc = row["d_f_accuracy"]

    stop = REACHED_TARGET if acc == target else MAX_EPOCHS
    return UnlearnResult(state, epochs_run, stop, trace, cfg.method, manifest.mode)


def run_oracle(s0, d_f: Dataset, d_r: Dataset, manifest: ForgetManifest, cfg: UnlearnConfig, report_on=None):
    """Retraining reference: minimize L_UL(D_f) + CE(D_r) jointly.

    Runs until the forget target is reached or max_epochs; if the target is
    never reached, returns the epoch checkpoint with the lowest forget
    accuracy (ties: highest remaining accuracy, then earliest epoch).
    """
    train_labels, eval_labels, target = _resolve_unlearn_labels(d_f, manifest)
    state = s0.copy()
    sign = -1.0 if manifest.mode == MISCLASSIFY else 1.0
    opt = SgdMomentum(state, cfg.lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    r_batcher = None
    if len(d_r):
        r_batcher = _CyclicBatcher(
            len(d_r), cfg.resolve_batch_adv(len(d_f)), rng.permutation(len(d_r))
        )

    def snapshot_key(row):
        return (row["d_f_accuracy"], -row.get("d_r_accuracy", 0.0), row["epoch"])

    trace = [_trace_row(0, state, d_f, eval_labels, report_on)]
    if len(d_r):
        trace[0]["d_r_accuracy"] = accuracy(state, d_r)
    best = (snapshot_key(trace[0]), s0.copy())
    epochs_run = 0
    acc = trace[0]["d_f_accuracy"]
    n = len(d_f)
    while acc != target and epochs_run < cfg.max_epochs:
        order = rng.permutation(n)
        ul_losses = []
        for start in range(0, n, cfg.batch_f):
            pick = order[start : start + cfg.batch_f]
            loss, grads = backprop_batch(
                state, d_f.inputs[pick], _mean_ce_grads(train_labels[pick], sign)
            )
            ul_losses.append(loss)
            if r_batcher is not None:
                rpick = r_batcher.next_batch()
                _, r_grads = backprop_batch(
                    state, d_r.inputs[rpick], _mean_ce_grads(d_r.labels[rpick], 1.0)
                )
                # joint pass over forget + remaining with per-example weight
                w_f = np.float32(len(pick) / (len(pick) + len(rpick)))
                w_r = np.float32(len(rpick) / (len(pick) + len(rpick)))
                for g, gr in zip(grads, r_grads):
                    for key in g:
                        g[key] *= w_f
                        g[key] += w_r * gr[key]
            if not np.isfinite(loss):
                raise NumericError("oracle loss diverged", epoch=epochs_run + 1)
            opt.step(state, grads)
        epochs_run += 1
        row = _trace_row(epochs_run, state, d_f, eval_labels, report_on)
        row["loss_ul"] = float(np.mean(ul_losses))
        if len(d_r):
            row["d_r_accuracy"] = accuracy(state, d_r)
        trace.append(row)
        acc = row["d_f_accuracy"]
        key = snapshot_key(row)
        if key < best[0]:
            best = (key, state.copy())

    if acc == target:
        return UnlearnResult(state, epochs_run, REACHED_TARGET, trace, ORACLE, manifest.mode)
    return UnlearnResult(best[1], epochs_run, MAX_EPOCHS, trace, ORACLE, manifest.mode)


def run_rawp(s0, d_f: Dataset, cfg: UnlearnConfig, report_on=None):
    """Repeated adversarial weight perturbation (misclassification only).

    Each iteration copies the current model into a proxy, takes one full-batch
    descent step on the misclassification loss, then perturbs every layer
    toward the proxy with a norm-matched step of relative size gamma:
    d_i = ||theta_i|| / (||proxy_i - theta_i|| + awp_eps) * (proxy_i - theta_i).
    """
    state = s0.copy()
    labels = d_f.labels
    trace = [_trace_row(0, state, d_f, None, report_on)]
    epochs_run = 0
    acc = trace[0]["d_f_accuracy"]
    while acc != 0.0 and epochs_run < cfg.max_epochs:
        loss, grads = backprop_batch(state, d_f.inputs, _mean_ce_grads(labels, -1.0))
        if not np.isfinite(loss):
            raise NumericError("rawp proxy loss diverged", epoch=epochs_run + 1)
        for group, grad in zip(state.params, grads):
            # proxy layer after one lr-sized descent step on the proxy copy
            diff = {k: -np.float32(cfg.lr) * grad[k].astype(np.float32) for k in group}
            layer_norm = np.sqrt(sum(float(np.sum(group[k].astype(np.float64) ** 2)) for k in group))
            diff_norm = np.sqrt(sum(float(np.sum(diff[k].astype(np.float64) ** 2)) for k in diff))
            scale = np.float32(cfg.gamma * layer_norm / (diff_norm + cfg.awp_eps))
            for key in group:
                group[key] += scale * diff[key]
        epochs_run += 1
        row = _trace_row(epochs_run, state, d_f, None, report_on)
        row["loss_ul"] = float(loss)
        trace.append(row)
        acc = row["d_f_accuracy"]
    stop = REACHED_TARGET if acc == 0.0 else MAX_EPOCHS
    return UnlearnResult(state, epochs_run, stop, trace, RAWP, MISCLASSIFY)


def run_continual(s0, ds: Dataset, manifest: ForgetManifest, k_cl, cfg: UnlearnConfig, report_on=None):
    """Process the manifest as a stream of fragments of size k_cl.

    Each fragment starts from the previous result's state and regenerates
    its adversarial set and importance map from the current state, so the
    regularizers always describe the model actually being edited.
    """
    results = []
    state = s0
    for fragment in manifest.fragments(k_cl):
        d_f_frag = ds.take(ds.index_of(fragment.ids))
        result = run_unlearning(state, d_f_frag, fragment, cfg, report_on=report_on)
        results.append(result)
        state = result.state
    return results
