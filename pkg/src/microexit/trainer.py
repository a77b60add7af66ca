"""Joint two-head training with Adam and sparse categorical cross-entropy."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .metrics import compute_metrics, confusion
from .model import argmax_lowest
from .nn import softmax

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 0.007
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-7
    w_fob: float = 1.0
    w_base: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("need epochs >= 0, batch_size >= 1 and learning_rate > 0")
        if self.w_fob < 0 or self.w_base < 0 or self.w_fob + self.w_base <= 0:
            raise ConfigError("head loss weights must be non-negative with a positive sum")


# w-HAR runs use 300 epochs at lr 0.01; Opportunity runs 100 epochs at lr 0.007.
WHAR_TRAINING = TrainConfig(epochs=300, learning_rate=0.01)
OPPORTUNITY_TRAINING = TrainConfig(epochs=100, learning_rate=0.007)


def scce_loss(probabilities, labels):
    """Mean ``-log p[label]`` (probabilities floored at 1e-12) and the gradient
    of that mean with respect to the logits, ``(p - onehot) / batch``."""
    p = np.atleast_2d(np.asarray(probabilities, dtype=float))
    y = np.atleast_1d(np.asarray(labels, dtype=int))
    if len(y) != len(p):
        raise DataError(f"{len(p)} probability rows for {len(y)} labels")
    if y.size and (y.min() < 0 or y.max() >= p.shape[1]):
        raise DataError(f"label out of range [0, {p.shape[1]})")
    rows = np.arange(len(y))
    loss = float(-np.log(np.maximum(p[rows, y], PROB_FLOOR)).mean())
    grad = p.copy()
    grad[rows, y] -= 1.0
    return loss, grad / len(y)


# -- Adam -----------------------------------------------------------------


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(state: AdamState, params, grads, config: TrainConfig):
    """Bias-corrected Adam update applied in place to ``params``."""
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DataError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    return params


# -- data splits ----------------------------------------------------------


@dataclass(frozen=True)
class Fold:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def fixed_split(train, val=(), test=()) -> Fold:
    fold = Fold(*(np.asarray(sorted(ids), dtype=int) for ids in (train, val, test)))
    seen = set()
    for part in (fold.train, fold.val, fold.test):
        if seen & set(part.tolist()):
            raise ConfigError("split partitions overlap")
        seen |= set(part.tolist())
    return fold


# Opportunity challenge protocol, expressed per (subject, session).
OPPORTUNITY_SPLIT_MANIFEST = {
    "train": [("S1", s) for s in ("ADL1", "ADL2", "ADL3", "ADL4", "ADL5", "Drill")]
    + [(subj, s) for subj in ("S2", "S3") for s in ("ADL1", "ADL2", "Drill")],
    "val": [("S2", "ADL3"), ("S3", "ADL3")],
    "test": [(subj, s) for subj in ("S2", "S3") for s in ("ADL4", "ADL5")],
}


def split_from_manifest(sources, manifest=OPPORTUNITY_SPLIT_MANIFEST) -> Fold:
    """Assign segment ids by their source ``(subject, session)`` tag.

    Sources absent from the manifest are left out of every partition.
    """
    role = {tuple(src): name for name, srcs in manifest.items() for src in srcs}
    parts = {"train": [], "val": [], "test": []}
    for i, src in enumerate(sources):
        r = role.get(tuple(src))
        if r is not None:
            parts[r].append(i)
    return fixed_split(parts["train"], parts["val"], parts["test"])


def _apportion(class_counts, total):
    """Integer per-class quotas summing to ``total``, each within 1 of the
    proportional share (largest-remainder method, ties to the lower class)."""
    counts = np.asarray(class_counts, dtype=float)
    share = counts * total / counts.sum() if counts.sum() else counts
    base = np.floor(share).astype(int)
    left = int(total - base.sum())
    order = sorted(range(len(counts)), key=lambda i: (-(share[i] - base[i]), i))
    for i in order[:left]:
        base[i] += 1
    return base


def stratified_kfold(labels, k=5, seed=0, val_fraction=0.20):
    """``k`` stratified folds of (train, val, test) index arrays.

    Each class is shuffled with the seeded RNG and dealt round-robin to the
    folds, so the test sets partition the data.  Validation ids are drawn
    per class from the remaining ids so that ``val_fraction`` of them (rounded)
    are held out overall.
    """
    y = np.asarray(labels, dtype=int)
    if k < 2:
        raise ConfigError("k must be at least 2")
    classes, counts = np.unique(y, return_counts=True)
    small = classes[counts < k]
    if small.size:
        raise DataError(f"classes {small.tolist()} have fewer than k={k} segments")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(y), dtype=int)
    per_class = {}
    offset = 0
    for c in classes:
        ids = np.flatnonzero(y == c)
        ids = ids[rng.permutation(len(ids))]
        per_class[c] = ids
        # continue the round-robin where the previous class stopped so fold
        # sizes stay within one of each other
        fold_of[ids] = (np.arange(len(ids)) + offset) % k
        offset = (offset + len(ids)) % k
    folds = []
    for f in range(k):
        test = np.flatnonzero(fold_of == f)
        remaining = {c: ids[fold_of[ids] != f] for c, ids in per_class.items()}
        n_rest = sum(len(r) for r in remaining.values())
        quotas = _apportion([len(remaining[c]) for c in classes], int(round(val_fraction * n_rest)))
        val = np.concatenate([remaining[c][:q] for c, q in zip(classes, quotas)])
        train = np.concatenate([remaining[c][q:] for c, q in zip(classes, quotas)])
        folds.append(Fold(np.sort(train), np.sort(val), np.sort(test)))
    return folds


# -- training loop --------------------------------------------------------


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc_fob: float
    val_acc_base: float
    val_wf1_base: float


LOG_FIELDS = ("epoch", "train_loss", "val_loss", "val_acc_fob", "val_acc_base", "val_wf1_base")


def write_log(path, entries):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for e in entries:
            w.writerow([e.epoch] + [f"{getattr(e, f):.6f}" for f in LOG_FIELDS[1:]])


@dataclass
class TrainResult:
    model: object
    log: list
    best_epoch: int


def joint_loss(model, x, y, config: TrainConfig):
    """Training-mode loss and parameter gradients for one batch."""
    logits1, logits2, caches = model.forward_train(x)
    p1, p2 = softmax(logits1), softmax(logits2)
    l1, g1 = scce_loss(p1, y)
    l2, g2 = scce_loss(p2, y)
    grads = model.backward(caches, config.w_fob * g1, config.w_base * g2)
    return config.w_fob * l1 + config.w_base * l2, grads


def _evaluate(model, x, y, config):
    p1, p2 = model.forward_both(x)
    loss = config.w_fob * scce_loss(p1, y)[0] + config.w_base * scce_loss(p2, y)[0]
    pred1, pred2 = argmax_lowest(p1), argmax_lowest(p2)
    wf1 = compute_metrics(confusion(y, pred2, model.num_classes)).weighted_f1
    return loss, float(np.mean(pred1 == y)), float(np.mean(pred2 == y)), wf1


def train(model, data, labels, config: TrainConfig, split: Fold | None = None) -> TrainResult:
    """Train a copy of ``model``; the input model is left untouched.

    The returned model is the snapshot with the best validation weighted F1
    at the baseline exit (first such epoch on ties).  Without a validation
    partition the final epoch is returned.
    """
    x = np.asarray(data, dtype=float)
    y = np.asarray(labels, dtype=int)
    if split is None:
        split = Fold(np.arange(len(y)), np.array([], dtype=int), np.array([], dtype=int))
    train_ids = np.asarray(split.train, dtype=int)
    val_ids = np.asarray(split.val, dtype=int)
    if len(train_ids) == 0:
        raise DataError("empty training partition")
    n_c = model.num_classes
    if y.min() < 0 or y.max() >= n_c:
        raise DataError(f"labels must lie in [0, {n_c})")
    present = np.bincount(y[train_ids], minlength=n_c)
    if (present == 0).any():
        raise DataError(f"classes {np.flatnonzero(present == 0).tolist()} absent from training set")

    model = model.copy()
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    params = model.parameters()
    history = []
    best_score, best_state, best_epoch = -np.inf, None, 0

    for epoch in range(1, config.epochs + 1):
        order = train_ids[rng.permutation(len(train_ids))]
        losses, sizes = [], []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = joint_loss(model, x[batch], y[batch], config)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss {loss} at epoch {epoch}, batch at {start}")
            adam_step(state, params, grads, config)
            losses.append(loss)
            sizes.append(len(batch))
        train_loss = float(np.average(losses, weights=sizes))
        if len(val_ids):
            val = _evaluate(model, x[val_ids], y[val_ids], config)
        else:
            val = (float("nan"),) * 4
        history.append(EpochLog(epoch, train_loss, *val))
        log.debug("epoch %d train_loss %.5f val_wf1_base %.4f", epoch, train_loss, val[3])
        score = val[3] if len(val_ids) else epoch
        if score > best_score:
            best_score, best_epoch = score, epoch
            best_state = {k: v.copy() for k, v in model.state().items()}

    if best_state is not None:
        model.load_state(best_state)
    return TrainResult(model, history, best_epoch)


def predictions(model, data):
    """Predicted classes at both exits: ``(fob, baseline)``."""
    p1, p2 = model.forward_both(np.asarray(data, dtype=float))
    return argmax_lowest(p1), argmax_lowest(p2)

