"""Exit-label generation and the decision-tree output block predictor.

Exit label 1 means "classify at the first output block", 2 means "run the
baseline".  A segment gets label 2 only when the baseline is right and the
first output block is wrong; every other case (both right, only the first
block right, neither right) is label 1, because the extra computation would
not buy a correct answer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .metrics import compute_metrics, confusion
from .model import checksum64

EXIT_LABELS = (1, 2)
TREE_MAGIC = "MXT1"
_GAIN_TOL = 1e-12


def label_exits(fob_predictions, baseline_predictions, true_labels):
    fob = np.asarray(fob_predictions)
    base = np.asarray(baseline_predictions)
    y = np.asarray(true_labels)
    if not (fob.shape == base.shape == y.shape):
        raise DataError(f"length mismatch: {fob.shape}, {base.shape}, {y.shape}")
    return np.where((fob != y) & (base == y), 2, 1)


@dataclass
class Node:
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    label: int = 1
    counts: tuple = (0, 0)       # training samples reaching the node, per exit label

    @property
    def is_leaf(self):
        return self.feature < 0


@dataclass
class ExitDecisionTree:
    nodes: list
    n_features: int
    max_depth: int | None = 6
    min_leaf: int = 5
    class_weight: tuple = (1.0, 1.0)
    seed: int = 0
    criterion: str = "gini"
    meta: dict = field(default_factory=dict)

    def predict_exit(self, feature_vector):
        x = np.asarray(feature_vector, dtype=float)
        if x.shape != (self.n_features,):
            raise DataError(f"tree expects {self.n_features} features, got shape {x.shape}")
        node = self.nodes[0]
        while not node.is_leaf:
            node = self.nodes[node.left if x[node.feature] < node.threshold else node.right]
        return node.label

    def predict(self, features):
        x = np.asarray(features, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise DataError(f"tree expects (n, {self.n_features}) features, got shape {x.shape}")
        out = np.empty(len(x), dtype=int)
        idx = np.zeros(len(x), dtype=int)
        pending = np.arange(len(x))
        while pending.size:
            still = []
            for node_id in np.unique(idx[pending]):
                rows = pending[idx[pending] == node_id]
                node = self.nodes[node_id]
                if node.is_leaf:
                    out[rows] = node.label
                    continue
                go_left = x[rows, node.feature] < node.threshold
                idx[rows] = np.where(go_left, node.left, node.right)
                still.append(rows)
            pending = np.concatenate(still) if still else np.array([], dtype=int)
        return out

    def depth(self):
        def walk(i):
            n = self.nodes[i]
            return 0 if n.is_leaf else 1 + max(walk(n.left), walk(n.right))
        return walk(0)

    def structure(self):
        return [(n.feature, n.threshold, n.left, n.right, n.label, tuple(n.counts))
                for n in self.nodes]


def constant_tree(label, n_features):
    """Single-leaf tree that routes everything to ``label``."""
    if label not in EXIT_LABELS:
        raise ConfigError(f"exit label must be 1 or 2, got {label}")
    return ExitDecisionTree([Node(label=label)], n_features, max_depth=0)


def gini(weighted_counts):
    w = np.asarray(weighted_counts, dtype=float)
    total = w.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = w / total[..., None]
        g = 1.0 - (p ** 2).sum(axis=-1)
    return np.where(total > 0, g, 0.0)


def _resolve_class_weight(class_weight, y):
    if class_weight is None:
        return np.ones(2)
    if isinstance(class_weight, str):
        if class_weight != "balanced":
            raise ConfigError(f"unknown class_weight {class_weight!r}")
        counts = np.array([(y == lab).sum() for lab in EXIT_LABELS], dtype=float)
        present = counts > 0
        w = np.ones(2)
        w[present] = len(y) / (present.sum() * counts[present])
        return w
    w = np.asarray([class_weight[lab] for lab in EXIT_LABELS] if isinstance(class_weight, dict)
                   else class_weight, dtype=float)
    if w.shape != (2,) or (w <= 0).any():
        raise ConfigError("class_weight needs two positive weights")
    return w


def _best_split(x, onehot_w, min_leaf):
    """Highest-gain ``(gain, feature, threshold)``; ties keep the lowest
    feature, then the lowest threshold.  None when no valid split exists."""
    n, d = x.shape
    total = onehot_w.sum(axis=0)
    parent = float(gini(total))
    W = total.sum()
    best = None
    for f in range(d):
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        cum = np.cumsum(onehot_w[order], axis=0)
        # candidate cut after position i (left = rows 0..i)
        i = np.arange(min_leaf - 1, n - min_leaf)
        if i.size == 0:
            continue
        i = i[xs[i] < xs[i + 1]]
        if i.size == 0:
            continue
        left = cum[i]
        right = total - left
        wl = left.sum(axis=1)
        wr = right.sum(axis=1)
        gain = parent - (wl * gini(left) + wr * gini(right)) / W
        j = int(np.flatnonzero(gain >= gain.max() - _GAIN_TOL)[0])
        if best is None or gain[j] > best[0] + _GAIN_TOL:
            lo, hi = xs[i[j]], xs[i[j] + 1]
            thr = (lo + hi) / 2.0
            if thr <= lo:  # adjacent floats: midpoint rounds down onto lo
                thr = hi
            best = (float(gain[j]), f, float(thr))
    return best


def train_tree(features, exit_labels, max_depth=6, min_leaf=5, class_weight="balanced", seed=0):
    """Greedy CART on weighted Gini impurity.

    ``class_weight`` is ``"balanced"`` (inverse label frequency), None, or a
    pair / ``{1: w1, 2: w2}`` mapping.  Impure nodes split whenever a split
    respecting ``min_leaf`` exists; ``max_depth=None`` removes the depth cap.
    Training is deterministic; ``seed`` is recorded for provenance only.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(exit_labels, dtype=int)
    if x.ndim != 2 or len(x) == 0:
        raise DataError("train_tree needs a non-empty (n, d) feature matrix")
    if len(y) != len(x):
        raise DataError(f"{len(x)} feature rows for {len(y)} labels")
    if not np.isin(y, EXIT_LABELS).all():
        raise DataError("exit labels must be 1 or 2")
    if min_leaf < 1:
        raise ConfigError("min_leaf must be >= 1")
    weights = _resolve_class_weight(class_weight, y)
    onehot_w = np.stack([(y == lab) * weights[k] for k, lab in enumerate(EXIT_LABELS)], axis=1)

    nodes = []

    def grow(rows, depth):
        wc = onehot_w[rows].sum(axis=0)
        counts = tuple(int((y[rows] == lab).sum()) for lab in EXIT_LABELS)
        # weighted majority; near-ties (float noise from balanced weights) go to 1
        node = Node(label=1 if wc[0] >= wc[1] or np.isclose(wc[0], wc[1]) else 2, counts=counts)
        nodes.append(node)
        me = len(nodes) - 1
        pure = min(counts) == 0
        if pure or (max_depth is not None and depth >= max_depth) or len(rows) < 2 * min_leaf:
            return me
        split = _best_split(x[rows], onehot_w[rows], min_leaf)
        if split is None:
            return me
        _, f, thr = split
        go_left = x[rows, f] < thr
        node.feature, node.threshold = f, thr
        node.left = grow(rows[go_left], depth + 1)
        node.right = grow(rows[~go_left], depth + 1)
        return me

    grow(np.arange(len(y)), 0)
    return ExitDecisionTree(nodes, x.shape[1], max_depth, min_leaf,
                            tuple(float(w) for w in weights), seed)


def predict_exit(tree: ExitDecisionTree, feature_vector):
    return tree.predict_exit(feature_vector)


def obp_confusion(tree, features, true_exit_labels):
    """2x2 confusion (rows = true exit, cols = predicted; order FOB, baseline)
    and its metrics."""
    pred = tree.predict(features)
    cm = confusion(np.asarray(true_exit_labels) - 1, pred - 1, 2)
    return cm, compute_metrics(cm)


# -- text format ----------------------------------------------------------


def dumps(tree: ExitDecisionTree) -> str:
    lines = [
        TREE_MAGIC,
        f"n_features={tree.n_features}",
        f"max_depth={'none' if tree.max_depth is None else tree.max_depth}",
        f"min_leaf={tree.min_leaf}",
        f"class_weight={tree.class_weight[0]!r},{tree.class_weight[1]!r}",
        f"criterion={tree.criterion}",
        f"seed={tree.seed}",
        f"nodes={len(tree.nodes)}",
    ]
    for i, n in enumerate(tree.nodes):
        counts = f"counts={n.counts[0]},{n.counts[1]}"
        if n.is_leaf:
            lines.append(f"node {i} leaf label={n.label} {counts}")
        else:
            lines.append(f"node {i} split feature={n.feature} threshold={n.threshold!r} "
                         f"left={n.left} right={n.right} label={n.label} {counts}")
    body = "\n".join(lines) + "\n"
    return body + f"checksum={checksum64(body.encode()).hex()}\n"


def loads(text: str) -> ExitDecisionTree:
    body, sep, tail = text.rpartition("checksum=")
    if not sep or checksum64(body.encode()).hex() != tail.strip():
        raise DataError("tree file checksum mismatch or missing")
    lines = body.splitlines()
    if not lines or lines[0] != TREE_MAGIC:
        raise DataError("not a tree file")
    meta, nodes = {}, []
    for line in lines[1:]:
        if line.startswith("node "):
            parts = line.split()
            kv = dict(p.split("=", 1) for p in parts[3:])
            counts = tuple(int(c) for c in kv["counts"].split(","))
            if parts[2] == "leaf":
                nodes.append(Node(label=int(kv["label"]), counts=counts))
            else:
                nodes.append(Node(int(kv["feature"]), float(kv["threshold"]), int(kv["left"]),
                                  int(kv["right"]), int(kv["label"]), counts))
        else:
            key, _, value = line.partition("=")
            meta[key] = value
    if len(nodes) != int(meta["nodes"]):
        raise DataError("tree node count mismatch")
    n_features = int(meta["n_features"])
    for n in nodes:
        if not n.is_leaf and not (0 <= n.feature < n_features
                                  and 0 < n.left < len(nodes) and 0 < n.right < len(nodes)):
            raise DataError("tree node references out of range")
    return ExitDecisionTree(
        nodes, n_features,
        None if meta["max_depth"] == "none" else int(meta["max_depth"]),
        int(meta["min_leaf"]),
        tuple(float(w) for w in meta["class_weight"].split(",")),
        int(meta["seed"]), meta["criterion"],
    )


def save_tree(tree, path):
    Path(path).write_text(dumps(tree))


def load_tree(path):
    return loads(Path(path).read_text())
