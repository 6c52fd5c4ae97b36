"""Random-forest turn classifier over 3-axis gyro features, from scratch.

Trees are grown on bootstrap samples with Gini-impurity splits, drawing one
random feature per split (of the three). Prediction is a majority vote across
trees with ties broken toward NoTurn. SMOTE interpolation rebalances the
minority turn classes before fitting; inside cross-validation it is applied
to training folds only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError
from .geodesy import TurnClass
from .metrics import ConfusionMatrix, metrics
from .simulator import Trip

# Integer codes; NO_TURN first so argmax ties resolve toward it.
CLASS_ORDER = (TurnClass.NO_TURN, TurnClass.RIGHT, TurnClass.LEFT)
_CLASS_INDEX = {c: i for i, c in enumerate(CLASS_ORDER)}
N_CLASSES = len(CLASS_ORDER)
GYRO_FEATURES = ("gyro_x", "gyro_y", "gyro_z")

DEFAULT_N_TREES = 100
DEFAULT_MAX_DEPTH = 12
DEFAULT_MIN_SAMPLES_LEAF = 2
DEFAULT_SMOTE_K = 5
_MIN_IMPURITY_DECREASE = 1e-12


@dataclass
class LabeledGyroSet:
    """Gyro rows normalized to [0, 1] plus integer class labels."""

    features: np.ndarray  # (n, 3) in [0, 1]
    labels: np.ndarray  # (n,) int codes per CLASS_ORDER
    bounds: np.ndarray  # (2, 3) raw min/max used for normalization

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[1] != len(GYRO_FEATURES):
            raise ValidationError(f"features must be (n, 3), got {self.features.shape}")
        if len(self.features) != len(self.labels):
            raise ValidationError("features and labels disagree on length")
        if self.features.size and (
            self.features.min() < -1e-12 or self.features.max() > 1 + 1e-12
        ):
            raise ValidationError("normalized features escape [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= N_CLASSES):
            raise ValidationError("labels outside class codes")

    def __len__(self) -> int:
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=N_CLASSES)

    @classmethod
    def from_normalized(cls, features, labels) -> "LabeledGyroSet":
        """Rows already in [0, 1]; identity bounds."""
        bounds = np.vstack([np.zeros(3), np.ones(3)])
        return cls(np.asarray(features, dtype=float), _encode_labels(labels), bounds)


def _encode_labels(labels) -> np.ndarray:
    if len(labels) and isinstance(labels[0], TurnClass):
        return np.array([_CLASS_INDEX[l] for l in labels], dtype=np.int64)
    return np.asarray(labels, dtype=np.int64)


def make_gyro_set(trip: Trip) -> LabeledGyroSet:
    """Labeled gyro rows from a trip's records and truth_turn labels."""
    if not trip.records or trip.records[0].truth_turn is None:
        raise ValidationError("trip has no turn labels")
    raw = np.array([rec.gyro for rec in trip.records], dtype=float)
    lo = raw.min(axis=0)
    hi = raw.max(axis=0)
    for j, name in enumerate(GYRO_FEATURES):
        if not lo[j] < hi[j]:
            raise ValidationError(f"feature {name} is constant; cannot normalize")
    norm = (raw - lo) / (hi - lo)
    labels = np.array([_CLASS_INDEX[rec.truth_turn] for rec in trip.records], dtype=np.int64)
    return LabeledGyroSet(norm, labels, np.vstack([lo, hi]))


# ---------------------------------------------------------------------------
# SMOTE


def smote_resample(
    gset: LabeledGyroSet, k_neighbors: int = DEFAULT_SMOTE_K, seed: int = 0
) -> LabeledGyroSet:
    """Oversample every minority class up to the majority count.

    Synthetic rows lie on segments between a minority sample and one of its
    k nearest same-class neighbors. A balanced set is returned unchanged.
    """
    counts = gset.class_counts()
    present = np.nonzero(counts)[0]
    majority = int(counts.max())
    if all(counts[c] == majority for c in present):
        return LabeledGyroSet(gset.features.copy(), gset.labels.copy(), gset.bounds.copy())
    rng = np.random.default_rng(seed)
    new_rows = [gset.features]
    new_labels = [gset.labels]
    for c in present:
        need = majority - int(counts[c])
        if need == 0:
            continue
        rows = gset.features[gset.labels == c]
        if len(rows) < 2:
            raise ValidationError(
                f"class {CLASS_ORDER[c].value} has {len(rows)} samples; SMOTE needs >= 2"
            )
        k = min(k_neighbors, len(rows) - 1)
        d2 = ((rows[:, None, :] - rows[None, :, :]) ** 2).sum(axis=2)
        np.fill_diagonal(d2, np.inf)
        neighbors = np.argsort(d2, axis=1, kind="stable")[:, :k]
        base = rng.integers(0, len(rows), need)
        pick = rng.integers(0, k, need)
        lam = rng.random(need)
        a = rows[base]
        b = rows[neighbors[base, pick]]
        new_rows.append(a + lam[:, None] * (b - a))
        new_labels.append(np.full(need, c, dtype=np.int64))
    return LabeledGyroSet(
        np.vstack(new_rows), np.concatenate(new_labels), gset.bounds.copy()
    )


# ---------------------------------------------------------------------------
# Trees

# Node arrays: feature < 0 marks a leaf; children index into the node list.


@dataclass
class _Tree:
    feature: np.ndarray  # (nodes,) int, -1 for leaf
    threshold: np.ndarray  # (nodes,) float
    left: np.ndarray  # (nodes,) int
    right: np.ndarray  # (nodes,) int
    counts: np.ndarray  # (nodes, N_CLASSES) class histogram at node

    def leaf_class(self, node: int) -> int:
        return int(np.argmax(self.counts[node]))


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def _best_split(values: np.ndarray, labels: np.ndarray, min_leaf: int):
    """Best threshold on one feature, or None if no impurity-reducing split."""
    order = np.argsort(values, kind="stable")
    sv = values[order]
    sl = labels[order]
    n = len(sv)
    one_hot = np.zeros((n, N_CLASSES))
    one_hot[np.arange(n), sl] = 1.0
    left_counts = np.cumsum(one_hot, axis=0)  # counts for split after position i
    total = left_counts[-1]
    # Candidate split positions: between distinct consecutive values, leaving
    # at least min_leaf samples on each side.
    pos = np.arange(1, n)
    distinct = sv[1:] > sv[:-1]
    valid = distinct & (pos >= min_leaf) & (n - pos >= min_leaf)
    if not valid.any():
        return None
    pos = pos[valid]
    lc = left_counts[pos - 1]
    rc = total - lc
    nl = pos.astype(float)
    nr = n - nl
    gini_l = 1.0 - np.sum((lc / nl[:, None]) ** 2, axis=1)
    gini_r = 1.0 - np.sum((rc / nr[:, None]) ** 2, axis=1)
    weighted = (nl * gini_l + nr * gini_r) / n
    parent = _gini(total)
    best = int(np.argmin(weighted))
    if parent - weighted[best] <= _MIN_IMPURITY_DECREASE:
        return None
    p = pos[best]
    threshold = 0.5 * (sv[p - 1] + sv[p])
    return threshold, float(weighted[best])


def _grow_tree(
    features: np.ndarray,
    labels: np.ndarray,
    max_depth: int,
    min_leaf: int,
    rng: np.random.Generator,
) -> _Tree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    counts: list[np.ndarray] = []

    def new_node(idx: np.ndarray) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(labels[idx], minlength=N_CLASSES))
        return node

    def split(node: int, idx: np.ndarray, depth: int) -> None:
        hist = counts[node]
        if (
            depth >= max_depth
            or len(idx) < 2 * min_leaf
            or np.count_nonzero(hist) < 2
        ):
            return
        f = int(rng.integers(0, features.shape[1]))
        found = _best_split(features[idx, f], labels[idx], min_leaf)
        if found is None:
            return
        thr, _ = found
        mask = features[idx, f] <= thr
        li = idx[mask]
        ri = idx[~mask]
        feature[node] = f
        threshold[node] = thr
        ln = new_node(li)
        left[node] = ln
        split(ln, li, depth + 1)
        rn = new_node(ri)
        right[node] = rn
        split(rn, ri, depth + 1)

    root_idx = np.arange(len(labels))
    root = new_node(root_idx)
    split(root, root_idx, 0)
    return _Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.vstack(counts),
    )


@dataclass
class TurnForest:
    trees: list[_Tree]
    n_trees: int
    max_depth: int
    min_samples_leaf: int
    feature_bounds: np.ndarray
    seed: int = 0


def fit(
    gset: LabeledGyroSet,
    n_trees: int = DEFAULT_N_TREES,
    max_depth: int = DEFAULT_MAX_DEPTH,
    min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF,
    seed: int = 0,
) -> TurnForest:
    """Grow the forest on bootstrap samples of the set."""
    if len(gset) == 0:
        raise ValidationError("empty training set")
    if np.count_nonzero(gset.class_counts()) < 2:
        raise ValidationError("training set has a single class; nothing to separate")
    if n_trees < 1 or max_depth < 1 or min_samples_leaf < 1:
        raise ValidationError("forest hyperparameters must be >= 1")
    seeds = np.random.SeedSequence(seed).spawn(n_trees)
    trees = []
    n = len(gset)
    for ss in seeds:
        rng = np.random.default_rng(ss)
        boot = rng.integers(0, n, n)
        trees.append(
            _grow_tree(gset.features[boot], gset.labels[boot], max_depth, min_samples_leaf, rng)
        )
    return TurnForest(
        trees=trees,
        n_trees=n_trees,
        max_depth=max_depth,
        min_samples_leaf=min_samples_leaf,
        feature_bounds=gset.bounds.copy(),
        seed=seed,
    )


def _route_tree(tree: _Tree, rows: np.ndarray) -> np.ndarray:
    """Leaf class per row, vectorized by level."""
    node = np.zeros(len(rows), dtype=np.int64)
    active = tree.feature[node] >= 0
    while active.any():
        idx = np.nonzero(active)[0]
        cur = node[idx]
        f = tree.feature[cur]
        go_left = rows[idx, f] <= tree.threshold[cur]
        node[idx[go_left]] = tree.left[cur[go_left]]
        node[idx[~go_left]] = tree.right[cur[~go_left]]
        active = tree.feature[node] >= 0
    leaf_classes = np.argmax(tree.counts, axis=1)
    return leaf_classes[node]


def _votes_normalized(model: TurnForest, rows: np.ndarray) -> np.ndarray:
    votes = np.zeros((len(rows), N_CLASSES), dtype=np.int64)
    for tree in model.trees:
        cls = _route_tree(tree, rows)
        votes[np.arange(len(rows)), cls] += 1
    return votes


def _decide(votes: np.ndarray) -> np.ndarray:
    """Majority vote; any tie for the top count goes to NoTurn."""
    top = votes.max(axis=1)
    winner = np.argmax(votes, axis=1)
    tied = (votes == top[:, None]).sum(axis=1) > 1
    winner[tied] = _CLASS_INDEX[TurnClass.NO_TURN]
    return winner


def _normalize_rows(model: TurnForest, raw: np.ndarray) -> np.ndarray:
    lo, hi = model.feature_bounds[0], model.feature_bounds[1]
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def predict(model: TurnForest, gyro_row) -> tuple[TurnClass, np.ndarray]:
    """Class and per-class vote fractions for one raw gyro row."""
    row = np.asarray(gyro_row, dtype=float)
    if row.shape != (len(GYRO_FEATURES),):
        raise ValidationError(f"expected {len(GYRO_FEATURES)} features, got {row.shape}")
    if not np.isfinite(row).all():
        raise ValidationError(f"non-finite gyro features {row}")
    votes = _votes_normalized(model, _normalize_rows(model, row[None, :]))
    cls = _decide(votes)[0]
    return CLASS_ORDER[cls], votes[0] / model.n_trees


def predict_batch(model: TurnForest, rows) -> tuple[np.ndarray, np.ndarray]:
    """Class codes and vote fractions for raw gyro rows, vectorized."""
    raw = np.asarray(rows, dtype=float)
    if not np.isfinite(raw).all():
        raise ValidationError("non-finite gyro features in batch")
    votes = _votes_normalized(model, _normalize_rows(model, raw))
    return _decide(votes), votes / model.n_trees


# ---------------------------------------------------------------------------
# Cross-validation


@dataclass
class CvReport:
    folds: int
    per_class: dict
    accuracy: float
    fold_matrices: list[ConfusionMatrix] = field(default_factory=list)
    hyperparams: dict = field(default_factory=dict)


def cross_validate(
    gset: LabeledGyroSet,
    folds: int = 5,
    *,
    n_trees: int = DEFAULT_N_TREES,
    max_depth: int = DEFAULT_MAX_DEPTH,
    min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF,
    smote_k: int = DEFAULT_SMOTE_K,
    seed: int = 0,
) -> CvReport:
    """Stratified k-fold CV; SMOTE is applied inside training folds only.

    Metrics are the across-fold mean of each fold's per-class precision,
    recall, F1 and accuracy.
    """
    counts = gset.class_counts()
    present = np.nonzero(counts)[0]
    for c in present:
        if counts[c] < folds:
            raise ValidationError(
                f"class {CLASS_ORDER[c].value} has {counts[c]} samples; needs >= {folds}"
            )
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(gset), dtype=np.int64)
    for c in present:
        idx = np.nonzero(gset.labels == c)[0]
        idx = idx[rng.permutation(len(idx))]
        fold_of[idx] = np.arange(len(idx)) % folds
    fold_seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(folds)]

    labels_order = tuple(CLASS_ORDER)
    fold_matrices = []
    per_fold_metrics = []
    per_fold_accuracy = []
    for k in range(folds):
        val_mask = fold_of == k
        train_set = LabeledGyroSet(
            gset.features[~val_mask], gset.labels[~val_mask], gset.bounds
        )
        balanced = smote_resample(train_set, k_neighbors=smote_k, seed=fold_seeds[k])
        model = fit(
            balanced,
            n_trees=n_trees,
            max_depth=max_depth,
            min_samples_leaf=min_samples_leaf,
            seed=fold_seeds[k],
        )
        votes = _votes_normalized(model, gset.features[val_mask])
        pred = _decide(votes)
        cm = ConfusionMatrix(labels_order)
        cm.add_many(pred, gset.labels[val_mask])
        fold_matrices.append(cm)
        per_class, accuracy = metrics(cm)
        per_fold_metrics.append(per_class)
        per_fold_accuracy.append(accuracy)

    def mean_or_none(values):
        known = [v for v in values if v is not None]
        return None if not known else float(np.mean(known))

    averaged = {}
    for label in labels_order:
        averaged[label] = {
            "precision": mean_or_none([m[label].precision for m in per_fold_metrics]),
            "recall": mean_or_none([m[label].recall for m in per_fold_metrics]),
            "f1": mean_or_none([m[label].f1 for m in per_fold_metrics]),
        }
    return CvReport(
        folds=folds,
        per_class=averaged,
        accuracy=float(np.mean(per_fold_accuracy)),
        fold_matrices=fold_matrices,
        hyperparams={
            "n_trees": n_trees,
            "max_depth": max_depth,
            "min_samples_leaf": min_samples_leaf,
            "smote_k": smote_k,
            "seed": seed,
        },
    )


# ---------------------------------------------------------------------------
# Serialization

_MAGIC = "spoofbench-forest v1"


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def save_forest(model: TurnForest, path) -> None:
    lines = [
        _MAGIC,
        f"n_trees {model.n_trees}",
        f"max_depth {model.max_depth}",
        f"min_samples_leaf {model.min_samples_leaf}",
        f"seed {model.seed}",
        "bounds "
        + " ".join(_fmt(v) for v in model.feature_bounds[0])
        + " "
        + " ".join(_fmt(v) for v in model.feature_bounds[1]),
    ]
    for tree in model.trees:
        lines.append(f"tree {len(tree.feature)}")
        for i in range(len(tree.feature)):
            if tree.feature[i] < 0:
                hist = " ".join(str(int(c)) for c in tree.counts[i])
                lines.append(f"leaf {hist}")
            else:
                lines.append(
                    f"split {int(tree.feature[i])} {_fmt(tree.threshold[i])} "
                    f"{int(tree.left[i])} {int(tree.right[i])} "
                    + " ".join(str(int(c)) for c in tree.counts[i])
                )
    lines.append("end")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_forest(path) -> TurnForest:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise FormatError(f"not a {_MAGIC} file")
    header = {}
    i = 1
    for key in ("n_trees", "max_depth", "min_samples_leaf", "seed"):
        parts = lines[i].split()
        if len(parts) != 2 or parts[0] != key:
            raise FormatError(f"line {i + 1}: expected '{key} <value>'")
        header[key] = int(parts[1])
        i += 1
    parts = lines[i].split()
    if parts[0] != "bounds" or len(parts) != 1 + 2 * len(GYRO_FEATURES):
        raise FormatError(f"line {i + 1}: bad bounds line")
    vals = [float(v) for v in parts[1:]]
    bounds = np.array([vals[: len(GYRO_FEATURES)], vals[len(GYRO_FEATURES) :]])
    i += 1
    trees = []
    while i < len(lines) and lines[i] != "end":
        parts = lines[i].split()
        if parts[0] != "tree" or len(parts) != 2:
            raise FormatError(f"line {i + 1}: expected 'tree <n>'")
        n_nodes = int(parts[1])
        i += 1
        feature = np.empty(n_nodes, dtype=np.int64)
        threshold = np.zeros(n_nodes)
        left = np.full(n_nodes, -1, dtype=np.int64)
        right = np.full(n_nodes, -1, dtype=np.int64)
        counts = np.zeros((n_nodes, N_CLASSES), dtype=np.int64)
        for node in range(n_nodes):
            parts = lines[i].split()
            if parts[0] == "leaf":
                if len(parts) != 1 + N_CLASSES:
                    raise FormatError(f"line {i + 1}: bad leaf line")
                feature[node] = -1
                counts[node] = [int(v) for v in parts[1:]]
            elif parts[0] == "split":
                if len(parts) != 5 + N_CLASSES:
                    raise FormatError(f"line {i + 1}: bad split line")
                feature[node] = int(parts[1])
                threshold[node] = float(parts[2])
                left[node] = int(parts[3])
                right[node] = int(parts[4])
                counts[node] = [int(v) for v in parts[5:]]
            else:
                raise FormatError(f"line {i + 1}: expected leaf or split")
            i += 1
        trees.append(_Tree(feature, threshold, left, right, counts))
    if i >= len(lines) or lines[i] != "end":
        raise FormatError("forest file truncated")
    if len(trees) != header["n_trees"]:
        raise FormatError(
            f"header says {header['n_trees']} trees, file has {len(trees)}"
        )
    return TurnForest(
        trees=trees,
        n_trees=header["n_trees"],
        max_depth=header["max_depth"],
        min_samples_leaf=header["min_samples_leaf"],
        feature_bounds=bounds,
        seed=header["seed"],
    )
