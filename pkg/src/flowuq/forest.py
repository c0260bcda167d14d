"""Random forest of Gini-grown CART trees, built directly on numpy.

Each tree trains on a bootstrap resample (same size as the input, drawn
with replacement) and considers a fresh random feature subset at every
node.  Candidate thresholds are the midpoints between consecutive distinct
sorted values; the split minimizing the child-size-weighted Gini impurity
wins, ties going to the earliest candidate.  Leaves remember their class
counts and emit Laplace-smoothed distributions ``(count_k + 1) / (n + K)``
so every tree is a proper ensemble member with full support.

Feature scaling is irrelevant to axis-aligned splits, so these models take
raw, unstandardized inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .exceptions import DataError
from .numerics import STREAM_FOREST, derive_rng, derive_seed
from .validation import check_features, check_is_fitted, check_labels

_MODEL_FORMAT = "flowuq-forest-v1"


@dataclass
class _Tree:
    """Array-encoded decision tree.

    ``feature[i] < 0`` marks node i as a leaf; otherwise the node routes a
    sample left when ``x[feature[i]] <= threshold[i]``.  ``counts`` holds
    the training class counts of every node (only leaves are consulted at
    prediction time).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    n_classes: int,
    rng: np.random.Generator,
    max_depth: int | None,
    min_samples_split: int,
    n_candidate_features: int,
) -> _Tree:
    n, d = X.shape
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(node_counts) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(node_counts)
        return len(feature) - 1

    # stack entries: (row indices, depth, parent node, is-right-child)
    stack = [(np.arange(n), 0, -1, False)]
    while stack:
        idx, depth, parent, is_right = stack.pop()
        node_counts = np.bincount(y[idx], minlength=n_classes).astype(np.float64)
        node = new_node(node_counts)
        if parent >= 0:
            (right if is_right else left)[parent] = node

        pure = node_counts.max() == idx.size
        depth_capped = max_depth is not None and depth >= max_depth
        if idx.size < min_samples_split or pure or depth_capped:
            continue

        if n_candidate_features >= d:
            feats = np.arange(d)
        else:
            feats = np.sort(rng.choice(d, size=n_candidate_features, replace=False))
        split = _best_split(X[idx][:, feats], y[idx], n_classes)
        if split is None:
            continue
        feat_slot, thr = split
        feat = int(feats[feat_slot])
        go_left = X[idx, feat] <= thr
        feature[node] = feat
        threshold[node] = thr
        stack.append((idx[~go_left], depth + 1, node, True))
        stack.append((idx[go_left], depth + 1, node, False))

    return _Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        counts=np.stack(counts),
    )


def _best_split(Xs: np.ndarray, ys: np.ndarray, n_classes: int):
    """Best (feature slot, midpoint threshold) by weighted Gini, or None.

    Evaluates every gap between consecutive distinct sorted values of every
    candidate feature at once.  Ties on impurity resolve to the earliest
    gap of the earliest feature slot, which keeps tree growth deterministic
    given the candidate order.
    """
    n, m = Xs.shape
    order = np.argsort(Xs, axis=0, kind="stable")
    sorted_vals = np.take_along_axis(Xs, order, axis=0)
    sorted_labels = ys[order]  # (n, m)

    onehot = sorted_labels[..., None] == np.arange(n_classes)  # (n, m, K)
    left_counts = np.cumsum(onehot, axis=0, dtype=np.float64)[:-1]  # (n-1, m, K)
    total = left_counts[-1] + onehot[-1]
    right_counts = total[None, :, :] - left_counts

    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    gini_left = 1.0 - np.sum(left_counts**2, axis=2) / n_left**2
    gini_right = 1.0 - np.sum(right_counts**2, axis=2) / n_right**2
    cost = n_left * gini_left + n_right * gini_right  # (n-1, m)

    valid = sorted_vals[1:] > sorted_vals[:-1]
    if not valid.any():
        return None
    cost = np.where(valid, cost, np.inf)
    flat = int(np.argmin(cost))  # ties: earliest gap, then earliest feature slot
    gap, slot = divmod(flat, m)
    thr = 0.5 * (sorted_vals[gap, slot] + sorted_vals[gap + 1, slot])
    return slot, float(thr)


def _tree_apply(tree: _Tree, X: np.ndarray) -> np.ndarray:
    """Leaf node id reached by every row."""
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = tree.feature[node] >= 0
    while active.any():
        rows = np.nonzero(active)[0]
        current = node[rows]
        go_left = X[rows, tree.feature[current]] <= tree.threshold[current]
        node[rows] = np.where(go_left, tree.left[current], tree.right[current])
        active[rows] = tree.feature[node[rows]] >= 0
    return node


class RandomForestFlowClassifier(BaseEstimator, ClassifierMixin):
    """Bootstrap ensemble of Gini CART trees with smoothed leaf outputs.

    Parameters
    ----------
    n_trees : int
        Ensemble size.
    max_depth : int or None
        Depth cap; None grows until purity or ``min_samples_split``.
    min_samples_split : int
        Smallest node that may still be split.
    features_per_split : "sqrt", "all" or int
        Candidate features drawn at each node; "sqrt" takes ``ceil(sqrt(d))``.
    bootstrap : bool
        Resample the training set per tree (size n, with replacement).
    n_classes : int or None
        Class-table size; None infers ``max(y) + 1`` at fit time.
    seed : int
        Per-tree seeds derive from this, so tree t is reproducible no
        matter how or in what order the forest is built.
    """

    def __init__(
        self,
        n_trees: int = 25,
        max_depth: int | None = None,
        min_samples_split: int = 2,
        features_per_split="sqrt",
        bootstrap: bool = True,
        n_classes: int | None = None,
        seed: int = 0,
    ):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.features_per_split = features_per_split
        self.bootstrap = bootstrap
        self.n_classes = n_classes
        self.seed = seed

    def _n_candidates(self, d: int) -> int:
        if self.features_per_split == "sqrt":
            return int(np.ceil(np.sqrt(d)))
        if self.features_per_split == "all":
            return d
        m = int(self.features_per_split)
        if not 1 <= m <= d:
            raise ValueError(f"features_per_split must be in [1, {d}]")
        return m

    def fit(self, X, y):
        X = check_features(X)
        y = check_labels(y, X.shape[0], self.n_classes)
        k = self.n_classes if self.n_classes is not None else int(y.max()) + 1
        if k < 2:
            raise DataError("need at least two classes")
        if self.n_trees < 1 or self.min_samples_split < 2:
            raise ValueError("n_trees must be >= 1 and min_samples_split >= 2")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be None or >= 0")
        n_candidates = self._n_candidates(X.shape[1])

        trees = []
        n = X.shape[0]
        for t in range(self.n_trees):
            rng = derive_rng(derive_seed(self.seed, STREAM_FOREST, t))
            if self.bootstrap:
                sample = rng.integers(0, n, size=n)
                Xt, yt = X[sample], y[sample]
            else:
                Xt, yt = X, y
            trees.append(
                _grow_tree(
                    Xt,
                    yt,
                    k,
                    rng,
                    self.max_depth,
                    self.min_samples_split,
                    n_candidates,
                )
            )
        self.trees_ = trees
        self.classes_ = np.arange(k)
        self.n_classes_ = k
        self.n_features_in_ = X.shape[1]
        return self

    # -- prediction --------------------------------------------------------

    def member_proba(self, X) -> np.ndarray:
        """Per-tree smoothed leaf distributions, shape (n, n_trees, K)."""
        check_is_fitted(self, "trees_")
        X = check_features(X, n_features=self.n_features_in_)
        k = self.n_classes_
        out = np.empty((X.shape[0], len(self.trees_), k))
        for t, tree in enumerate(self.trees_):
            leaf = _tree_apply(tree, X)
            leaf_counts = tree.counts[leaf]
            out[:, t, :] = (leaf_counts + 1.0) / (
                leaf_counts.sum(axis=1, keepdims=True) + k
            )
        return out

    def predict_proba(self, X) -> np.ndarray:
        return self.member_proba(X).mean(axis=1)

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        """Dump all trees as concatenated node arrays (bit-exact)."""
        check_is_fitted(self, "trees_")
        sizes = np.array([t.n_nodes for t in self.trees_], dtype=np.int64)
        meta = {
            "settings": {
                k: (v if not isinstance(v, np.integer) else int(v))
                for k, v in self.get_params().items()
            },
            "n_classes": int(self.n_classes_),
            "n_features": int(self.n_features_in_),
        }
        np.savez(
            path,
            format=np.array(_MODEL_FORMAT),
            meta=np.array(json.dumps(meta)),
            sizes=sizes,
            feature=np.concatenate([t.feature for t in self.trees_]),
            threshold=np.concatenate([t.threshold for t in self.trees_]),
            left=np.concatenate([t.left for t in self.trees_]),
            right=np.concatenate([t.right for t in self.trees_]),
            counts=np.concatenate([t.counts for t in self.trees_]),
        )

    @classmethod
    def load(cls, path) -> "RandomForestFlowClassifier":
        with np.load(path) as archive:
            if "format" not in archive or str(archive["format"]) != _MODEL_FORMAT:
                raise DataError(f"unrecognized model dump format in {path}")
            meta = json.loads(str(archive["meta"]))
            model = cls(**meta["settings"])
            sizes = archive["sizes"]
            offsets = np.concatenate([[0], np.cumsum(sizes)])
            trees = []
            for t in range(len(sizes)):
                lo, hi = offsets[t], offsets[t + 1]
                trees.append(
                    _Tree(
                        feature=archive["feature"][lo:hi],
                        threshold=archive["threshold"][lo:hi],
                        left=archive["left"][lo:hi],
                        right=archive["right"][lo:hi],
                        counts=archive["counts"][lo:hi],
                    )
                )
            model.trees_ = trees
            model.n_classes_ = meta["n_classes"]
            model.classes_ = np.arange(model.n_classes_)
            model.n_features_in_ = meta["n_features"]
        return model
