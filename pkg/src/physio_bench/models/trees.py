"""Decision-tree ensembles: bagged Gini forests and gradient boosting.

One learner with modes covers the tree-ensemble family. Bagging grows
deep Gini-split classification trees on bootstrap resamples with a
sqrt(d) per-tree feature subset and averages leaf class distributions.
Boosting runs multiclass gradient boosting on the softmax log-loss: each
round fits one regression tree per class to the residual (one-hot minus
probability) and assigns leaves their Newton step, sum(residual) /
(sum(p(1-p)) + lambda). Growth is level-wise under a depth limit or
leaf-wise under a leaf-count limit, with exact or 64-bin histogram split
search.

Trees store per-node training cover so path-dependent SHAP can compute
conditional expectations without a background sample.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from ..errors import SchemaMismatch
from .base import (
    ColumnStats,
    DataMatrix,
    TrainConfig,
    argmax_class,
    class_order,
    encode_labels,
    require_multiclass,
    softmax,
)

LEAF = -1

#: Splits are kept when gain >= 0 (within float tolerance): zero-gain
#: splits are structurally necessary for interaction patterns (XOR) whose
#: first split improves nothing by itself. A node with no valid split
#: position, or only loss-increasing splits, becomes a leaf.
MIN_GAIN = -1e-12


@dataclass
class Tree:
    """Flat-array binary tree; node 0 is the root, LEAF marks leaves."""

    feature: np.ndarray      # (n_nodes,) split feature, LEAF at leaves
    threshold: np.ndarray    # (n_nodes,) split threshold (x <= t goes left)
    left: np.ndarray         # (n_nodes,)
    right: np.ndarray        # (n_nodes,)
    value: np.ndarray        # (n_nodes, n_out) leaf payload (zeros inside)
    cover: np.ndarray        # (n_nodes,) training rows through the node

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_out(self) -> int:
        return self.value.shape[1]

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Leaf payload per row, shape (n, n_out)."""
        out = np.empty((X.shape[0], self.n_out))
        self._route(X, np.arange(X.shape[0]), 0, out)
        return out

    def _route(self, X, rows, node, out):
        if self.feature[node] == LEAF:
            out[rows] = self.value[node]
            return
        go_left = X[rows, self.feature[node]] <= self.threshold[node]
        self._route(X, rows[go_left], self.left[node], out)
        self._route(X, rows[~go_left], self.right[node], out)

    def expected_value(self) -> np.ndarray:
        """Cover-weighted mean leaf payload (the path-dependent base value)."""
        return self._expect(0)

    def _expect(self, node) -> np.ndarray:
        if self.feature[node] == LEAF:
            return self.value[node]
        l, r = self.left[node], self.right[node]
        wl = self.cover[l] / self.cover[node]
        wr = self.cover[r] / self.cover[node]
        return wl * self._expect(l) + wr * self._expect(r)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.array(d["feature"], dtype=np.intp),
            threshold=np.array(d["threshold"], dtype=np.float64),
            left=np.array(d["left"], dtype=np.intp),
            right=np.array(d["right"], dtype=np.intp),
            value=np.array(d["value"], dtype=np.float64),
            cover=np.array(d["cover"], dtype=np.float64),
        )


class _TreeBuilder:
    """Accumulates nodes during growth and freezes them into a Tree."""

    def __init__(self, n_out: int):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[np.ndarray] = []
        self.cover: list[float] = []
        self.n_out = n_out

    def add(self, cover: float, value: np.ndarray | None = None) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(np.zeros(self.n_out) if value is None else np.asarray(value, dtype=np.float64))
        self.cover.append(float(cover))
        return len(self.feature) - 1

    def split(self, node: int, feature: int, threshold: float, left: int, right: int):
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = left
        self.right[node] = right
        self.value[node] = np.zeros(self.n_out)

    def freeze(self) -> Tree:
        return Tree(
            feature=np.array(self.feature, dtype=np.intp),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.intp),
            right=np.array(self.right, dtype=np.intp),
            value=np.array(self.value, dtype=np.float64),
            cover=np.array(self.cover, dtype=np.float64),
        )


# --- split search -----------------------------------------------------------


def _newton_value(g_sum: float, h_sum: float, lam: float) -> float:
    return g_sum / (h_sum + lam)


def _best_split_exact(X, g, h, idx, features, lam, min_leaf):
    """Best (gain, feature, threshold) over exact sorted split points."""
    G, H = g[idx].sum(), h[idx].sum()
    parent = G * G / (H + lam)
    best = (MIN_GAIN, -1, 0.0)
    for j in features:
        x = X[idx, j]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        gl = np.cumsum(g[idx][order])
        hl = np.cumsum(h[idx][order])
        # split after position i: left = first i+1 rows
        n = len(idx)
        pos = np.arange(n - 1)
        valid = xs[:-1] < xs[1:]
        if min_leaf > 1:
            valid &= (pos + 1 >= min_leaf) & (n - pos - 1 >= min_leaf)
        if not valid.any():
            continue
        GL, HL = gl[:-1][valid], hl[:-1][valid]
        GR, HR = G - GL, H - HL
        gains = 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent)
        k = int(np.argmax(gains))
        if gains[k] > best[0]:
            cut = np.flatnonzero(valid)[k]
            thr = 0.5 * (xs[cut] + xs[cut + 1])
            best = (float(gains[k]), j, float(thr))
    return best


class _Histogram:
    """Global quantile bin edges shared by every node of a boosting fit."""

    def __init__(self, X: np.ndarray, n_bins: int):
        self.edges: list[np.ndarray] = []
        codes = np.empty(X.shape, dtype=np.intp)
        qs = np.linspace(0, 1, n_bins + 1)[1:-1]
        for j in range(X.shape[1]):
            edges = np.unique(np.quantile(X[:, j], qs))
            self.edges.append(edges)
            codes[:, j] = np.searchsorted(edges, X[:, j], side="left")
        self.codes = codes

    def best_split(self, X, g, h, idx, features, lam, min_leaf):
        G, H = g[idx].sum(), h[idx].sum()
        parent = G * G / (H + lam)
        best = (MIN_GAIN, -1, 0.0)
        for j in features:
            edges = self.edges[j]
            if len(edges) == 0:
                continue
            nb = len(edges) + 1
            c = self.codes[idx, j]
            gb = np.bincount(c, weights=g[idx], minlength=nb)
            hb = np.bincount(c, weights=h[idx], minlength=nb)
            cb = np.bincount(c, minlength=nb)
            GL = np.cumsum(gb)[:-1]
            HL = np.cumsum(hb)[:-1]
            NL = np.cumsum(cb)[:-1]
            n = len(idx)
            valid = (NL >= min_leaf) & (n - NL >= min_leaf) & (NL > 0) & (NL < n)
            if not valid.any():
                continue
            GR, HR = G - GL, H - HL
            gains = np.where(
                valid,
                0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - parent),
                -np.inf,
            )
            k = int(np.argmax(gains))
            if gains[k] > best[0]:
                best = (float(gains[k]), j, float(edges[k]))
        return best


def grow_regression_tree(X, g, h, cfg: TrainConfig,
                         hist: _Histogram | None = None) -> tuple[Tree, np.ndarray]:
    """Newton regression tree on (gradient, hessian); returns the tree and
    each training row's fitted leaf value."""
    lam = cfg.reg_lambda
    min_leaf = cfg.resolved_min_leaf
    features = range(X.shape[1])
    builder = _TreeBuilder(n_out=1)
    fitted = np.empty(len(g))

    def finder(idx):
        if hist is not None:
            return hist.best_split(X, g, h, idx, features, lam, min_leaf)
        return _best_split_exact(X, g, h, idx, features, lam, min_leaf)

    def make_leaf(node, idx):
        w = _newton_value(g[idx].sum(), h[idx].sum(), lam)
        builder.value[node] = np.array([w])
        fitted[idx] = w

    max_depth = cfg.resolved_max_depth
    if cfg.growth == "depth":
        def recurse(idx, depth) -> int:
            node = builder.add(len(idx))
            limit = max_depth is not None and depth >= max_depth
            if limit or len(idx) < 2 * min_leaf:
                make_leaf(node, idx)
                return node
            gain, j, thr = finder(idx)
            if j < 0:
                make_leaf(node, idx)
                return node
            mask = X[idx, j] <= thr
            l = recurse(idx[mask], depth + 1)
            r = recurse(idx[~mask], depth + 1)
            builder.split(node, j, thr, l, r)
            return node

        recurse(np.arange(len(g)), 0)
    else:
        # Leaf-wise: repeatedly split the frontier leaf with the best gain.
        root_idx = np.arange(len(g))
        root = builder.add(len(root_idx))
        make_leaf(root, root_idx)
        heap: list = []
        counter = 0

        def push(node, idx):
            nonlocal counter
            if len(idx) < 2 * min_leaf:
                return
            gain, j, thr = finder(idx)
            if j >= 0:
                heapq.heappush(heap, (-gain, counter, node, idx, j, thr))
                counter += 1

        push(root, root_idx)
        n_leaves = 1
        while heap and n_leaves < cfg.max_leaves:
            _, _, node, idx, j, thr = heapq.heappop(heap)
            mask = X[idx, j] <= thr
            l = builder.add(int(mask.sum()))
            r = builder.add(int((~mask).sum()))
            make_leaf(l, idx[mask])
            make_leaf(r, idx[~mask])
            builder.split(node, j, thr, l, r)
            n_leaves += 1
            push(l, idx[mask])
            push(r, idx[~mask])

    return builder.freeze(), fitted


def grow_gini_tree(X, y, n_classes: int, features: np.ndarray,
                   max_depth: int | None, min_leaf: int) -> Tree:
    """Gini-impurity classification tree; leaves hold class distributions."""
    builder = _TreeBuilder(n_out=n_classes)

    def gini_counts(counts):
        n = counts.sum()
        return 1.0 - ((counts / n) ** 2).sum() if n else 0.0

    def best_split(idx):
        counts = np.bincount(y[idx], minlength=n_classes).astype(float)
        n = len(idx)
        parent = gini_counts(counts)
        best = (MIN_GAIN, -1, 0.0)
        for j in features:
            x = X[idx, j]
            order = np.argsort(x, kind="stable")
            xs = x[order]
            onehot = np.zeros((n, n_classes))
            onehot[np.arange(n), y[idx][order]] = 1.0
            cum = np.cumsum(onehot, axis=0)
            pos = np.arange(n - 1)
            valid = xs[:-1] < xs[1:]
            valid &= (pos + 1 >= min_leaf) & (n - pos - 1 >= min_leaf)
            if not valid.any():
                continue
            CL = cum[:-1][valid]
            NL = CL.sum(axis=1)
            CR = counts - CL
            NR = n - NL
            gini_l = 1.0 - (CL ** 2).sum(axis=1) / NL ** 2
            gini_r = 1.0 - (CR ** 2).sum(axis=1) / NR ** 2
            gains = parent - (NL / n) * gini_l - (NR / n) * gini_r
            k = int(np.argmax(gains))
            if gains[k] > best[0]:
                cut = np.flatnonzero(valid)[k]
                thr = 0.5 * (xs[cut] + xs[cut + 1])
                best = (float(gains[k]), j, float(thr))
        return best

    def recurse(idx, depth) -> int:
        node = builder.add(len(idx))
        counts = np.bincount(y[idx], minlength=n_classes).astype(float)
        pure = counts.max() == len(idx)
        deep = max_depth is not None and depth >= max_depth
        if pure or deep or len(idx) < 2 * min_leaf:
            builder.value[node] = counts / counts.sum()
            return node
        gain, j, thr = best_split(idx)
        if j < 0:
            builder.value[node] = counts / counts.sum()
            return node
        mask = X[idx, j] <= thr
        l = recurse(idx[mask], depth + 1)
        r = recurse(idx[~mask], depth + 1)
        builder.split(node, j, thr, l, r)
        return node

    recurse(np.arange(len(y)), 0)
    return builder.freeze()


# --- the ensemble model -------------------------------------------------------


@dataclass
class TreeEnsembleModel:
    mode: str                     # "bagging" or "boosting"
    classes: list[str]
    trees: list[Tree]
    tree_class: list[int]         # boosting: class index each tree scores
    learning_rate: float
    base_score: np.ndarray        # (K,) log prior for boosting, zeros bagging
    stats: ColumnStats
    feature_names: list[str]

    kind = "tree_ensemble"

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != len(self.feature_names):
            raise SchemaMismatch(
                f"expected {len(self.feature_names)} features, got {X.shape[1]}"
            )
        return self.stats.impute_only(X)

    def margins(self, X: np.ndarray) -> np.ndarray:
        """Boosting: per-class log-odds scores. Bagging: averaged leaf
        class distributions. Both are the scale SHAP explains."""
        X = self._check(X)
        K = len(self.classes)
        if self.mode == "boosting":
            out = np.tile(self.base_score, (X.shape[0], 1))
            for tree, k in zip(self.trees, self.tree_class):
                out[:, k] += self.learning_rate * tree.predict(X)[:, 0]
            return out
        out = np.zeros((X.shape[0], K))
        for tree in self.trees:
            out += tree.predict(X)
        return out / max(1, len(self.trees))

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        m = self.margins(X)
        if self.mode == "boosting":
            return softmax(m)
        return m

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X)

    def predict_class(self, X: np.ndarray) -> np.ndarray:
        return argmax_class(self.predict_proba(X), self.classes)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mode": self.mode,
            "classes": self.classes,
            "trees": [t.to_dict() for t in self.trees],
            "tree_class": self.tree_class,
            "learning_rate": self.learning_rate,
            "base_score": self.base_score.tolist(),
            "stats": self.stats.to_dict(),
            "feature_names": self.feature_names,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsembleModel":
        return cls(
            mode=d["mode"],
            classes=list(d["classes"]),
            trees=[Tree.from_dict(t) for t in d["trees"]],
            tree_class=list(d["tree_class"]),
            learning_rate=float(d["learning_rate"]),
            base_score=np.array(d["base_score"]),
            stats=ColumnStats.from_dict(d["stats"]),
            feature_names=list(d["feature_names"]),
        )


def _log_loss(scores: np.ndarray, y: np.ndarray) -> float:
    P = softmax(scores)
    return float(-np.mean(np.log(np.clip(P[np.arange(len(y)), y], 1e-15, None))))


def train_tree_ensemble(data: DataMatrix, cfg: TrainConfig) -> TreeEnsembleModel:
    if cfg.kind not in ("bagging", "boosting"):
        raise SchemaMismatch("train_tree_ensemble needs kind 'bagging' or 'boosting'")
    classes = class_order(data.labels)
    require_multiclass(classes)
    y = encode_labels(data.labels, classes)
    stats = ColumnStats.fit(data.X)
    X = stats.impute_only(data.X)
    n, d = X.shape
    K = len(classes)

    if cfg.kind == "bagging":
        n_sub = max(1, int(round(np.sqrt(d))))
        trees = []
        for t in range(cfg.resolved_trees):
            rng = np.random.default_rng([cfg.seed, t])
            rows = rng.integers(0, n, n)
            feats = np.sort(rng.choice(d, size=n_sub, replace=False))
            trees.append(
                grow_gini_tree(X[rows], y[rows], K, feats, cfg.resolved_max_depth,
                               cfg.resolved_min_leaf)
            )
        return TreeEnsembleModel("bagging", classes, trees, [LEAF] * len(trees),
                                 1.0, np.zeros(K), stats, list(data.feature_names))

    # boosting
    priors = np.bincount(y, minlength=K) / n
    base = np.log(np.clip(priors, 1e-15, None))
    scores = np.tile(base, (n, 1))
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0
    hist = _Histogram(X, cfg.n_bins) if cfg.splits == "hist" else None

    trees: list[Tree] = []
    tree_class: list[int] = []
    for _ in range(cfg.resolved_trees):
        P = softmax(scores)
        for k in range(K):
            g = Y[:, k] - P[:, k]          # residual = negative gradient
            h = P[:, k] * (1.0 - P[:, k])
            tree, fitted = grow_regression_tree(X, g, h, cfg, hist)
            scores[:, k] += cfg.learning_rate * fitted
            trees.append(tree)
            tree_class.append(k)

    return TreeEnsembleModel("boosting", classes, trees, tree_class,
                             cfg.learning_rate, base, stats,
                             list(data.feature_names))
