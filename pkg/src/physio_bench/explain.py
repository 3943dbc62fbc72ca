"""Exact SHAP attributions for tree ensembles and linear models.

Tree attributions use the exact path-dependent algorithm: conditional
expectations come from per-node training covers recorded at fit time, and
the extend/unwind weight bookkeeping yields every feature's Shapley value
in one pass per tree. Boosting ensembles are explained on the per-class
log-odds margin, bagging ensembles on the averaged probability margin;
either way the local-accuracy identity sum(phi) + base = margin(x) holds
to float precision.

Linear models get the closed form phi_i = w_i (z_i - background_i) on the
standardized scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SchemaMismatch
from .models.logistic import LogisticModel
from .models.trees import LEAF, Tree, TreeEnsembleModel


@dataclass
class Attribution:
    """Per-feature contributions for one explained input."""

    classes: list[str]
    feature_names: list[str]
    phi: np.ndarray           # (K, d)
    base_values: np.ndarray   # (K,)
    x: np.ndarray             # (d,) imputed feature values
    subject_id: str | None = None
    window_start: float | None = None

    def margin(self) -> np.ndarray:
        return self.phi.sum(axis=1) + self.base_values


# --- path-dependent tree recursion ---------------------------------------------


def _extend(feats, zeros, ones, pw, pz, po, pi):
    l = len(pw)
    feats.append(pi)
    zeros.append(pz)
    ones.append(po)
    pw.append(1.0 if l == 0 else 0.0)
    for i in range(l - 1, -1, -1):
        pw[i + 1] += po * pw[i] * (i + 1) / (l + 1)
        pw[i] = pz * pw[i] * (l - i) / (l + 1)


def _unwind(feats, zeros, ones, pw, depth, index):
    of = ones[index]
    zf = zeros[index]
    next_one = pw[depth]
    for i in range(depth - 1, -1, -1):
        if of != 0.0:
            tmp = pw[i]
            pw[i] = next_one * (depth + 1) / ((i + 1) * of)
            next_one = tmp - pw[i] * zf * (depth - i) / (depth + 1)
        else:
            pw[i] = pw[i] * (depth + 1) / (zf * (depth - i))
    for i in range(index, depth):
        feats[i] = feats[i + 1]
        zeros[i] = zeros[i + 1]
        ones[i] = ones[i + 1]
    feats.pop()
    zeros.pop()
    ones.pop()
    pw.pop()


def _unwound_sum(zeros, ones, pw, depth, index) -> float:
    of = ones[index]
    zf = zeros[index]
    next_one = pw[depth]
    total = 0.0
    if of != 0.0:
        for i in range(depth - 1, -1, -1):
            tmp = next_one / ((i + 1) * of)
            total += tmp
            next_one = pw[i] - tmp * zf * (depth - i)
    else:
        for i in range(depth - 1, -1, -1):
            total += pw[i] / (zf * (depth - i))
    return total * (depth + 1)


def _recurse(tree: Tree, x, phi, node, feats, zeros, ones, pw, pz, po, pi):
    _extend(feats, zeros, ones, pw, pz, po, pi)
    depth = len(pw) - 1
    f = tree.feature[node]
    if f == LEAF:
        value = tree.value[node]
        for i in range(1, depth + 1):
            w = _unwound_sum(zeros, ones, pw, depth, i)
            phi[feats[i]] += w * (ones[i] - zeros[i]) * value
        return
    if x[f] <= tree.threshold[node]:
        hot, cold = tree.left[node], tree.right[node]
    else:
        hot, cold = tree.right[node], tree.left[node]
    cover = tree.cover[node]
    hot_zero = tree.cover[hot] / cover
    cold_zero = tree.cover[cold] / cover
    iz = io = 1.0
    try:
        k = feats.index(f)
    except ValueError:
        k = -1
    if k >= 0:
        iz, io = zeros[k], ones[k]
        _unwind(feats, zeros, ones, pw, depth, k)
    _recurse(tree, x, phi, hot, list(feats), list(zeros), list(ones), list(pw),
             iz * hot_zero, io, int(f))
    _recurse(tree, x, phi, cold, list(feats), list(zeros), list(ones), list(pw),
             iz * cold_zero, 0.0, int(f))


def shap_single_tree(tree: Tree, x: np.ndarray, n_features: int) -> np.ndarray:
    """Exact path-dependent Shapley values of one tree, shape (d, n_out)."""
    phi = np.zeros((n_features, tree.n_out))
    _recurse(tree, x, phi, 0, [], [], [], [], 1.0, 1.0, -1)
    return phi


def tree_shap(model: TreeEnsembleModel, x: np.ndarray,
              subject_id: str | None = None,
              window_start: float | None = None) -> Attribution:
    """Sum of exact per-tree attributions on the ensemble's margin scale."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    d = len(model.feature_names)
    if x.shape[0] != d:
        raise SchemaMismatch(f"expected {d} features, got {x.shape[0]}")
    xi = model.stats.impute_only(x[None, :])[0]
    K = len(model.classes)
    phi = np.zeros((K, d))
    base = np.zeros(K)
    if model.mode == "boosting":
        base += model.base_score
        for tree, k in zip(model.trees, model.tree_class):
            phi[k] += model.learning_rate * shap_single_tree(tree, xi, d)[:, 0]
            base[k] += model.learning_rate * float(tree.expected_value()[0])
    else:
        B = max(1, len(model.trees))
        for tree in model.trees:
            phi += shap_single_tree(tree, xi, d).T / B
            base += tree.expected_value() / B
    return Attribution(list(model.classes), list(model.feature_names), phi, base,
                       xi, subject_id, window_start)


def linear_shap(model: LogisticModel, x: np.ndarray,
                background_means: np.ndarray | None = None,
                subject_id: str | None = None,
                window_start: float | None = None) -> Attribution:
    """Closed-form linear attributions on the standardized margin.

    The default background is the training column means, which standardize
    to the zero vector, so the base value is the bias row.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    d = len(model.feature_names)
    if x.shape[0] != d:
        raise SchemaMismatch(f"expected {d} features, got {x.shape[0]}")
    z = model.stats.transform(x[None, :])[0]
    if background_means is None:
        zb = np.zeros(d)
    else:
        background_means = np.asarray(background_means, dtype=np.float64).reshape(-1)
        if background_means.shape[0] != d:
            raise SchemaMismatch("background means length mismatch")
        zb = model.stats.transform(background_means[None, :])[0]
    phi = model.weights * (z - zb)[None, :]
    base = model.weights @ zb + model.bias
    xi = model.stats.impute_only(x[None, :])[0]
    return Attribution(list(model.classes), list(model.feature_names), phi, base,
                       xi, subject_id, window_start)


def explain_input(model, x: np.ndarray, **kw) -> Attribution:
    """Dispatch to the exact explainer for the model kind; distance- and
    margin-based models (k-NN, SVM) are rejected."""
    if isinstance(model, TreeEnsembleModel):
        return tree_shap(model, x, **kw)
    if isinstance(model, LogisticModel):
        return linear_shap(model, x, **kw)
    raise ConfigError(
        f"SHAP explanations support tree ensembles and the linear model, "
        f"not {model.kind!r}"
    )


# --- aggregation ------------------------------------------------------------------


def global_importance(attributions: list[Attribution]) -> list[tuple[str, float]]:
    """Mean |phi| per feature (summed over classes), ranked descending;
    ties keep schema order."""
    if not attributions:
        raise SchemaMismatch("need at least one attribution")
    names = attributions[0].feature_names
    score = np.zeros(len(names))
    for att in attributions:
        score += np.abs(att.phi).sum(axis=0)
    score /= len(attributions)
    order = np.argsort(-score, kind="stable")
    return [(names[i], float(score[i])) for i in order]


def class_summary(attributions: list[Attribution],
                  labels: list[str]) -> dict[str, list[dict]]:
    """Per-class aggregation backing beeswarm-style exports.

    For each class: that class's phi over its own windows, with the mean
    phi, mean |phi|, and the Pearson correlation between feature value and
    phi per feature.
    """
    if len(attributions) != len(labels):
        raise SchemaMismatch("labels must align with attributions")
    names = attributions[0].feature_names
    out: dict[str, list[dict]] = {}
    for cls in sorted(set(str(v) for v in labels)):
        rows = [a for a, l in zip(attributions, labels) if str(l) == cls]
        ci = attributions[0].classes.index(cls) if cls in attributions[0].classes else 0
        phi = np.array([a.phi[ci] for a in rows])
        vals = np.array([a.x for a in rows])
        table = []
        for j, name in enumerate(names):
            table.append({
                "feature": name,
                "mean_shap": float(phi[:, j].mean()),
                "mean_abs_shap": float(np.abs(phi[:, j]).mean()),
                "value_shap_corr": _pearson(vals[:, j], phi[:, j]),
            })
        out[cls] = table
    return out


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    if len(x) < 2:
        return 0.0
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0:
        return 0.0
    return float((xc * yc).sum() / denom)
