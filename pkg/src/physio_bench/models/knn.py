"""k-nearest-neighbors on standardized columns.

Majority vote over the k closest training rows by Euclidean distance;
ties break first by the smaller mean distance of the tied classes'
neighbors, then by the smaller class index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import KTooLarge, SchemaMismatch
from .base import (
    ColumnStats,
    DataMatrix,
    TrainConfig,
    class_order,
    encode_labels,
    require_multiclass,
)


@dataclass
class KnnModel:
    classes: list[str]
    k: int
    points: np.ndarray            # standardized training rows
    point_classes: np.ndarray     # class indices
    stats: ColumnStats
    feature_names: list[str]

    kind = "knn"

    def _neighbors(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.points.shape[1]:
            raise SchemaMismatch(
                f"expected {self.points.shape[1]} features, got {X.shape[1]}"
            )
        Z = self.stats.transform(X)
        d2 = ((Z[:, None, :] - self.points[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")[:, : self.k]
        dist = np.sqrt(np.take_along_axis(d2, order, axis=1))
        return order, dist

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """Vote fractions among the k neighbors."""
        order, _ = self._neighbors(X)
        K = len(self.classes)
        out = np.zeros((order.shape[0], K))
        for i in range(order.shape[0]):
            votes = np.bincount(self.point_classes[order[i]], minlength=K)
            out[i] = votes / self.k
        return out

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        return self.predict_proba(X)

    def predict_class(self, X: np.ndarray) -> np.ndarray:
        order, dist = self._neighbors(X)
        K = len(self.classes)
        labels = np.empty(order.shape[0], dtype=object)
        for i in range(order.shape[0]):
            nbr_classes = self.point_classes[order[i]]
            votes = np.bincount(nbr_classes, minlength=K)
            top = votes.max()
            tied = np.flatnonzero(votes == top)
            if len(tied) == 1:
                labels[i] = self.classes[tied[0]]
                continue
            mean_dist = np.array(
                [dist[i][nbr_classes == c].mean() for c in tied]
            )
            # Smaller mean distance wins; argmin takes the smaller class
            # index on exact ties.
            labels[i] = self.classes[tied[int(np.argmin(mean_dist))]]
        return labels

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "classes": self.classes,
            "k": self.k,
            "points": self.points.tolist(),
            "point_classes": self.point_classes.tolist(),
            "stats": self.stats.to_dict(),
            "feature_names": self.feature_names,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnnModel":
        return cls(
            classes=list(d["classes"]),
            k=int(d["k"]),
            points=np.array(d["points"]),
            point_classes=np.array(d["point_classes"], dtype=np.intp),
            stats=ColumnStats.from_dict(d["stats"]),
            feature_names=list(d["feature_names"]),
        )


def train_knn(data: DataMatrix, cfg: TrainConfig) -> KnnModel:
    classes = class_order(data.labels)
    require_multiclass(classes)
    if cfg.knn_k > data.n:
        raise KTooLarge(f"k={cfg.knn_k} exceeds {data.n} training rows")
    if cfg.knn_k < 1:
        raise KTooLarge("k must be >= 1")
    y = encode_labels(data.labels, classes)
    stats = ColumnStats.fit(data.X)
    return KnnModel(classes, cfg.knn_k, stats.transform(data.X), y, stats,
                    list(data.feature_names))
