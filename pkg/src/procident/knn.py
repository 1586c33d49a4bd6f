"""Exhaustive-scan k-nearest-neighbors with Minkowski distance.

Neighbors are ordered by ``(distance, training index)``. Votes are either
uniform or ``1/d``; under ``1/d`` weighting, if any neighbor sits at distance
zero only the zero-distance neighbors vote (one vote each). Class ties go to
the lexicographically smallest label.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from procident.exceptions import ParameterError

Voting = Literal["uniform", "distance_weighted"]
VOTING_CHOICES = ("uniform", "distance_weighted")


@dataclass(frozen=True)
class Hyperparameters:
    k: int = 1
    voting: str = "distance_weighted"
    p: float = 1
    m: int = 100

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ParameterError(f"k must be a positive integer, got {self.k}")
        if self.voting not in VOTING_CHOICES:
            raise ParameterError(f"voting must be one of {VOTING_CHOICES}, got {self.voting!r}")
        if not self.p >= 1:
            raise ParameterError(f"Minkowski p must be >= 1, got {self.p}")
        if int(self.m) != self.m or self.m < 1:
            raise ParameterError(f"m must be a positive integer, got {self.m}")

    def as_dict(self) -> dict:
        return {"k": self.k, "voting": self.voting, "p": self.p, "m": self.m}


@dataclass(frozen=True)
class TrainingIndex:
    points: np.ndarray
    labels: tuple

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2:
            raise ParameterError("training points must form a 2-D array")
        if pts.shape[0] != len(self.labels):
            raise ParameterError("one label per training point required")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def label_set(self) -> list:
        return sorted(set(self.labels))

    def __eq__(self, other):
        if not isinstance(other, TrainingIndex):
            return NotImplemented
        return self.labels == other.labels and np.array_equal(self.points, other.points)

    __hash__ = None


@dataclass(frozen=True)
class Prediction:
    label: str
    neighbors: tuple  # ((training index, distance), ...)
    votes: dict = field(default_factory=dict)

    @property
    def nearest_distance(self) -> float:
        return self.neighbors[0][1]


def minkowski_distance(x, y, p: float) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ParameterError(f"length mismatch: {x.shape} vs {y.shape}")
    if p < 1:
        raise ParameterError(f"Minkowski p must be >= 1, got {p}")
    return float(_pairwise(x[None, :], y[None, :], p)[0, 0])


def _pairwise(Q: np.ndarray, P: np.ndarray, p: float) -> np.ndarray:
    """Distances between every row of ``Q`` and every row of ``P``."""
    out = np.empty((Q.shape[0], P.shape[0]))
    # chunked to bound the (q, n, dim) temporary
    step = max(1, int(4_000_000 // max(1, P.shape[0] * max(1, P.shape[1]))))
    for a in range(0, Q.shape[0], step):
        diff = np.abs(Q[a:a + step, None, :] - P[None, :, :])
        if p == 1:
            out[a:a + step] = diff.sum(axis=2)
        elif p == 2:
            out[a:a + step] = np.sqrt((diff * diff).sum(axis=2))
        else:
            out[a:a + step] = (diff ** p).sum(axis=2) ** (1.0 / p)
    return out


def _order(dist_row: np.ndarray, k: int) -> np.ndarray:
    # stable sort keeps lower training index first among equal distances
    return np.argsort(dist_row, kind="stable")[:k]


def find_k_nearest(index: TrainingIndex, q, k: int, p: float) -> list[tuple[int, float]]:
    q = np.asarray(q, dtype=float)
    if k > index.n:
        raise ParameterError(f"k={k} exceeds the {index.n} training points")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if q.shape != (index.dim,):
        raise ParameterError(f"query has shape {q.shape}, index dimension is {index.dim}")
    d = _pairwise(q[None, :], index.points, p)[0]
    return [(int(i), float(d[i])) for i in _order(d, k)]


def vote(neighbors: Sequence[tuple[int, float]], labels: Sequence, voting: str) -> tuple[str, dict]:
    weights: dict = {}
    if voting == "uniform":
        for i, _ in neighbors:
            weights[labels[i]] = weights.get(labels[i], 0.0) + 1.0
    elif voting == "distance_weighted":
        zero = [i for i, d in neighbors if d == 0.0]
        if zero:
            for i in zero:
                weights[labels[i]] = weights.get(labels[i], 0.0) + 1.0
        else:
            for i, d in neighbors:
                weights[labels[i]] = weights.get(labels[i], 0.0) + 1.0 / d
    else:
        raise ParameterError(f"unknown voting {voting!r}")
    best = max(weights.values())
    label = min(lab for lab, w in weights.items() if w == best)
    return label, weights


def classify(index: TrainingIndex, q, hyper: Hyperparameters) -> Prediction:
    neighbors = find_k_nearest(index, q, hyper.k, hyper.p)
    label, weights = vote(neighbors, index.labels, hyper.voting)
    return Prediction(label, tuple(neighbors), weights)


def classify_many(index: TrainingIndex, Q, hyper: Hyperparameters) -> list[Prediction]:
    """Batch form of :func:`classify`; identical results, one distance matrix."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if hyper.k > index.n:
        raise ParameterError(f"k={hyper.k} exceeds the {index.n} training points")
    if Q.shape[1] != index.dim:
        raise ParameterError(f"queries have dimension {Q.shape[1]}, index dimension is {index.dim}")
    D = _pairwise(Q, index.points, hyper.p)
    order = np.argsort(D, axis=1, kind="stable")[:, : hyper.k]
    out = []
    for row, idx in zip(D, order):
        neighbors = tuple((int(i), float(row[i])) for i in idx)
        label, weights = vote(neighbors, index.labels, hyper.voting)
        out.append(Prediction(label, neighbors, weights))
    return out


class MinkowskiKNNClassifier(ClassifierMixin, BaseEstimator):
    """k-NN classifier over dense coordinates.

    Fitting only stores the training points; all work happens at query time.

    Parameters
    ----------
    n_neighbors : int, default=1
    weights : {"uniform", "distance_weighted"}, default="distance_weighted"
    p : float, default=1
        Minkowski exponent; 2 gives the Euclidean distance.
    """

    def __init__(self, n_neighbors=1, weights="distance_weighted", p=1):
        self.n_neighbors = n_neighbors
        self.weights = weights
        self.p = p

    def _hyper(self):
        return Hyperparameters(k=self.n_neighbors, voting=self.weights, p=self.p, m=1)

    def fit(self, X, y):
        X = check_array(X)
        self._hyper()
        self.index_ = TrainingIndex(X, tuple(y))
        self.classes_ = np.array(self.index_.label_set)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_detailed(self, X) -> list[Prediction]:
        check_is_fitted(self, "index_")
        return classify_many(self.index_, check_array(X), self._hyper())

    def predict(self, X):
        return np.array([p.label for p in self.predict_detailed(X)], dtype=object)

    def kneighbors(self, X):
        preds = self.predict_detailed(X)
        dist = np.array([[d for _, d in p.neighbors] for p in preds])
        ind = np.array([[i for i, _ in p.neighbors] for p in preds])
        return dist, ind
