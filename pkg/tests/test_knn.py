import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.neighbors import KNeighborsClassifier

from procident.exceptions import ParameterError
from procident.knn import (
    Hyperparameters,
    MinkowskiKNNClassifier,
    TrainingIndex,
    classify,
    classify_many,
    find_k_nearest,
    minkowski_distance,
    vote,
)


def reference_classify(points, labels, q, k, p, voting):
    """Plain-Python exhaustive scan with the documented tie and weighting rules."""
    dists = []
    for i, x in enumerate(points):
        dists.append((sum(abs(a - b) ** p for a, b in zip(x, q)) ** (1.0 / p), i))
    dists.sort()
    nearest = dists[:k]
    tally = {}
    zero = [(d, i) for d, i in nearest if d == 0] if voting == "distance_weighted" else []
    for d, i in (zero or nearest):
        w = 1.0 if voting == "uniform" or zero else 1.0 / d
        tally[labels[i]] = tally.get(labels[i], 0.0) + w
    top = max(tally.values())
    return min(lab for lab, w in tally.items() if math.isclose(w, top, rel_tol=1e-12)), [i for _, i in nearest]


@pytest.mark.parametrize("p,expected", [(1, 2.0), (2, 1.41421356), (3, 1.25992105)])
def test_distance_examples(p, expected):
    assert minkowski_distance([0, 0], [1, 1], p) == pytest.approx(expected, abs=1e-8)


def test_distance_errors():
    with pytest.raises(ParameterError):
        minkowski_distance([0, 0], [1, 1, 1], 1)
    with pytest.raises(ParameterError):
        minkowski_distance([0], [1], 0.5)


def test_nearest_examples():
    idx = TrainingIndex(np.array([[0.0], [10.0]]), ("a", "b"))
    assert find_k_nearest(idx, [1.0], 1, 2) == [(0, 1.0)]
    tie = TrainingIndex(np.array([[2.0], [0.0]]), ("a", "b"))
    assert find_k_nearest(tie, [1.0], 1, 1) == [(0, 1.0)]
    with pytest.raises(ParameterError):
        find_k_nearest(idx, [1.0], 3, 1)


def test_200_point_scan():
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((200, 6))
    idx = TrainingIndex(pts, tuple("x" * 200))
    for _ in range(20):
        q = rng.standard_normal(6)
        for p in (1, 2, 3):
            got = [i for i, _ in find_k_nearest(idx, q, 15, p)]
            _, want = reference_classify(pts.tolist(), "x" * 200, q.tolist(), 15, p, "uniform")
            assert got == want


def test_voting_example():
    labels = ["A", "B", "B"]
    neighbors = [(0, 1.0), (1, 2.0), (2, 3.0)]
    assert vote(neighbors, labels, "uniform")[0] == "B"
    label, weights = vote(neighbors, labels, "distance_weighted")
    assert label == "A"
    assert weights["A"] == 1.0
    assert weights["B"] == pytest.approx(0.8333333, abs=1e-6)


def test_zero_distance_neighbors_vote_alone():
    labels = ["far", "far", "here"]
    assert vote([(2, 0.0), (0, 0.01), (1, 0.01)], labels, "distance_weighted")[0] == "here"


def test_class_tie_is_lexicographic():
    assert vote([(0, 1.0), (1, 1.0)], ["zeta", "alpha"], "uniform")[0] == "alpha"


GRID = [(k, v, p) for k in (1, 3, 5, 20) for v in ("uniform", "distance_weighted") for p in (1, 2, 3)]


def test_oracle_equivalence_100_instances():
    rng = np.random.default_rng(42)
    for inst in range(100):
        n = int(rng.integers(20, 60))
        if inst % 2:
            pts = rng.integers(0, 4, size=(n, 3)).astype(float)  # many exact ties
            grid = [g for g in GRID if g[2] in (1, 2)]
        else:
            pts = rng.standard_normal((n, 4))
            grid = GRID
        labels = tuple(rng.choice(list("ABCD"), size=n))
        index = TrainingIndex(pts, labels)
        if inst % 5 == 0:
            q = pts[0].copy()
        elif inst % 2:
            q = rng.integers(0, 4, size=3).astype(float)
        else:
            q = rng.standard_normal(4)
        for k, voting, p in grid:
            pred = classify(index, q, Hyperparameters(k=k, voting=voting, p=p))
            want, nearest = reference_classify(pts.tolist(), labels, q.tolist(), k, p, voting)
            assert pred.label == want, (inst, k, voting, p)
            assert [i for i, _ in pred.neighbors] == nearest


def test_batch_matches_single():
    rng = np.random.default_rng(1)
    index = TrainingIndex(rng.standard_normal((50, 5)), tuple(rng.choice(list("xyz"), 50)))
    Q = rng.standard_normal((30, 5))
    h = Hyperparameters(k=5, voting="uniform", p=3)
    assert classify_many(index, Q, h) == [classify(index, q, h) for q in Q]


def test_sklearn_agrees_without_ties():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((120, 4))
    y = rng.choice(["a", "b", "c"], 120)
    Q = rng.standard_normal((60, 4))
    for p in (1, 2, 3):
        ours = MinkowskiKNNClassifier(n_neighbors=7, weights="distance_weighted", p=p).fit(X, y)
        ref = KNeighborsClassifier(7, weights="distance", p=p, algorithm="brute").fit(X, y)
        assert list(ours.predict(Q)) == list(ref.predict(Q))


@settings(max_examples=50)
@given(st.floats(0.01, 100), st.integers(0, 2 ** 16))
def test_scale_invariance(c, seed):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((25, 3))
    labels = tuple(rng.choice(list("ab"), 25))
    Q = rng.standard_normal((10, 3))
    for voting in ("uniform", "distance_weighted"):
        h = Hyperparameters(k=5, voting=voting, p=2)
        a = [x.label for x in classify_many(TrainingIndex(pts, labels), Q, h)]
        b = [x.label for x in classify_many(TrainingIndex(pts * c, labels), Q * c, h)]
        assert a == b


@settings(max_examples=50)
@given(st.integers(1, 30), st.integers(0, 2 ** 16))
def test_training_point_returns_own_label(k, seed):
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((30, 3))
    labels = tuple(rng.choice(list("abc"), 30))
    i = int(rng.integers(30))
    pred = classify(TrainingIndex(pts, labels), pts[i], Hyperparameters(k=k, voting="distance_weighted"))
    assert pred.label == labels[i]


def test_permutation_changes_nothing_without_ties():
    rng = np.random.default_rng(5)
    pts = rng.standard_normal((40, 3))
    labels = np.array(rng.choice(list("abc"), 40))
    perm = rng.permutation(40)
    Q = rng.standard_normal((20, 3))
    h = Hyperparameters(k=4, voting="uniform", p=1)
    a = [x.label for x in classify_many(TrainingIndex(pts, tuple(labels)), Q, h)]
    b = [x.label for x in classify_many(TrainingIndex(pts[perm], tuple(labels[perm])), Q, h)]
    assert a == b


def test_hyperparameter_validation():
    assert Hyperparameters() == Hyperparameters(k=1, voting="distance_weighted", p=1, m=100)
    for bad in ({"k": 0}, {"voting": "majority"}, {"p": 0.5}, {"m": 0}):
        with pytest.raises(ParameterError):
            Hyperparameters(**bad)


def test_index_is_read_only():
    idx = TrainingIndex(np.zeros((2, 2)), ("a", "b"))
    with pytest.raises(ValueError):
        idx.points[0, 0] = 1.0


def test_estimator_api():
    clf = MinkowskiKNNClassifier(n_neighbors=2, weights="uniform", p=2)
    X = np.array([[0.0], [1.0], [5.0]])
    clf.fit(X, ["a", "a", "b"])
    assert list(clf.classes_) == ["a", "b"]
    dist, ind = clf.kneighbors([[4.0]])
    assert ind.tolist() == [[2, 1]]
    np.testing.assert_allclose(dist, [[1.0, 3.0]])
    assert list(clf.predict([[5.0]])) == ["a"]  # 1-1 class tie goes to the smaller label
    assert clf.get_params() == {"n_neighbors": 2, "weights": "uniform", "p": 2}
