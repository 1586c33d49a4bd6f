"""Stratified splitting, cross-validation, metrics and hyperparameter search."""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from procident.dimred import fit_projection, project
from procident.exceptions import ParameterError, ProcidentError
from procident.knn import Hyperparameters, _pairwise, vote

log = logging.getLogger(__name__)

AVERAGINGS = ("macro", "weighted_macro", "micro")
METRICS = ("accuracy", "precision", "recall", "f1")

DEFAULT_GRID = {
    "k": (1, 5, 20, 100),
    "voting": ("uniform", "distance_weighted"),
    "p": (1, 2, 3),
    "m": (5, 10, 15, 25, 50, 100),
}


# splitting -----------------------------------------------------------------

def _classes(labels):
    members: dict = {}
    for i, lab in enumerate(labels):
        members.setdefault(lab, []).append(i)
    return members


def verify_count(count: int, ratio=(3, 1)) -> int:
    """Members of a class of size ``count`` that go to the verification side."""
    if count < 2:
        return 0
    share = ratio[1] / (ratio[0] + ratio[1])
    return max(1, math.floor(count * share + 0.5))


def stratified_split(labels: Sequence, ratio=(3, 1), seed: int = 0):
    """Per-class ``train:verify`` split; returns two sorted index arrays."""
    if len(labels) == 0:
        raise ParameterError("cannot split an empty corpus")
    rng = np.random.default_rng(seed)
    train, verify = [], []
    for lab, idx in sorted(_classes(labels).items()):
        idx = np.asarray(idx)
        if idx.size < 2:
            log.warning("class %r has a single member; it goes to the training side", lab)
        perm = rng.permutation(idx)
        nv = verify_count(idx.size, ratio)
        verify.extend(perm[:nv].tolist())
        train.extend(perm[nv:].tolist())
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(verify), dtype=np.int64)


def stratified_folds(labels: Sequence, folds: int = 3, seed: int = 0) -> np.ndarray:
    """Fold id per item: seeded shuffle within each class, then round-robin.

    The round-robin start position carries over from one class to the next so
    that remainders do not all pile into fold 0.
    """
    if folds < 2:
        raise ParameterError(f"need at least 2 folds, got {folds}")
    rng = np.random.default_rng(seed)
    assignment = np.full(len(labels), -1, dtype=np.int64)
    start = 0
    for lab, idx in sorted(_classes(labels).items()):
        if len(idx) < folds:
            log.warning("class %r has %d members for %d folds", lab, len(idx), folds)
        perm = rng.permutation(np.asarray(idx))
        assignment[perm] = (start + np.arange(perm.size)) % folds
        start = (start + perm.size) % folds
    return assignment


# metrics -------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    per_class: dict  # label -> (TP, FP, FN, TN)
    n: int

    @property
    def totals(self) -> tuple[int, int, int, int]:
        tp = sum(c[0] for c in self.per_class.values())
        fp = sum(c[1] for c in self.per_class.values())
        fn = sum(c[2] for c in self.per_class.values())
        tn = sum(c[3] for c in self.per_class.values())
        return tp, fp, fn, tn

    def support(self, label) -> int:
        tp, _, fn, _ = self.per_class[label]
        return tp + fn


def confusion_counts(predicted: Sequence, true: Sequence) -> ConfusionCounts:
    if len(predicted) != len(true):
        raise ParameterError(f"{len(predicted)} predictions for {len(true)} labels")
    n = len(true)
    labels = sorted(set(true) | set(predicted))
    tp = dict.fromkeys(labels, 0)
    fp = dict.fromkeys(labels, 0)
    fn = dict.fromkeys(labels, 0)
    for p, t in zip(predicted, true):
        if p == t:
            tp[t] += 1
        else:
            fp[p] += 1
            fn[t] += 1
    return ConfusionCounts(
        {c: (tp[c], fp[c], fn[c], n - tp[c] - fp[c] - fn[c]) for c in labels}, n
    )


def _ratio(num, den):
    return (num / den, False) if den else (0.0, True)


def binary_scores(tp: int, fp: int, fn: int, tn: int) -> dict:
    """Accuracy, precision, recall and F1 from one set of counts; 0/0 is scored 0."""
    total = tp + fp + fn + tn
    if total == 0:
        raise ParameterError("no instances")
    precision, p_undef = _ratio(tp, tp + fp)
    recall, r_undef = _ratio(tp, tp + fn)
    # harmonic mean written on counts, so precision == recall implies F1 equals both
    f1, _ = _ratio(2 * tp, 2 * tp + fp + fn)
    return {
        "accuracy": (tp + tn) / total,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "undefined": p_undef or r_undef,
    }


@dataclass(frozen=True)
class ScoreReport:
    macro: dict
    weighted_macro: dict
    micro: dict
    correct_fraction: float
    n: int
    undefined_classes: int = 0

    def value(self, averaging: str, metric: str) -> float:
        return getattr(self, averaging)[metric]

    @property
    def misclassification_rate(self) -> float:
        return 1.0 - self.correct_fraction

    def to_dict(self) -> dict:
        return {
            "macro": dict(self.macro),
            "weighted_macro": dict(self.weighted_macro),
            "micro": dict(self.micro),
            "correct_fraction": self.correct_fraction,
            "n": self.n,
            "undefined_classes": self.undefined_classes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        head = f"{'averaging':<16}" + "".join(f"{m:>11}" for m in METRICS)
        lines = [head, "-" * len(head)]
        for avg, name in zip(AVERAGINGS, ("macro", "weighted macro", "micro")):
            row = getattr(self, avg)
            lines.append(f"{name:<16}" + "".join(f"{row[m]:>11.4f}" for m in METRICS))
        lines.append("")
        lines.append(f"correctly classified: {self.correct_fraction:.4%} of {self.n}")
        if self.undefined_classes:
            lines.append(f"classes with undefined precision or recall (scored 0): {self.undefined_classes}")
        return "\n".join(lines)


def score_report(counts: ConfusionCounts) -> ScoreReport:
    if counts.n == 0:
        raise ParameterError("cannot score zero instances")
    per_class = {c: binary_scores(*v) for c, v in counts.per_class.items()}
    undefined = sum(1 for s in per_class.values() if s["undefined"])

    n_classes = len(per_class)
    macro = {m: sum(s[m] for s in per_class.values()) / n_classes for m in METRICS}
    weighted = {
        m: sum(counts.support(c) * s[m] for c, s in per_class.items()) / counts.n
        for m in METRICS
    }
    micro = binary_scores(*counts.totals)
    micro.pop("undefined")
    tp_total = counts.totals[0]
    return ScoreReport(macro, weighted, micro, tp_total / counts.n, counts.n, undefined)


def evaluate_predictions(predicted: Sequence, true: Sequence) -> ScoreReport:
    return score_report(confusion_counts(predicted, true))


# grid search ---------------------------------------------------------------

def grid_combinations(grid: Mapping = DEFAULT_GRID) -> list[Hyperparameters]:
    """All combinations, enumerated k-major in the order ``k, voting, p, m``."""
    for key in ("k", "voting", "p", "m"):
        if not grid.get(key):
            raise ParameterError(f"grid entry {key!r} is empty")
    return [
        Hyperparameters(k=k, voting=v, p=p, m=m)
        for k, v, p, m in itertools.product(grid["k"], grid["voting"], grid["p"], grid["m"])
    ]


@dataclass
class GridSearchResult:
    combinations: list
    mean_scores: list
    fold_scores: list
    best: Hyperparameters
    best_score: float
    seed: int
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "best": self.best.as_dict(),
            "best_score": self.best_score,
            "results": [
                {**h.as_dict(), "mean_macro_f1": s, "fold_macro_f1": f}
                for h, s, f in zip(self.combinations, self.mean_scores, self.fold_scores)
            ],
            "failures": self.failures,
        }

    def table(self) -> str:
        lines = [f"{'k':>5} {'voting':<18} {'p':>3} {'m':>5} {'macro F1':>10}"]
        for h, s in zip(self.combinations, self.mean_scores):
            mark = "  *" if h == self.best else ""
            lines.append(f"{h.k:>5} {h.voting:<18} {h.p:>3} {h.m:>5} {s:>10.4f}{mark}")
        lines.append("")
        lines.append("selected hyperparameters:")
        lines.append(f"  number of neighbors: {self.best.k}")
        lines.append(f"  majority voting method: {self.best.voting.replace('_', '-')}")
        lines.append(f"  p in the Minkowski distance: {self.best.p}")
        lines.append(f"  number of components: {self.best.m}")
        return "\n".join(lines)


def grid_search(X, y: Sequence, grid: Mapping = DEFAULT_GRID, folds: int = 3, seed: int = 0,
                svd_options: Optional[dict] = None) -> GridSearchResult:
    """Mean macro-F1 over stratified folds for every grid combination.

    ``X`` is the sparse feature matrix of the training corpus. A combination
    that cannot be evaluated on some fold (e.g. ``m`` or ``k`` larger than the
    fold allows) scores 0 on that fold.
    """
    combos = grid_combinations(grid)
    X = sp.csr_matrix(X)
    y = np.asarray(list(y), dtype=object)
    if X.shape[0] != y.size:
        raise ParameterError("one label per feature row required")
    svd_options = svd_options or {}
    fold_ids = stratified_folds(list(y), folds, seed)
    pos = {h: i for i, h in enumerate(combos)}
    per_fold = np.zeros((len(combos), folds))
    failures = []

    def fail(h, f, reason):
        failures.append({**h.as_dict(), "fold": f, "reason": reason})
        log.warning("combination %s failed on fold %d: %s", h.as_dict(), f, reason)

    ks = sorted(set(grid["k"]))
    for f in range(folds):
        tr, te = fold_ids != f, fold_ids == f
        y_tr, y_te = y[tr], list(y[te])
        if not y_te:
            continue
        for m in sorted(set(grid["m"])):
            try:
                basis = fit_projection(X[tr], m, seed=seed, **svd_options)
            except ProcidentError as exc:
                for h in combos:
                    if h.m == m:
                        fail(h, f, str(exc))
                continue
            P_tr, P_te = project(X[tr], basis), project(X[te], basis)
            labels = list(y_tr)
            for p in sorted(set(grid["p"])):
                D = _pairwise(P_te, P_tr, p)
                order = np.argsort(D, axis=1, kind="stable")
                for k in ks:
                    for voting in grid["voting"]:
                        h = Hyperparameters(k=k, voting=voting, p=p, m=m)
                        if h not in pos:
                            continue
                        if k > len(labels):
                            fail(h, f, f"k={k} exceeds {len(labels)} training points")
                            continue
                        preds = []
                        for row, idx in zip(D, order[:, :k]):
                            neighbors = [(int(i), float(row[i])) for i in idx]
                            preds.append(vote(neighbors, labels, voting)[0])
                        per_fold[pos[h], f] = score_report(confusion_counts(preds, y_te)).macro["f1"]

    means = per_fold.mean(axis=1)
    best_i = int(np.argmax(means))  # first maximum in enumeration order
    return GridSearchResult(
        combinations=combos,
        mean_scores=[float(v) for v in means],
        fold_scores=[[float(v) for v in row] for row in per_fold],
        best=combos[best_i],
        best_score=float(means[best_i]),
        seed=seed,
        failures=failures,
    )
