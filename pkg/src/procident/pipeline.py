"""End-to-end training, classification, model files and projection export.

The pipeline is: event log -> per-process traces -> strings -> minimum-length
filter -> transition-probability features -> truncated SVD -> k-NN index.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from procident.alphabet import (
    AlphabetConfig,
    EventString,
    default_config,
    filter_short_strings,
    transform_trace,
)
from procident.anomaly import AnomalyVerdict, detect_mismatch
from procident.dimred import ProjectionBasis, fit_projection, project
from procident.evaluation import ScoreReport, evaluate_predictions, stratified_split
from procident.exceptions import (
    ConfigMismatchError,
    DegenerateInputError,
    ModelCorruptionError,
    ModelVersionError,
    ParameterError,
    TrainingError,
)
from procident.knn import Hyperparameters, Prediction, TrainingIndex, classify_many
from procident.markov import assemble_feature_matrix
from procident.trace_model import read_traces

MODEL_FORMAT = "procident-model"
MODEL_VERSION = 1
DEFAULT_MIN_LEN = 6


# string corpora on disk ------------------------------------------------------

def write_strings(strings: Sequence[EventString], fh):
    for s in strings:
        fh.write(json.dumps({"trace_id": s.trace_id, "program_name": s.program_name,
                             "chars": s.chars}, ensure_ascii=False) + "\n")


def read_strings(path) -> list[EventString]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(EventString(d["trace_id"], d["program_name"].lower(), d["chars"]))
    return out


def _is_string_file(path) -> bool:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                try:
                    return "chars" in json.loads(line)
                except json.JSONDecodeError:
                    return False
    return False


def load_strings(paths: Sequence, config: AlphabetConfig) -> list[EventString]:
    """Strings from any mix of event logs and string files, in input order."""
    out: list[EventString] = []
    logs = []
    for p in paths:
        if _is_string_file(p):
            out.extend(read_strings(p))
        else:
            logs.append(p)
    if logs:
        corpus = read_traces(logs)
        out.extend(transform_trace(t, config) for t in corpus)
    return out


def corpus_digest(strings: Sequence[EventString]) -> str:
    h = hashlib.sha256()
    for s in strings:
        h.update(json.dumps([s.trace_id, s.program_name, s.chars]).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


# model -----------------------------------------------------------------------

@dataclass
class TrainedModel:
    config: AlphabetConfig
    basis: ProjectionBasis
    index: TrainingIndex
    hyper: Hyperparameters
    provenance: dict = field(default_factory=dict)
    format_version: int = MODEL_VERSION

    def __post_init__(self):
        if not (self.basis.m == self.hyper.m == self.index.dim):
            raise ParameterError(
                f"basis has {self.basis.m} components, hyperparameters say {self.hyper.m}, "
                f"index points have {self.index.dim}"
            )

    @property
    def labels(self) -> list:
        return self.index.label_set

    def __eq__(self, other):
        if not isinstance(other, TrainedModel):
            return NotImplemented
        return (
            self.format_version == other.format_version
            and self.config.to_dict() == other.config.to_dict()
            and self.basis == other.basis
            and self.index == other.index
            and self.hyper == other.hyper
            and self.provenance == other.provenance
        )

    def project_strings(self, strings: Sequence[EventString]) -> np.ndarray:
        X = assemble_feature_matrix(strings, self.config).X
        return project(X, self.basis)


def _fit(strings: Sequence[EventString], config: AlphabetConfig, hyper: Hyperparameters,
         seed: int, svd_options: Optional[dict] = None):
    fm = assemble_feature_matrix(strings, config)
    basis = fit_projection(fm.X, hyper.m, seed=seed, **(svd_options or {}))
    index = TrainingIndex(project(fm.X, basis), tuple(fm.labels))
    return basis, index


def train_from_strings(strings: Sequence[EventString], config: Optional[AlphabetConfig] = None,
                       hyper: Optional[Hyperparameters] = None, seed: int = 0,
                       min_len: int = DEFAULT_MIN_LEN, created: Optional[str] = None,
                       svd_options: Optional[dict] = None) -> TrainedModel:
    config = config or default_config()
    hyper = hyper or Hyperparameters()
    kept = filter_short_strings(strings, min_len)
    classes = {s.program_name for s in kept}
    if len(classes) < 2:
        raise TrainingError(f"need at least 2 programs after filtering, got {len(classes)}")
    if hyper.k > len(kept):
        raise TrainingError(f"k={hyper.k} exceeds the {len(kept)} training strings")
    basis, index = _fit(kept, config, hyper, seed, svd_options)
    provenance = {"seed": seed, "corpus_digest": corpus_digest(kept), "created": created,
                  "n_strings": len(kept), "min_len": min_len}
    return TrainedModel(config, basis, index, hyper, provenance)


def train_model(paths: Sequence, config: Optional[AlphabetConfig] = None,
                hyper: Optional[Hyperparameters] = None, seed: int = 0,
                min_len: int = DEFAULT_MIN_LEN, created: Optional[str] = None) -> TrainedModel:
    config = config or default_config()
    return train_from_strings(load_strings(paths, config), config, hyper, seed, min_len, created)


@dataclass(frozen=True)
class Classified:
    string: EventString
    prediction: Prediction
    verdict: AnomalyVerdict


@dataclass
class ClassificationRun:
    results: list
    skipped: list  # (trace_id, reason)

    @property
    def verdicts(self) -> list[AnomalyVerdict]:
        return [r.verdict for r in self.results]


def classify_strings(model: TrainedModel, strings: Sequence[EventString],
                     min_len: int = DEFAULT_MIN_LEN) -> ClassificationRun:
    kept, skipped = [], []
    for s in strings:
        if len(s.chars) < min_len:
            skipped.append((s.trace_id, f"below min length {min_len}"))
        else:
            kept.append(s)
    if not kept:
        return ClassificationRun([], skipped)
    coords = model.project_strings(kept)
    preds = classify_many(model.index, coords, model.hyper)
    results = []
    for s, row, pred in zip(kept, coords, preds):
        # a string whose transitions never occurred in training projects to the origin
        low = not np.any(row)
        verdict = detect_mismatch(s.program_name, pred, s.trace_id, low_confidence=low)
        results.append(Classified(s, pred, verdict))
    return ClassificationRun(results, skipped)


def classify_traces(model: TrainedModel, paths: Sequence, config: Optional[AlphabetConfig] = None,
                    min_len: int = DEFAULT_MIN_LEN) -> ClassificationRun:
    if config is not None and config.digest() != model.config.digest():
        raise ConfigMismatchError("alphabet config differs from the one the model was trained with")
    return classify_strings(model, load_strings(paths, model.config), min_len)


def holdout_evaluation(strings: Sequence[EventString], config: Optional[AlphabetConfig] = None,
                       hyper: Optional[Hyperparameters] = None, seed: int = 0,
                       min_len: int = DEFAULT_MIN_LEN, ratio=(3, 1)) -> ScoreReport:
    """Stratified ``ratio`` split, train on one side, score on the other."""
    config = config or default_config()
    kept = filter_short_strings(strings, min_len)
    tr, te = stratified_split([s.program_name for s in kept], ratio, seed)
    model = train_from_strings([kept[i] for i in tr], config, hyper, seed, min_len)
    run = classify_strings(model, [kept[i] for i in te], min_len)
    return evaluate_predictions([r.prediction.label for r in run.results],
                                [r.string.program_name for r in run.results])


# persistence -----------------------------------------------------------------

def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def _basis_to_dict(b: ProjectionBasis) -> dict:
    D = b.directions.tocsr()
    D.sort_indices()
    rows = []
    for r in range(D.shape[0]):
        lo, hi = D.indptr[r], D.indptr[r + 1]
        rows.append([[int(i), float(v)] for i, v in zip(D.indices[lo:hi], D.data[lo:hi])])
    return {"m": b.m, "n_features": b.n_features, "seed": b.seed, "n_iter": b.n_iter,
            "singular_values": [float(v) for v in b.singular_values], "directions": rows}


def _basis_from_dict(d: dict) -> ProjectionBasis:
    rows, cols, vals = [], [], []
    for r, pairs in enumerate(d["directions"]):
        for i, v in pairs:
            rows.append(r)
            cols.append(i)
            vals.append(v)
    D = sp.csr_matrix((np.array(vals, dtype=float), (np.array(rows, dtype=np.int64),
                       np.array(cols, dtype=np.int64))), shape=(d["m"], d["n_features"]))
    D.sort_indices()
    return ProjectionBasis(D, np.array(d["singular_values"], dtype=float), d["seed"], d["n_iter"])


def model_to_dict(model: TrainedModel) -> dict:
    payload = {
        "alphabet": model.config.to_dict(),
        "hyperparameters": model.hyper.as_dict(),
        "basis": _basis_to_dict(model.basis),
        "index": {
            "labels": list(model.index.labels),
            "points": [[float(v) for v in row] for row in model.index.points],
        },
        "provenance": model.provenance,
    }
    return {
        "format": MODEL_FORMAT,
        "format_version": model.format_version,
        "digest": hashlib.sha256(_canonical(payload).encode()).hexdigest(),
        "payload": payload,
    }


def model_from_dict(doc: dict) -> TrainedModel:
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise ModelCorruptionError("not a procident model file")
    if doc.get("format_version") != MODEL_VERSION:
        raise ModelVersionError(f"unsupported model format_version {doc.get('format_version')!r}")
    payload = doc.get("payload")
    if hashlib.sha256(_canonical(payload).encode()).hexdigest() != doc.get("digest"):
        raise ModelCorruptionError("model digest mismatch")
    try:
        h = payload["hyperparameters"]
        return TrainedModel(
            config=AlphabetConfig.from_dict(payload["alphabet"]),
            basis=_basis_from_dict(payload["basis"]),
            index=TrainingIndex(np.array(payload["index"]["points"], dtype=float).reshape(
                len(payload["index"]["labels"]), -1), tuple(payload["index"]["labels"])),
            hyper=Hyperparameters(k=h["k"], voting=h["voting"], p=h["p"], m=h["m"]),
            provenance=payload["provenance"],
            format_version=doc["format_version"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelCorruptionError(f"malformed model payload: {exc}") from None


def persist_model(model: TrainedModel, path) -> None:
    Path(path).write_text(_canonical(model_to_dict(model)) + "\n", encoding="utf-8")


def restore_model(path) -> TrainedModel:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelCorruptionError(f"model file is not valid JSON: {exc.msg}") from None
    return model_from_dict(doc)


# projections -----------------------------------------------------------------

PROJECTION_PAIRS = ((1, 2), (2, 3), (1, 3))


@dataclass
class ProjectionData:
    coords: np.ndarray  # (n, 3)
    labels: list

    def pair(self, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
        return self.coords[:, a - 1], self.coords[:, b - 1]


def projection_from_strings(strings: Sequence[EventString], config: Optional[AlphabetConfig] = None,
                            seed: int = 0) -> ProjectionData:
    config = config or default_config()
    fm = assemble_feature_matrix(strings, config)
    n, D = fm.X.shape
    if min(n, D) < 3:
        raise DegenerateInputError("need at least 3 attainable components")
    basis = fit_projection(fm.X, 3, seed=seed)
    sv = basis.singular_values
    if sv[2] <= sv[0] * 1e-12:
        raise DegenerateInputError("feature matrix has rank below 3")
    return ProjectionData(project(fm.X, basis), list(fm.labels))


def projection_from_model(model: TrainedModel) -> ProjectionData:
    if model.basis.m < 3 or model.basis.singular_values[2] <= model.basis.singular_values[0] * 1e-12:
        raise DegenerateInputError("model basis has fewer than 3 usable components")
    return ProjectionData(np.asarray(model.index.points[:, :3]), list(model.index.labels))


def write_projection(data: ProjectionData, out_dir, svg: bool = False) -> list[Path]:
    """One ``x,y,label`` CSV per component pair; shared axes are written identically."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text = [[repr(float(v)) for v in col] for col in data.coords.T]
    written = []
    for a, b in PROJECTION_PAIRS:
        path = out_dir / f"projection_{a}_{b}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "label"])
            for x, y, lab in zip(text[a - 1], text[b - 1], data.labels):
                w.writerow([x, y, lab])
        written.append(path)
        if svg:
            written.append(_scatter_svg(data, a, b, out_dir / f"projection_{a}_{b}.svg"))
    return written


def _scatter_svg(data: ProjectionData, a: int, b: int, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = sorted(set(data.labels))
    cmap = plt.get_cmap("tab20", max(len(names), 1))
    colors = {n: cmap(i) for i, n in enumerate(names)}
    x, y = data.pair(a, b)
    fig, ax = plt.subplots(figsize=(6, 6))
    for name in names:
        mask = np.array([lab == name for lab in data.labels])
        ax.scatter(x[mask], y[mask], s=6, color=colors[name], label=name)
    ax.set_xlabel(f"component {a}")
    ax.set_ylabel(f"component {b}")
    if len(names) <= 20:
        ax.legend(fontsize=6, markerscale=2)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


# estimator -------------------------------------------------------------------

class ProcessClassifier(ClassifierMixin, BaseEstimator):
    """Predict the program name behind event strings.

    ``X`` is a sequence of :class:`EventString` (labels taken from their
    ``program_name`` when ``y`` is omitted) or of plain strings with ``y``.

    Parameters
    ----------
    alphabet : AlphabetConfig, optional
        Defaults to the shipped configuration.
    n_components : int, default=100
    n_neighbors : int, default=1
    weights : {"uniform", "distance_weighted"}, default="distance_weighted"
    p : float, default=1
    random_state : int, default=0
    svd_tol : float or None, default=None
        Passed to :func:`procident.dimred.fit_projection` as ``tol``.
    """

    def __init__(self, alphabet=None, n_components=100, n_neighbors=1,
                 weights="distance_weighted", p=1, random_state=0, svd_tol=None):
        self.alphabet = alphabet
        self.n_components = n_components
        self.n_neighbors = n_neighbors
        self.weights = weights
        self.p = p
        self.random_state = random_state
        self.svd_tol = svd_tol

    @staticmethod
    def _as_strings(X, y=None) -> list[EventString]:
        if y is None:
            return [s if isinstance(s, EventString) else EventString(str(i), "", s)
                    for i, s in enumerate(X)]
        if len(X) != len(y):
            raise ParameterError("X and y differ in length")
        return [EventString(getattr(s, "trace_id", str(i)), str(lab), getattr(s, "chars", s))
                for i, (s, lab) in enumerate(zip(X, y))]

    def fit(self, X, y=None):
        strings = self._as_strings(X, y)
        hyper = Hyperparameters(k=self.n_neighbors, voting=self.weights, p=self.p, m=self.n_components)
        config = self.alphabet if self.alphabet is not None else default_config()
        self.model_ = train_from_strings(strings, config, hyper, seed=self.random_state, min_len=1,
                                         svd_options={"tol": self.svd_tol})
        self.classes_ = np.array(self.model_.labels, dtype=object)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.project_strings(self._as_strings(X))

    def predict_detailed(self, X) -> list[Prediction]:
        check_is_fitted(self, "model_")
        return classify_many(self.model_.index, self.transform(X), self.model_.hyper)

    def predict(self, X):
        return np.array([p.label for p in self.predict_detailed(X)], dtype=object)
