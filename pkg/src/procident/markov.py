"""One-step transition probabilities as sparse feature vectors.

A string ``s`` over an alphabet of size N yields the matrix
``p[i, j] = count(i -> j) / count(i -> *)`` estimated from its bigrams.
Characters that are never followed by anything (the final character, or
characters absent from the string) get no row at all, so every stored row
sums to one. The matrix is flattened row-major into a vector of length N**2.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin

from procident.alphabet import AlphabetConfig, EventString
from procident.exceptions import AlphabetMismatchError

AlphabetLike = Union[AlphabetConfig, str]


def alphabet_of(config: AlphabetLike) -> str:
    return config.alphabet if isinstance(config, AlphabetConfig) else config


def _index_of(config: AlphabetLike) -> dict[str, int]:
    if isinstance(config, AlphabetConfig):
        return config.index
    return {c: i for i, c in enumerate(config)}


def _chars(s) -> str:
    return s.chars if isinstance(s, EventString) else s


@dataclass(frozen=True)
class TransitionMatrix:
    dim: int
    entries: dict = field(default_factory=dict)
    row_counts: dict = field(default_factory=dict)

    def row_sums(self) -> dict[int, float]:
        sums: dict[int, float] = {}
        for (i, _), p in self.entries.items():
            sums[i] = sums.get(i, 0.0) + p
        return sums

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim))
        for (i, j), p in self.entries.items():
            out[i, j] = p
        return out


@dataclass(frozen=True)
class FeatureVector:
    length: int
    nonzeros: dict = field(default_factory=dict)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.length)
        for k, v in self.nonzeros.items():
            out[k] = v
        return out


@dataclass
class FeatureMatrix:
    X: sp.csr_matrix
    labels: list
    trace_ids: list = field(default_factory=list)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]


def _to_indices(chars: str, index: dict[str, int]) -> np.ndarray:
    try:
        return np.fromiter((index[c] for c in chars), dtype=np.int64, count=len(chars))
    except KeyError as exc:
        raise AlphabetMismatchError(
            f"character {exc.args[0]!r} (U+{ord(exc.args[0]):04X}) is not in the alphabet"
        ) from None


def build_transition_matrix(s, config: AlphabetLike) -> TransitionMatrix:
    chars = _chars(s)
    index = _index_of(config)
    idx = _to_indices(chars, index)
    dim = len(index)
    pairs = Counter(zip(idx[:-1].tolist(), idx[1:].tolist()))
    rows = Counter()
    for (i, _), c in pairs.items():
        rows[i] += c
    entries = {(i, j): c / rows[i] for (i, j), c in sorted(pairs.items())}
    return TransitionMatrix(dim, entries, dict(sorted(rows.items())))


def flatten(m: TransitionMatrix) -> FeatureVector:
    return FeatureVector(m.dim * m.dim, {i * m.dim + j: p for (i, j), p in m.entries.items()})


def _row_features(chars: str, index: dict[str, int]):
    """Sorted flat indices and probabilities for one string (vectorized path)."""
    idx = _to_indices(chars, index)
    if idx.size < 2:
        return np.empty(0, np.int64), np.empty(0)
    n = len(index)
    src = idx[:-1]
    flat, counts = np.unique(src * n + idx[1:], return_counts=True)
    row_total = np.bincount(src, minlength=n)
    return flat, counts / row_total[flat // n]


def assemble_feature_matrix(strings: Sequence, config: AlphabetLike) -> FeatureMatrix:
    index = _index_of(config)
    n = len(index)
    indptr = [0]
    cols, vals, labels, ids = [], [], [], []
    for s in strings:
        flat, p = _row_features(_chars(s), index)
        cols.append(flat)
        vals.append(p)
        indptr.append(indptr[-1] + flat.size)
        if isinstance(s, EventString):
            labels.append(s.program_name)
            ids.append(s.trace_id)
    X = sp.csr_matrix(
        (np.concatenate(vals) if vals else np.empty(0),
         np.concatenate(cols) if cols else np.empty(0, np.int64),
         np.asarray(indptr, dtype=np.int64)),
        shape=(len(indptr) - 1, n * n),
    )
    return FeatureMatrix(X, labels, ids)


def feature_vector_to_sparse(v: FeatureVector) -> sp.csr_matrix:
    keys = sorted(v.nonzeros)
    return sp.csr_matrix(
        (np.array([v.nonzeros[k] for k in keys], dtype=float), np.array(keys, dtype=np.int64),
         np.array([0, len(keys)])),
        shape=(1, v.length),
    )


def write_pgm(m: TransitionMatrix, path):
    """Plain PGM image of the matrix: white is zero, black is nonzero."""
    dense = m.to_dense()
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P2\n{m.dim} {m.dim}\n1\n")
        for row in dense:
            fh.write(" ".join("0" if v else "1" for v in row) + "\n")


def write_csv_grid(m: TransitionMatrix, path):
    dense = m.to_dense()
    with open(path, "w", encoding="ascii") as fh:
        for row in dense:
            fh.write(",".join(repr(float(v)) if v else "0" for v in row) + "\n")


class MarkovFeaturizer(TransformerMixin, BaseEstimator):
    """Map event strings to rows of a sparse transition-probability matrix.

    Parameters
    ----------
    alphabet : AlphabetConfig or str
        Defines the state index; a plain string lists the states in order.
    """

    def __init__(self, alphabet: AlphabetLike = None):
        self.alphabet = alphabet

    def _alphabet(self):
        if self.alphabet is None:
            from procident.alphabet import default_config
            return default_config()
        return self.alphabet

    def fit(self, X, y=None):
        self.n_states_ = len(alphabet_of(self._alphabet()))
        self.n_features_out_ = self.n_states_ ** 2
        return self

    def transform(self, X) -> sp.csr_matrix:
        return assemble_feature_matrix(X, self._alphabet()).X
