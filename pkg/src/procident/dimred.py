"""Uncentered truncated SVD of a sparse feature matrix (latent semantic analysis).

The input is never mean-centered, so it stays sparse throughout. The dominant
right-singular subspace is found with a randomized range finder followed by
subspace (power) iteration, then an exact SVD of the small projected matrix.

Only columns that hold a nonzero in some row can carry singular-vector mass,
so the iteration runs on those columns and the directions are stored sparse.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from procident.exceptions import DegenerateInputError, ParameterError

log = logging.getLogger(__name__)

DEFAULT_OVERSAMPLES = 10
DEFAULT_POWER_ITER = 4
DEFAULT_TOL = None
CONVERGED_TOL = 1e-10
MAX_POWER_ITER = 300


@dataclass(frozen=True)
class ProjectionBasis:
    """``m`` orthonormal directions (rows of a sparse ``m x n_features`` matrix)."""

    directions: sp.csr_matrix
    singular_values: np.ndarray
    seed: int
    n_iter: int = 0

    @property
    def m(self) -> int:
        return self.directions.shape[0]

    @property
    def n_features(self) -> int:
        return self.directions.shape[1]

    def dense_directions(self) -> np.ndarray:
        return self.directions.toarray()

    def __eq__(self, other):
        if not isinstance(other, ProjectionBasis):
            return NotImplemented
        a, b = self.directions, other.directions
        return (
            a.shape == b.shape
            and self.seed == other.seed
            and self.n_iter == other.n_iter
            and np.array_equal(self.singular_values, other.singular_values)
            and (a != b).nnz == 0
        )

    __hash__ = None


def _orth(M):
    return la.qr(M, mode="economic", check_finite=False)[0]


def _canonical_signs(V: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _subspace_sine(V_old: np.ndarray, V_new: np.ndarray) -> float:
    resid = V_new - V_old @ (V_old.T @ V_new)
    return float(np.linalg.norm(resid, 2)) if resid.size else 0.0


def fit_projection(
    features,
    m: int,
    seed: int = 0,
    n_oversamples: int = DEFAULT_OVERSAMPLES,
    n_power_iter: int = DEFAULT_POWER_ITER,
    tol: Optional[float] = DEFAULT_TOL,
    max_power_iter: int = MAX_POWER_ITER,
) -> ProjectionBasis:
    """Dominant ``m``-dimensional right-singular subspace of ``features``.

    By default exactly ``n_power_iter`` power iterations are run, which is
    plenty for nearest-neighbor work but not for a flat spectrum. With ``tol``
    set (``CONVERGED_TOL`` is a good value) the iteration continues until the
    leading subspace moves by less than ``tol`` (sine of the largest principal
    angle) between sweeps, or ``max_power_iter`` is reached.
    """
    X = getattr(features, "X", features)
    X = sp.csr_matrix(X, dtype=float)
    X.eliminate_zeros()
    n, D = X.shape
    if n == 0:
        raise ParameterError("feature matrix has no rows")
    if not (1 <= m <= min(n, D)):
        raise ParameterError(f"m must lie in [1, {min(n, D)}], got {m}")
    if X.nnz == 0:
        raise DegenerateInputError("feature matrix is all zero")

    active = np.flatnonzero(X.getnnz(axis=0))
    A = X[:, active].tocsr()
    At = A.T.tocsr()
    d = active.size
    ell = min(m + n_oversamples, n, d)
    mm = min(m, ell)

    rng = np.random.default_rng(seed)
    Q = _orth(A @ rng.standard_normal((d, ell)))
    V_prev = None
    it = 0
    while True:
        Z = At @ Q
        U_z, s, _ = la.svd(Z, full_matrices=False, check_finite=False)
        V = U_z[:, :mm]
        if it >= n_power_iter:
            if tol is None:
                break
            if V_prev is not None:
                k = int(np.count_nonzero(s[:mm] > s[0] * 1e-10))
                if _subspace_sine(V_prev[:, :k], V[:, :k]) < tol:
                    break
                if it >= max_power_iter:
                    log.warning("subspace iteration stopped at %d sweeps without reaching tol=%g",
                                it, tol)
                    break
            V_prev = V
        Q = _orth(A @ _orth(Z))
        it += 1

    V = _canonical_signs(V)
    sv = s[:mm].copy()

    rows, cols, vals = [], [], []
    for r in range(mm):
        nz = np.flatnonzero(V[:, r])
        rows.append(np.full(nz.size, r))
        cols.append(active[nz])
        vals.append(V[nz, r])
    if mm < m:
        # Rank-deficient column support: complete with unit vectors on unused columns.
        spare = np.setdiff1d(np.arange(D), active)[: m - mm]
        rows.append(np.arange(mm, m))
        cols.append(spare)
        vals.append(np.ones(spare.size))
        sv = np.concatenate([sv, np.zeros(m - mm)])
    directions = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, D)
    )
    directions.sort_indices()
    return ProjectionBasis(directions, sv, seed, it)


def project(v, basis: ProjectionBasis) -> np.ndarray:
    """Coordinates of one vector (or each row of a matrix) along the basis directions."""
    single = False
    if hasattr(v, "nonzeros"):
        from procident.markov import feature_vector_to_sparse
        v = feature_vector_to_sparse(v)
        single = True
    if sp.issparse(v):
        M = sp.csr_matrix(v)
    else:
        M = np.asarray(v, dtype=float)
        single = M.ndim == 1
        M = np.atleast_2d(M)
    if M.shape[1] != basis.n_features:
        raise ParameterError(f"vector length {M.shape[1]} != basis length {basis.n_features}")
    out = basis.directions @ M.T
    out = out.toarray() if sp.issparse(out) else np.asarray(out)
    out = out.T
    return out[0] if single else out


class LatentSemanticProjector(TransformerMixin, BaseEstimator):
    """Truncated SVD on sparse input without centering.

    Parameters
    ----------
    n_components : int, default=100
    random_state : int, default=0
    n_oversamples : int, default=10
    n_power_iter : int, default=4
        Minimum number of power iterations.
    tol : float or None, default=None
        Subspace-change threshold for iterating to convergence; ``None`` runs
        exactly ``n_power_iter`` sweeps.
    """

    def __init__(self, n_components=100, random_state=0, n_oversamples=DEFAULT_OVERSAMPLES,
                 n_power_iter=DEFAULT_POWER_ITER, tol=DEFAULT_TOL):
        self.n_components = n_components
        self.random_state = random_state
        self.n_oversamples = n_oversamples
        self.n_power_iter = n_power_iter
        self.tol = tol

    def fit(self, X, y=None):
        self.basis_ = fit_projection(
            X, self.n_components, seed=self.random_state, n_oversamples=self.n_oversamples,
            n_power_iter=self.n_power_iter, tol=self.tol,
        )
        self.components_ = self.basis_.directions
        self.singular_values_ = self.basis_.singular_values
        self.n_features_in_ = self.basis_.n_features
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        if sp.issparse(X):
            return project(sp.csr_matrix(X), self.basis_)
        return project(np.atleast_2d(X), self.basis_)
