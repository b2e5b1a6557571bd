"""Dense projection and residual kernels.

Everything in the package reduces to one primitive: the squared distance
from a response vector to the column span of a (possibly rank-deficient)
design matrix.  The implementation never forms projection matrices.  A
rank-revealing QR factorization with column pivoting produces an
orthonormal basis for the span, the numerical rank is cut at the first
R diagonal below ``rank_tol`` times the largest diagonal magnitude, and
residuals are computed by subtracting the projection onto that basis.

Columns are scaled to unit norm before factorization so that the result
is invariant under nonzero column rescaling, and exact-zero columns are
dropped outright.  Batched variants (one factorization per permutation)
use a singular value decomposition instead of pivoted QR because LAPACK
exposes no batched pivoted factorization; the SVD is rank-revealing on
its own and the tolerance plays the same role.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidInputError

DEFAULT_RANK_TOL = 1e-10


def _as_matrix(columns) -> np.ndarray:
    a = np.asarray(columns, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise InvalidInputError(f"basis must be a 2-d array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("basis contains non-finite entries")
    return a


@dataclass(frozen=True)
class Basis:
    """Column span of a design matrix plus the rank tolerance to use.

    Parameters
    ----------
    columns : ndarray, shape (n, k)
        Spanning columns.  ``k`` may be zero, columns may repeat, and the
        matrix may be rank deficient; the span is what matters.
    rank_tol : float
        Relative tolerance for the numerical rank cut.
    """

    columns: np.ndarray
    rank_tol: float = DEFAULT_RANK_TOL

    def __post_init__(self):
        object.__setattr__(self, "columns", _as_matrix(self.columns))
        if not (0 < self.rank_tol < 1):
            raise InvalidInputError(f"rank_tol must be in (0, 1), got {self.rank_tol}")

    @property
    def n(self) -> int:
        return self.columns.shape[0]

    @property
    def k(self) -> int:
        return self.columns.shape[1]


def orthonormal_columns(columns, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Orthonormal basis Q (n, r) for the numerical column span.

    Columns are normalized to unit length (zero columns are discarded),
    then factored by pivoted QR.  The rank r is the number of leading
    pivots whose R diagonal exceeds ``rank_tol`` times the largest
    diagonal magnitude.
    """
    a = _as_matrix(columns)
    n = a.shape[0]
    norms = np.linalg.norm(a, axis=0)
    keep = norms > 0.0
    if not np.any(keep):
        return np.empty((n, 0))
    a = a[:, keep] / norms[keep]
    q, r, _ = scipy.linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return np.empty((n, 0))
    rank = int(np.sum(diag > rank_tol * diag[0]))
    return q[:, :rank]


def project_out(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Residual of ``v`` after projecting onto the orthonormal columns of ``q``.

    Works for a single vector (n,) or a stack of columns (n, m).  Applies
    the projection twice; the second pass removes the component that the
    first pass leaves behind when q is orthonormal only to rounding.
    """
    if q.shape[1] == 0:
        return np.array(v, dtype=float, copy=True)
    r = v - q @ (q.T @ v)
    r -= q @ (q.T @ r)
    return r


def residual_vector(basis: Basis, v) -> np.ndarray:
    """Component of ``v`` orthogonal to the span of ``basis``."""
    vv = np.asarray(v, dtype=float)
    if vv.ndim != 1:
        raise InvalidInputError(f"v must be 1-d, got shape {vv.shape}")
    if vv.shape[0] != basis.n:
        raise InvalidInputError(
            f"length mismatch: basis has {basis.n} rows, v has {vv.shape[0]}"
        )
    if not np.all(np.isfinite(vv)):
        raise InvalidInputError("v contains non-finite entries")
    q = orthonormal_columns(basis.columns, basis.rank_tol)
    return project_out(q, vv)


def residual_ss(basis: Basis, v) -> float:
    """Squared Euclidean norm of the residual of ``v`` on the span of ``basis``."""
    r = residual_vector(basis, v)
    return float(r @ r)


def batched_orthonormal(g: np.ndarray, tol: float) -> np.ndarray:
    """Orthonormalize a stack of matrices, zeroing rank-deficient directions.

    Parameters
    ----------
    g : ndarray, shape (B, n, k)
        Stack of matrices whose columns are on a unit scale (callers
        normalize their inputs; residualized columns then have norms in
        [0, 1] and a norm near zero means the column was already inside
        the span it was residualized against).
    tol : float
        Directions with singular value at or below ``tol`` times
        ``max(1, largest singular value)`` are zeroed out.

    Returns
    -------
    ndarray, shape (B, n, k)
        For each matrix, orthonormal columns spanning its numerical
        range, with the surplus columns set to zero so that ``U @ U^T``
        is the projector onto the span.
    """
    if g.shape[2] == 0:
        return g.copy()
    # Zero near-dependent columns first: an unpivoted/SVD factorization of a
    # column that is numerically zero would manufacture an arbitrary
    # direction out of rounding noise.
    col_norms = np.linalg.norm(g, axis=1)
    g = np.where((col_norms > tol)[:, None, :], g, 0.0)
    u, s, _ = np.linalg.svd(g, full_matrices=False)
    cut = tol * np.maximum(1.0, s[:, :1])
    return u * (s > cut)[:, None, :]
