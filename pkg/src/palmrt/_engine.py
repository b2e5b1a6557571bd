"""Vectorized projection engine behind the permutation tests.

For a fixed dataset and a block of permutations, every statistic the
package computes reduces to a handful of inner products between three
vectors (response, feature, permuted feature) after projecting out the
span of the covariates, the intercept, and the permuted covariates.
This module computes those inner products for a whole block of
permutations at once.

The per-permutation span is built in two stages: the fixed part
(covariates plus intercept) is orthonormalized once with a pivoted QR,
and the permuted covariate block is residualized against it and
orthonormalized with a batched, rank-revealing SVD.  Feature columns are
normalized up front so rank decisions work on a unit scale; callers
rescale the outputs where raw units matter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import DEFAULT_RANK_TOL, batched_orthonormal, orthonormal_columns, project_out


@dataclass(frozen=True)
class PreparedDesign:
    """Dataset pieces that do not depend on the permutation block."""

    y: np.ndarray          # raw response (n,)
    yss: float             # ||y||^2
    xhat: np.ndarray       # feature scaled to unit norm (all zero if x == 0)
    xnorm: float           # ||x||
    zhat: np.ndarray       # covariates with unit-scaled columns (n, p)
    const: np.ndarray      # unit constant column (n, 1) or (n, 0) when intercept off
    q0: np.ndarray         # orthonormal basis of span(zhat, const)
    x0: np.ndarray         # xhat residualized against q0
    y0: np.ndarray         # y residualized against q0


@dataclass(frozen=True)
class PairScalars:
    """Per-permutation inner products over the pooled span.

    With r_y the residual of y on span(Z, intercept, Z_pi) and xt, xtp
    the residuals of the unit-scaled feature and its permuted copy on
    the same span:

    - ``ryss`` = ||r_y||^2
    - ``nx``   = ||xt||^2,  ``nxp`` = ||xtp||^2
    - ``dx``   = xt . r_y,  ``dxp`` = xtp . r_y
    - ``xxp``  = xt . xtp
    """

    ryss: np.ndarray
    nx: np.ndarray
    nxp: np.ndarray
    dx: np.ndarray
    dxp: np.ndarray
    xxp: np.ndarray


def _unit_columns(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=0)
    safe = np.where(norms > 0.0, norms, 1.0)
    return a / safe


def prepare_design(y, x, z, intercept: bool, rank_tol: float = DEFAULT_RANK_TOL) -> PreparedDesign:
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    n = y.shape[0]
    xnorm = float(np.linalg.norm(x))
    xhat = x / xnorm if xnorm > 0.0 else np.zeros(n)
    zhat = _unit_columns(z)
    const = np.full((n, 1), n ** -0.5) if intercept else np.empty((n, 0))
    q0 = orthonormal_columns(np.hstack([zhat, const]), rank_tol) if (z.shape[1] or intercept) \
        else np.empty((n, 0))
    return PreparedDesign(
        y=y,
        yss=float(y @ y),
        xhat=xhat,
        xnorm=xnorm,
        zhat=zhat,
        const=const,
        q0=q0,
        x0=project_out(q0, xhat),
        y0=project_out(q0, y),
    )


def pair_scalars(prep: PreparedDesign, perm_block: np.ndarray,
                 rank_tol: float = DEFAULT_RANK_TOL) -> PairScalars:
    """Inner products for every permutation map in ``perm_block`` (B, n)."""
    q0, y0, x0 = prep.q0, prep.y0, prep.x0
    zp = prep.zhat[perm_block]                       # (B, n, p)
    g = zp - q0 @ (q0.T @ zp)
    g -= q0 @ (q0.T @ g)
    u = batched_orthonormal(g, rank_tol)             # (B, n, p), junk columns zeroed

    xp = prep.xhat[perm_block]                       # (B, n)
    xp0 = xp - (xp @ q0) @ q0.T
    xp0 -= (xp0 @ q0) @ q0.T

    def beyond(u_stack, v):
        # residual of v (per-b rows, or a shared vector) on the extension span
        if v.ndim == 1:
            coef = np.einsum("bnk,n->bk", u_stack, v)
            return v[None, :] - np.einsum("bnk,bk->bn", u_stack, coef)
        coef = np.einsum("bnk,bn->bk", u_stack, v)
        return v - np.einsum("bnk,bk->bn", u_stack, coef)

    ry = beyond(u, y0)
    xt = beyond(u, x0)
    xtp = beyond(u, xp0)

    return PairScalars(
        ryss=np.einsum("bn,bn->b", ry, ry),
        nx=np.einsum("bn,bn->b", xt, xt),
        nxp=np.einsum("bn,bn->b", xtp, xtp),
        dx=np.einsum("bn,bn->b", xt, ry),
        dxp=np.einsum("bn,bn->b", xtp, ry),
        xxp=np.einsum("bn,bn->b", xt, xtp),
    )


def scalars_in_chunks(prep: PreparedDesign, perm_block: np.ndarray, rank_tol: float,
                      chunk: int = 512) -> PairScalars:
    """Same as :func:`pair_scalars` but bounding peak memory.

    Results are bit-identical to the unchunked call because every
    quantity is computed per permutation.
    """
    nblock = perm_block.shape[0]
    if nblock <= chunk:
        return pair_scalars(prep, perm_block, rank_tol)
    parts = [pair_scalars(prep, perm_block[i:i + chunk], rank_tol)
             for i in range(0, nblock, chunk)]
    return PairScalars(*(np.concatenate([getattr(p, f) for p in parts])
                         for f in ("ryss", "nx", "nxp", "dx", "dxp", "xxp")))
