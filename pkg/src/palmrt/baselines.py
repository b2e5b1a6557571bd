"""Classical tests for a single regression coefficient.

All permutation baselines share one recipe: an F statistic for the
feature is computed on the observed data, B permuted copies of the
statistic are computed under the scheme that gives the method its name,
and the p-value is (1 + sum of pair scores) / (B + 1) with the same
tie-aware scoring as the paired test.  They differ only in what gets
permuted:

- ``perm_test``     permutes the feature column itself,
- ``fl_test``       permutes the reduced-model residuals and refits,
- ``kennedy_test``  permutes reduced-model residuals and regresses them
                    on the residualized feature,
- ``braak_test``    permutes full-model residuals around the full-model
                    fit.

``f_test`` is the parametric reference with an F(1, n - p - 2)
distribution when an intercept is present (the intercept is counted
inside the parameter bookkeeping throughout).

Degenerate denominators are mapped deterministically: a numerically
zero numerator gives a statistic of 0 regardless of the denominator,
and a positive numerator over a numerically zero denominator gives
+inf.  Infinite statistics tie with each other and beat finite ones.
"""

from __future__ import annotations

import numpy as np
import scipy.stats

from .core import (
    DEFAULT_TIE_TOL,
    Dataset,
    PairedStat,
    TestReport,
    _RSS_FLOOR_REL,
    _p_from_omegas,
    _perm_matrix,
    omega_values,
)
from .errors import InvalidInputError
from .linalg import DEFAULT_RANK_TOL, orthonormal_columns, project_out

_REL_ZERO = 1e-14


def _spans(data: Dataset, rank_tol: float):
    """Orthonormal bases for span(Z, 1) and span(x, Z, 1), plus the F df."""
    const = np.ones((data.n, 1)) if data.intercept else np.empty((data.n, 0))
    qz = orthonormal_columns(np.hstack([data.Z, const]), rank_tol)
    qxz = orthonormal_columns(np.column_stack([data.x, data.Z, const]), rank_tol)
    df = data.n - data.p - 1 - (1 if data.intercept else 0)
    if df < 1:
        raise InvalidInputError(
            f"need n > p + {'2' if data.intercept else '1'} for an F denominator, "
            f"got n = {data.n}, p = {data.p}"
        )
    return qz, qxz, df


def _residual_rows(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Residualize each row of v (B, n) against the columns of q."""
    if q.shape[1] == 0:
        return np.array(v, dtype=float, copy=True)
    r = v - (v @ q) @ q.T
    r -= (r @ q) @ q.T
    return r


def _f_from_rss(rss_red, rss_full, df: int, scale: float) -> np.ndarray:
    """F ratios with deterministic handling of numerically zero pieces.

    ``scale`` is the squared norm of the response the residuals came
    from; residual sums below the rounding-noise floor relative to it
    count as exact zeros (otherwise a noise-versus-noise ratio could
    fabricate a large statistic).
    """
    rss_red = np.asarray(rss_red, dtype=float)
    rss_full = np.asarray(rss_full, dtype=float)
    floor = _RSS_FLOOR_REL * scale
    num = np.maximum(rss_red - rss_full, 0.0)
    num_zero = (num <= _REL_ZERO * np.maximum(rss_red, rss_full)) | (rss_red <= floor)
    den_zero = (rss_full <= floor) & ~num_zero
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = num * df / rss_full
    return np.where(num_zero, 0.0, np.where(den_zero, np.inf, ratio))


def _stat_rows(qz, qxz, df, rows: np.ndarray, scale: float) -> np.ndarray:
    """F statistic of the feature for each response row in ``rows`` (B, n)."""
    red = _residual_rows(qz, rows)
    full = _residual_rows(qxz, rows)
    return _f_from_rss(np.einsum("bn,bn->b", red, red),
                       np.einsum("bn,bn->b", full, full), df, scale)


def _report(method: str, original: float, permuted: np.ndarray, seed, tie_tol: float,
            keep_ledger: bool, warnings: list[str]) -> TestReport:
    omegas = omega_values(np.full(permuted.shape, original), permuted, tie_tol)
    ledger = None
    if keep_ledger:
        ledger = [PairedStat(float(original), float(t), float(w))
                  for t, w in zip(permuted, omegas)]
    if permuted.size > 0 and np.all(omegas == 0.5):
        warnings = warnings + ["every permutation comparison tied"]
    return TestReport(
        p_value=_p_from_omegas(omegas),
        B=int(permuted.size),
        method=method,
        seed=seed,
        statistic=float(original),
        warnings=warnings,
        ledger=ledger,
    )


def f_test(data: Dataset, *, rank_tol: float = DEFAULT_RANK_TOL) -> TestReport:
    """Parametric partial F test of the feature given the covariates."""
    qz, qxz, df = _spans(data, rank_tol)
    yss = float(data.y @ data.y)
    stat = float(_stat_rows(qz, qxz, df, data.y[None, :], yss)[0])
    p = float(scipy.stats.f.sf(stat, 1, df)) if np.isfinite(stat) else 0.0
    return TestReport(p_value=p, B=0, method="ftest", seed=None, statistic=stat)


def perm_test(data: Dataset, B: int = 2000, seed: int = 0, *,
              tie_tol: float = DEFAULT_TIE_TOL, rank_tol: float = DEFAULT_RANK_TOL,
              keep_ledger: bool = False, permutations=None) -> TestReport:
    """Permute the feature column; refit y ~ x_pi + Z each time."""
    qz, qxz, df = _spans(data, rank_tol)
    block = _perm_matrix(data, B, seed, permutations)
    yss = float(data.y @ data.y)
    original = float(_stat_rows(qz, qxz, df, data.y[None, :], yss)[0])

    xnorm = float(np.linalg.norm(data.x))
    xhat = data.x / xnorm if xnorm > 0 else np.zeros(data.n)
    y0 = project_out(qz, data.y)
    rss_red = float(y0 @ y0)
    xp0 = _residual_rows(qz, xhat[block])
    norms = np.einsum("bn,bn->b", xp0, xp0)
    dots = xp0 @ y0
    dep = norms <= rank_tol ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(dep, 0.0, dots / np.where(dep, 1.0, norms))
    resid = y0[None, :] - coef[:, None] * xp0
    rss_full = np.einsum("bn,bn->b", resid, resid)
    permuted = _f_from_rss(np.full(rss_full.shape, rss_red), rss_full, df, yss)
    return _report("perm", original, permuted,
                   None if permutations is not None else seed,
                   tie_tol, keep_ledger, [])


def fl_test(data: Dataset, B: int = 2000, seed: int = 0, *,
            tie_tol: float = DEFAULT_TIE_TOL, rank_tol: float = DEFAULT_RANK_TOL,
            keep_ledger: bool = False, permutations=None) -> TestReport:
    """Permute reduced-model residuals; refit them on (x, Z).

    The observed statistic uses the unpermuted residuals, which gives
    exactly the observed F statistic of the feature.
    """
    qz, qxz, df = _spans(data, rank_tol)
    block = _perm_matrix(data, B, seed, permutations)
    yss = float(data.y @ data.y)
    r = project_out(qz, data.y)
    original = float(_stat_rows(qz, qxz, df, r[None, :], yss)[0])
    permuted = _stat_rows(qz, qxz, df, r[block], yss)
    return _report("fl", original, permuted,
                   None if permutations is not None else seed,
                   tie_tol, keep_ledger, [])


def kennedy_test(data: Dataset, B: int = 2000, seed: int = 0, *,
                 tie_tol: float = DEFAULT_TIE_TOL, rank_tol: float = DEFAULT_RANK_TOL,
                 keep_ledger: bool = False, permutations=None) -> TestReport:
    """Permute reduced-model residuals; regress on the residualized feature."""
    qz, _, df = _spans(data, rank_tol)
    block = _perm_matrix(data, B, seed, permutations)
    yss = float(data.y @ data.y)
    r = project_out(qz, data.y)
    xt = project_out(qz, data.x)
    ntx = float(xt @ xt)
    warnings = []
    if ntx <= (rank_tol * np.linalg.norm(data.x)) ** 2:
        xt = np.zeros(data.n)
        ntx = 0.0
        warnings.append("feature lies in the covariate span; all statistics are zero")

    def stat(rows):
        if ntx == 0.0:
            zeros = np.zeros(rows.shape[0])
            return zeros
        dots = rows @ xt
        coef = dots / ntx
        resid = rows - coef[:, None] * xt[None, :]
        return _f_from_rss(np.einsum("bn,bn->b", rows, rows),
                           np.einsum("bn,bn->b", resid, resid), df, yss)

    original = float(stat(r[None, :])[0])
    permuted = stat(r[block])
    return _report("kennedy", original, permuted,
                   None if permutations is not None else seed,
                   tie_tol, keep_ledger, warnings)


def braak_test(data: Dataset, B: int = 2000, seed: int = 0, *,
               tie_tol: float = DEFAULT_TIE_TOL, rank_tol: float = DEFAULT_RANK_TOL,
               keep_ledger: bool = False, permutations=None) -> TestReport:
    """Permute full-model residuals around the full-model fit.

    Synthetic responses are fit + permuted residual; the observed
    statistic is the identity-permutation copy, i.e. the plain F
    statistic of the feature.
    """
    qz, qxz, df = _spans(data, rank_tol)
    block = _perm_matrix(data, B, seed, permutations)
    yss = float(data.y @ data.y)
    res = project_out(qxz, data.y)
    fitted = data.y - res
    original = float(_stat_rows(qz, qxz, df, data.y[None, :], yss)[0])
    synthetic = fitted[None, :] + res[block]
    permuted = _stat_rows(qz, qxz, df, synthetic, yss)
    return _report("braak", original, permuted,
                   None if permutations is not None else seed,
                   tie_tol, keep_ledger, [])
