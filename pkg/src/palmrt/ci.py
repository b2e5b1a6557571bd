"""Confidence intervals by exact inversion of the paired test.

Shifting the response by ``beta * x`` and rerunning the test traces a
p-value function ``f(beta)``; the confidence set is where it stays above
alpha.  No rerunning is needed: for each permutation the pair score as a
function of beta is determined by four projection coefficients.  With

    c1 = || x residualized on span(x_pi, Z_pi, Z, 1) ||^2
    c2 = x . (y residualized on the same span)
    c3 = || y residualized on the same span ||^2
    c4 = || y residualized on span(x, Z, Z_pi, 1) ||^2   (free of beta)

the score is 1/2 on the closed interval [s, u] plus 1/2 on its interior,
where s, u are the roots of c1 b^2 - 2 c2 b + (c3 - c4) = 0.  The
discriminant c2^2 - c1 (c3 - c4) is nonnegative by construction, and the
pooled-model coefficient of x always lies between the roots.  When
c1 = 0 the score is constant in beta: 1 if c3 < c4, 1/2 if they tie,
else 0.

The confidence set is swept exactly: pair scores are half-integers, so
the running count is kept in doubled integers and only the final
comparison against 2 (B+1) alpha touches floating point, through the
same expression the grid oracle uses.  The set reported is the closure
[min, max] of the acceptance region.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from . import _engine
from .core import DEFAULT_TIE_TOL, Dataset, _RSS_FLOOR_REL, _perm_matrix, omega_values
from .errors import InternalConsistencyError, InvalidInputError
from .linalg import DEFAULT_RANK_TOL, Basis, orthonormal_columns, project_out, residual_ss, residual_vector
from .permutations import Permutation, apply_rows

_DISC_REL_TOL = 1e-9
_DISC_ABS_REL = 1e-12
_MERGE_REL_TOL = 1e-12

# Fraction of ||x||^2 below which the leading coefficient is treated as an
# exact zero (a constant-score pair).  The batched path obtains c1 by
# subtracting two near-equal scalars, leaving cancellation noise of order
# eps on the unit-feature scale, far above rank_tol**2; the reference path
# squares a residual vector and is accurate to eps**2.  Both paths must
# make the same call, so both cut at a level the noisier one can certify.
_C1_ZERO_REL = 1e-13


@dataclass(frozen=True)
class PairCoeffs:
    """Projection coefficients of one permutation's score function.

    ``s`` and ``u`` are the quadratic roots (None when ``c1`` is zero
    and the score does not depend on beta).
    """

    c1: float
    c2: float
    c3: float
    c4: float
    s: float | None = None
    u: float | None = None


@dataclass
class CriticalLedger:
    """Everything the sweep saw: merged root locations with their start
    and end multiplicities, the acceptance threshold, and the partition
    sizes (pairs with a genuine interval, pairs scoring a constant 1,
    pairs scoring a constant 1/2).

    ``f_at[l]`` and ``f_after[l]`` are doubled running scores at and
    just after threshold l; sum(start_counts) == sum(end_counts) ==
    ``n_bounded``.
    """

    thresholds: np.ndarray
    start_counts: np.ndarray
    end_counts: np.ndarray
    gamma: float
    n_bounded: int
    n_always: int
    n_half: int
    f_at: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    f_after: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


@dataclass(frozen=True)
class ConfInterval:
    kind: str                 # "bounded" | "empty" | "all_reals"
    lo: float | None
    hi: float | None
    alpha: float
    fallback_used: bool = False

    def contains(self, beta: float) -> bool:
        if self.kind == "all_reals":
            return True
        if self.kind == "empty":
            return False
        return self.lo <= beta <= self.hi

    @property
    def length(self) -> float:
        if self.kind == "all_reals":
            return float("inf")
        if self.kind == "empty":
            return 0.0
        return self.hi - self.lo


def _clamped_disc(c1, c2, c3, c4, scale_abs: float):
    """Clamp tiny negative discriminants to zero, reject real violations.

    ``scale_abs`` is ||x||^2 * ||y||^2, the natural unit of the
    discriminant; it catches pairs whose every term sits at rounding
    noise, where a purely relative tolerance is meaningless.
    """
    c1a = np.asarray(c1, dtype=float)
    c2a = np.asarray(c2, dtype=float)
    diff = np.asarray(c3, dtype=float) - np.asarray(c4, dtype=float)
    disc = c2a ** 2 - c1a * diff
    scale = c2a ** 2 + np.abs(c1a * diff)
    tol = np.maximum(_DISC_REL_TOL * scale, _DISC_ABS_REL * scale_abs)
    bad = disc < -tol
    if np.any(bad):
        i = int(np.argmax(np.atleast_1d(bad)))
        raise InternalConsistencyError(
            "negative discriminant beyond tolerance in interval inversion "
            f"(value {np.atleast_1d(disc)[i]:.3e} against tolerance "
            f"{np.atleast_1d(tol)[i]:.3e} at pair {i}); "
            "this indicates a numerical failure, not bad input"
        )
    return np.maximum(disc, 0.0)


def pair_coeffs(data: Dataset, perm: Permutation, *, tie_tol: float = DEFAULT_TIE_TOL,
                rank_tol: float = DEFAULT_RANK_TOL) -> PairCoeffs:
    """Coefficients for one permutation by direct span assembly.

    Reference path for the batched computation inside
    :func:`invert_ci`; the two must agree to rounding.
    """
    if perm.n != data.n:
        raise InvalidInputError(f"permutation size {perm.n} does not match n = {data.n}")
    const = np.ones((data.n, 1)) if data.intercept else np.empty((data.n, 0))
    xp = apply_rows(perm, data.x)
    zp = apply_rows(perm, data.Z)
    span_other = np.column_stack([xp, zp, data.Z, const])
    span_feat = np.column_stack([data.x, data.Z, zp, const])
    rx = residual_vector(Basis(span_other, rank_tol), data.x)
    c1 = float(rx @ rx)
    xnorm = float(np.linalg.norm(data.x))
    if c1 <= max(rank_tol ** 2, _C1_ZERO_REL) * xnorm ** 2:
        c1 = 0.0
    c2 = float(rx @ data.y)
    c3 = residual_ss(Basis(span_other, rank_tol), data.y)
    c4 = residual_ss(Basis(span_feat, rank_tol), data.y)
    if c1 == 0.0:
        return PairCoeffs(c1=0.0, c2=c2, c3=c3, c4=c4)
    yss = float(data.y @ data.y)
    disc = float(_clamped_disc(c1, c2, c3, c4, xnorm ** 2 * yss))
    root = disc ** 0.5
    return PairCoeffs(c1=c1, c2=c2, c3=c3, c4=c4,
                      s=(c2 - root) / c1, u=(c2 + root) / c1)


def _batched_coeffs(prep: _engine.PreparedDesign, sc: _engine.PairScalars, rank_tol: float):
    """PairCoeffs fields as arrays, from the shared projection scalars."""
    dep_x = sc.nx <= rank_tol ** 2
    dep_xp = sc.nxp <= rank_tol ** 2
    safe_nx = np.where(dep_x, 1.0, sc.nx)
    safe_nxp = np.where(dep_xp, 1.0, sc.nxp)
    with np.errstate(divide="ignore", invalid="ignore"):
        c4 = sc.ryss - np.where(dep_x, 0.0, sc.dx ** 2 / safe_nx)
        c3 = sc.ryss - np.where(dep_xp, 0.0, sc.dxp ** 2 / safe_nxp)
        c1h = sc.nx - np.where(dep_xp, 0.0, sc.xxp ** 2 / safe_nxp)
        c2h = sc.dx - np.where(dep_xp, 0.0, sc.xxp * sc.dxp / safe_nxp)
    xnorm = prep.xnorm
    c1 = np.maximum(c1h, 0.0) * xnorm ** 2
    c2 = c2h * xnorm
    c1 = np.where(c1h <= max(rank_tol ** 2, _C1_ZERO_REL), 0.0, c1)
    return c1, c2, np.maximum(c3, 0.0), np.maximum(c4, 0.0)


def _merge_thresholds(s: np.ndarray, u: np.ndarray):
    """Sort the root multiset and merge values equal to relative tolerance."""
    roots = np.concatenate([s, u])
    is_start = np.concatenate([np.ones(s.size, dtype=bool), np.zeros(u.size, dtype=bool)])
    order = np.argsort(roots, kind="stable")
    vals = roots[order]
    starts = is_start[order]
    if vals.size == 0:
        return (np.empty(0), np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    gaps = np.diff(vals)
    scale = np.maximum(np.maximum(np.abs(vals[1:]), np.abs(vals[:-1])), 1e-300)
    new_group = gaps > _MERGE_REL_TOL * scale
    gid = np.concatenate([[0], np.cumsum(new_group)])
    m = int(gid[-1]) + 1
    sums = np.bincount(gid, weights=vals, minlength=m)
    counts = np.bincount(gid, minlength=m)
    thresholds = sums / counts
    m_s = np.bincount(gid[starts], minlength=m).astype(np.int64)
    m_u = np.bincount(gid[~starts], minlength=m).astype(np.int64)
    return thresholds, m_s, m_u


def acceptance_threshold(B: int, alpha: float) -> float:
    """Doubled score a point must exceed to stay in the confidence set.

    Kept as the single shared expression so the sweep, the grid oracle,
    and the duality checks all make bit-identical decisions.
    """
    return 2.0 * (B + 1) * alpha


def invert_ci(data: Dataset, B: int = 2000, seed: int = 0, alpha: float = 0.05, *,
              tie_tol: float = DEFAULT_TIE_TOL, rank_tol: float = DEFAULT_RANK_TOL,
              permutations=None, fallback: str = "none"):
    """Confidence interval for the feature coefficient at level alpha.

    Uses the same permutation stream convention as the test, so the
    interval at level alpha and the p-value from ``palmrt_test`` with
    the same (seed, B) agree: 0 is in the interval exactly when p >
    alpha, except on exact acceptance-boundary ties.

    Returns ``(ConfInterval, CriticalLedger)``.  ``fallback="normal"``
    replaces an empty set with the textbook normal-theory interval and
    flags it; the default reports the empty set as such.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must be in (0, 1), got {alpha}")
    if fallback not in ("none", "normal"):
        raise InvalidInputError(f"fallback must be 'none' or 'normal', got {fallback!r}")
    block = _perm_matrix(data, B, seed, permutations)
    nperm = block.shape[0]
    prep = _engine.prepare_design(data.y, data.x, data.Z, data.intercept, rank_tol)
    sc = _engine.scalars_in_chunks(prep, block, rank_tol)
    c1, c2, c3, c4 = _batched_coeffs(prep, sc, rank_tol)

    bounded = c1 > 0.0
    # Constant-score pairs compare two residual sums directly; sums at
    # the rounding-noise floor are exact zeros so that structurally
    # degenerate pairs land in the tie class on every code path.
    floor = _RSS_FLOOR_REL * prep.yss
    c3c = np.where(c3 <= floor, 0.0, c3)[~bounded]
    c4c = np.where(c4 <= floor, 0.0, c4)[~bounded]
    const_score = omega_values(c3c, c4c, tie_tol, guard=1e-300 * prep.yss)
    n_always = int(np.sum(const_score == 1.0))
    n_half = int(np.sum(const_score == 0.5))
    n_bounded = int(np.sum(bounded))

    disc = _clamped_disc(c1[bounded], c2[bounded], c3[bounded], c4[bounded],
                         prep.xnorm ** 2 * prep.yss)
    root = np.sqrt(disc)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = (c2[bounded] - root) / c1[bounded]
        u = (c2[bounded] + root) / c1[bounded]

    thresholds, m_s, m_u = _merge_thresholds(s, u)
    gamma = (nperm + 1) * alpha - 1.0 - n_always - 0.5 * n_half
    need = acceptance_threshold(nperm, alpha)
    base = 2 + 2 * n_always + n_half          # doubled constant part of the score

    delta = m_s - m_u
    running = 2 * np.cumsum(delta)
    f_at = running - delta                    # doubled f at each threshold
    f_after = running                         # doubled f just past each threshold
    ledger = CriticalLedger(
        thresholds=thresholds, start_counts=m_s, end_counts=m_u, gamma=gamma,
        n_bounded=n_bounded, n_always=n_always, n_half=n_half,
        f_at=f_at.astype(np.int64), f_after=f_after.astype(np.int64),
    )

    if base > need:                           # gamma < 0: accepted everywhere
        return ConfInterval(kind="all_reals", lo=None, hi=None, alpha=alpha), ledger

    ok_at = base + f_at > need
    ok_after = base + f_after > need
    if not (ok_at.any() or ok_after.any()):
        if fallback == "normal":
            nci = normal_ci(data, alpha, rank_tol=rank_tol)
            return ConfInterval(kind=nci.kind, lo=nci.lo, hi=nci.hi, alpha=alpha,
                                fallback_used=True), ledger
        return ConfInterval(kind="empty", lo=None, hi=None, alpha=alpha), ledger

    ok_lo = ok_at | ok_after
    ok_hi = ok_at.copy()
    ok_hi[1:] |= ok_after[:-1]
    lo = float(thresholds[int(np.argmax(ok_lo))])
    hi = float(thresholds[len(ok_hi) - 1 - int(np.argmax(ok_hi[::-1]))])
    return ConfInterval(kind="bounded", lo=lo, hi=hi, alpha=alpha), ledger


def normal_ci(data: Dataset, alpha: float = 0.05, *,
              rank_tol: float = DEFAULT_RANK_TOL) -> ConfInterval:
    """Textbook OLS t interval for the feature coefficient.

    Degrees of freedom use the numerical rank of the full design.  An
    aliased feature has no finite interval and comes back as all_reals.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must be in (0, 1), got {alpha}")
    const = np.ones((data.n, 1)) if data.intercept else np.empty((data.n, 0))
    others = np.hstack([data.Z, const])
    xt = residual_vector(Basis(others, rank_tol), data.x)
    ntx = float(xt @ xt)
    if ntx <= (rank_tol * np.linalg.norm(data.x)) ** 2:
        return ConfInterval(kind="all_reals", lo=None, hi=None, alpha=alpha)
    full = np.column_stack([data.x, others])
    rank = orthonormal_columns(full, rank_tol).shape[1]
    df = data.n - rank
    if df < 1:
        raise InvalidInputError(f"no residual degrees of freedom: n = {data.n}, rank = {rank}")
    beta = float(xt @ data.y) / ntx
    rss = residual_ss(Basis(full, rank_tol), data.y)
    se = (rss / df / ntx) ** 0.5
    half = float(scipy.stats.t.ppf(1.0 - alpha / 2.0, df)) * se
    return ConfInterval(kind="bounded", lo=beta - half, hi=beta + half, alpha=alpha)


def grid_oracle_ci(data: Dataset, B: int = 2000, seed: int = 0, alpha: float = 0.05, *,
                   grid=None, tie_tol: float = DEFAULT_TIE_TOL,
                   rank_tol: float = DEFAULT_RANK_TOL, permutations=None,
                   chunk: int = 256) -> ConfInterval:
    """Slow reference interval: rerun the test on a dense beta grid.

    For each grid value the paired statistics are recomputed from
    explicitly projected residual vectors of the shifted response
    ``y - beta x``; none of the root or sweep machinery of
    :func:`invert_ci` is touched.  The returned endpoints are grid
    points, accurate to one grid step.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must be in (0, 1), got {alpha}")
    block = _perm_matrix(data, B, seed, permutations)
    nperm = block.shape[0]
    if grid is None:
        ref = normal_ci(data, alpha, rank_tol=rank_tol)
        if ref.kind != "bounded":
            raise InvalidInputError("cannot build a default grid for an aliased feature")
        center = 0.5 * (ref.lo + ref.hi)
        half = 20.0 * max(ref.hi - center, 1e-12 * max(abs(center), 1.0))
        grid = np.linspace(center - half, center + half, 20001)
    grid = np.asarray(grid, dtype=float)

    const = np.ones((data.n, 1)) if data.intercept else np.empty((data.n, 0))
    ry_other = np.empty((nperm, data.n))
    rx_other = np.empty((nperm, data.n))
    ry_feat = np.empty((nperm, data.n))
    rx_feat = np.empty((nperm, data.n))
    for i, row in enumerate(block):
        perm = Permutation(row)
        xp = apply_rows(perm, data.x)
        zp = apply_rows(perm, data.Z)
        q_other = orthonormal_columns(np.column_stack([xp, zp, data.Z, const]), rank_tol)
        q_feat = orthonormal_columns(np.column_stack([data.x, data.Z, zp, const]), rank_tol)
        ry_other[i] = project_out(q_other, data.y)
        rx_other[i] = project_out(q_other, data.x)
        ry_feat[i] = project_out(q_feat, data.y)
        rx_feat[i] = project_out(q_feat, data.x)

    need = acceptance_threshold(nperm, alpha)
    guard = 1e-300 * float(data.y @ data.y)
    yss = float(data.y @ data.y)
    xss = float(data.x @ data.x)
    xy = float(data.x @ data.y)
    accepted = np.empty(grid.size, dtype=bool)
    for start in range(0, grid.size, chunk):
        betas = grid[start:start + chunk]                      # (g,)
        d_other = ry_other[None] - betas[:, None, None] * rx_other[None]
        d_feat = ry_feat[None] - betas[:, None, None] * rx_feat[None]
        t_orig = np.einsum("gbn,gbn->gb", d_other, d_other)
        t_perm = np.einsum("gbn,gbn->gb", d_feat, d_feat)
        # Same rounding-noise floor as the closed-form path, relative
        # to the shifted response scale ||y - beta x||^2.
        shift_ss = np.maximum(yss - 2.0 * betas * xy + betas ** 2 * xss, 0.0)
        floor = (_RSS_FLOOR_REL * shift_ss)[:, None]
        t_orig = np.where(t_orig <= floor, 0.0, t_orig)
        t_perm = np.where(t_perm <= floor, 0.0, t_perm)
        omegas = omega_values(t_orig, t_perm, tie_tol, guard)
        score = 2.0 + 2.0 * omegas.sum(axis=1)
        accepted[start:start + chunk] = score > need

    if not accepted.any():
        return ConfInterval(kind="empty", lo=None, hi=None, alpha=alpha)
    if accepted[0] and accepted[-1]:
        return ConfInterval(kind="all_reals", lo=None, hi=None, alpha=alpha)
    idx = np.flatnonzero(accepted)
    return ConfInterval(kind="bounded", lo=float(grid[idx[0]]), hi=float(grid[idx[-1]]),
                        alpha=alpha)
