"""The paired permutation-augmented regression test.

For each random permutation pi of the rows, the observed feature x and
its permuted copy x_pi compete inside one pooled regression that
contains the covariates Z together with their permuted copy Z_pi.  In
the default residual form the two statistics of a pair are

    original  = || y - fit on span(x_pi, Z, Z_pi, 1) ||^2
    permuted  = || y - fit on span(x,    Z, Z_pi, 1) ||^2

(The "original" statistic carries x_pi because the pooled F ratio for x
and for x_pi share their numerator term, so comparing the F statistics
is the same as comparing these two residual sums with the labels
swapped.)  A pair scores omega = 1 when the permuted statistic exceeds
the original, 1/2 on a tie, 0 otherwise, and the p-value is
(1 + sum of omegas) / (B + 1).  Under the null of no partial signal the
chance that this p-value falls at or below alpha is strictly below
2 * alpha for any noise distribution, any fixed design, and any B.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _engine
from .errors import InvalidInputError
from .linalg import DEFAULT_RANK_TOL, Basis, residual_ss, residual_vector
from .permutations import PermStream, Permutation, apply_rows, compose, inverse

DEFAULT_TIE_TOL = 1e-9

# Inner products below this fraction of their natural scale are treated
# as exact zeros: direct dot products of float64 projections carry
# cancellation noise around sqrt(n) * machine epsilon, so 1e-12 leaves a
# wide margin for any realistic n while staying far below statistically
# meaningful values.
_ZERO_REL = 1e-12

# Squared-residual statistics are assembled as differences of O(||y||^2)
# scalars, whose cancellation noise is linear in machine epsilon (about
# 2e-16 * ||y||^2).  Anything below this relative floor is rounding
# noise and must collapse to an exact zero on every code path, or two
# paths could order a structurally tied pair differently.
_RSS_FLOOR_REL = 1e-13

VARIANTS = ("residual", "coefficient", "inner")
DIRECTIONS = ("two_sided", "positive", "negative")


@dataclass(frozen=True)
class Dataset:
    """A regression problem: response y, feature of interest x, covariates Z.

    ``Z`` may have zero columns.  When ``intercept`` is true a constant
    column is appended once to the pooled spans (never duplicated across
    the observed and permuted covariate copies).
    """

    y: np.ndarray
    x: np.ndarray
    Z: np.ndarray
    intercept: bool = True

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        z = self.Z
        if z is None:
            z = np.empty((y.shape[0], 0))
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if y.ndim != 1 or x.ndim != 1 or z.ndim != 2:
            raise InvalidInputError(
                f"expected y (n,), x (n,), Z (n, p); got {y.shape}, {x.shape}, {z.shape}"
            )
        if not (y.shape[0] == x.shape[0] == z.shape[0]):
            raise InvalidInputError(
                f"row mismatch: y has {y.shape[0]}, x has {x.shape[0]}, Z has {z.shape[0]}"
            )
        if y.shape[0] < 1:
            raise InvalidInputError("dataset must contain at least one row")
        for name, a in (("y", y), ("x", x), ("Z", z)):
            if not np.all(np.isfinite(a)):
                raise InvalidInputError(f"{name} contains non-finite entries")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "Z", z)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def p(self) -> int:
        return int(self.Z.shape[1])


@dataclass(frozen=True)
class PairedStat:
    """One permutation's paired statistics and its score.

    ``omega`` is 1 when ``permuted > original`` (to tie tolerance),
    0.5 on a tie, 0 otherwise.
    """

    original: float
    permuted: float
    omega: float


@dataclass
class TestReport:
    p_value: float
    B: int
    method: str
    seed: int | None
    variant: str | None = None
    statistic: float | None = None
    warnings: list[str] = field(default_factory=list)
    ledger: list[PairedStat] | None = None


def omega_values(original, permuted, tie_tol: float = DEFAULT_TIE_TOL,
                 guard: float = 0.0) -> np.ndarray:
    """Pair scores: 1 where permuted beats original, 1/2 on ties.

    Ties are decided relative to the larger of the two statistics (with
    ``guard`` as an absolute floor for the scale, so that a pair of
    exact zeros ties).  Two infinite statistics tie; an infinite
    statistic beats any finite one.
    """
    original = np.asarray(original, dtype=float)
    permuted = np.asarray(permuted, dtype=float)
    scale = np.maximum(np.maximum(np.abs(original), np.abs(permuted)), guard)
    # A single infinite statistic must win outright, so the relative
    # band only applies on a finite scale; matching infinities tie
    # through the equality branch.
    scale = np.where(np.isfinite(scale), scale, 0.0)
    with np.errstate(invalid="ignore"):
        diff = permuted - original
        tie = np.abs(diff) <= tie_tol * scale
        tie |= original == permuted      # covers 0 == 0 and inf == inf
        out = np.where(diff > 0, 1.0, 0.0)
    return np.where(tie, 0.5, out)


def _p_from_omegas(omegas: np.ndarray) -> float:
    return float((1.0 + omegas.sum()) / (omegas.size + 1))


def _variant_pair(sc: _engine.PairScalars, xnorm: float, yss: float, variant: str,
                  direction: str, rank_tol: float):
    """Map engine inner products to (original, permuted) statistic arrays."""
    dep_x = sc.nx <= rank_tol ** 2
    dep_xp = sc.nxp <= rank_tol ** 2
    # Inner products at the rounding-noise floor are exact zeros; the
    # feature columns are unit scaled, so the floor is relative to ||y||.
    dlim = _ZERO_REL * yss ** 0.5
    dx = np.where(np.abs(sc.dx) <= dlim, 0.0, sc.dx)
    dxp = np.where(np.abs(sc.dxp) <= dlim, 0.0, sc.dxp)
    with np.errstate(divide="ignore", invalid="ignore"):
        explained_x = np.where(dep_x, 0.0, dx ** 2 / np.where(dep_x, 1.0, sc.nx))
        explained_xp = np.where(dep_xp, 0.0, dxp ** 2 / np.where(dep_xp, 1.0, sc.nxp))
        coef_x = np.where(dep_x, 0.0, dx / np.where(dep_x, 1.0, sc.nx))
        coef_xp = np.where(dep_xp, 0.0, dxp / np.where(dep_xp, 1.0, sc.nxp))
    if variant == "residual":
        floor = _RSS_FLOOR_REL * yss
        original = np.maximum(sc.ryss - explained_xp, 0.0)
        permuted = np.maximum(sc.ryss - explained_x, 0.0)
        original = np.where(original <= floor, 0.0, original)
        permuted = np.where(permuted <= floor, 0.0, permuted)
        return original, permuted
    if variant == "coefficient":
        # Coefficients of the raw feature columns; both copies share ||x||.
        unit = xnorm if xnorm > 0.0 else 1.0
        co, cp = coef_x / unit, coef_xp / unit
        if direction == "two_sided":
            return np.abs(co), np.abs(cp)
        if direction == "positive":
            return co, cp
        return -co, -cp
    if variant == "inner":
        return np.abs(dx) * xnorm, np.abs(dxp) * xnorm
    raise InvalidInputError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def _check_args(variant: str, direction: str):
    if variant not in VARIANTS:
        raise InvalidInputError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if direction not in DIRECTIONS:
        raise InvalidInputError(f"unknown direction {direction!r}; expected one of {DIRECTIONS}")


def _perm_matrix(data: Dataset, B: int, seed: int, permutations) -> np.ndarray:
    """Resolve the (B, n) block of permutation maps for a test."""
    if permutations is not None:
        rows = [p.map if isinstance(p, Permutation) else Permutation(np.asarray(p)).map
                for p in permutations]
        block = np.asarray(rows, dtype=np.int64)
        if block.ndim != 2 or block.shape[1] != data.n:
            raise InvalidInputError("explicit permutations must all have length n")
        return block
    if B < 1:
        raise InvalidInputError(f"B must be at least 1, got {B}")
    return PermStream(seed=seed, n=data.n).draw_block(1, B)


def palmrt_pair(data: Dataset, perm: Permutation, variant: str = "residual",
                direction: str = "two_sided", tie_tol: float = DEFAULT_TIE_TOL,
                rank_tol: float = DEFAULT_RANK_TOL) -> PairedStat:
    """Paired statistics for a single permutation, by direct projection.

    This is the reference path: it assembles each span explicitly and
    calls the dense residual kernels.  The block engine used by
    :func:`palmrt_test` must agree with it to rounding.
    """
    _check_args(variant, direction)
    if perm.n != data.n:
        raise InvalidInputError(f"permutation size {perm.n} does not match n = {data.n}")
    const = np.ones((data.n, 1)) if data.intercept else np.empty((data.n, 0))
    xp = apply_rows(perm, data.x)
    zp = apply_rows(perm, data.Z)
    common = np.hstack([data.Z, zp, const])
    yss = float(data.y @ data.y)
    if variant == "residual":
        floor = _RSS_FLOOR_REL * yss
        original = residual_ss(Basis(np.column_stack([xp, common]), rank_tol), data.y)
        permuted = residual_ss(Basis(np.column_stack([data.x, common]), rank_tol), data.y)
        original = 0.0 if original <= floor else original
        permuted = 0.0 if permuted <= floor else permuted
    elif variant == "coefficient":
        original = _partial_coef(data.x, common, data.y, rank_tol)
        permuted = _partial_coef(xp, common, data.y, rank_tol)
        if direction == "two_sided":
            original, permuted = abs(original), abs(permuted)
        elif direction == "negative":
            original, permuted = -original, -permuted
    else:
        r = residual_vector(Basis(common, rank_tol), data.y)
        floor = _ZERO_REL * float(np.linalg.norm(data.x)) * yss ** 0.5
        original = abs(float(data.x @ r))
        permuted = abs(float(xp @ r))
        original = 0.0 if original <= floor else original
        permuted = 0.0 if permuted <= floor else permuted
    guard = 1e-300 * yss
    omega = float(omega_values(original, permuted, tie_tol, guard))
    return PairedStat(original=float(original), permuted=float(permuted), omega=omega)


def _partial_coef(target: np.ndarray, others: np.ndarray, y: np.ndarray,
                  rank_tol: float) -> float:
    """OLS coefficient of ``target`` in y ~ target + others, or 0 when aliased."""
    t = residual_vector(Basis(others, rank_tol), target)
    nt = float(t @ t)
    if nt <= (rank_tol * np.linalg.norm(target)) ** 2:
        return 0.0
    num = float(t @ y)
    if abs(num) <= _ZERO_REL * np.linalg.norm(target) * np.linalg.norm(y):
        return 0.0
    return num / nt


def palmrt_test(data: Dataset, B: int = 2000, seed: int = 0, variant: str = "residual",
                direction: str = "two_sided", *, tie_tol: float = DEFAULT_TIE_TOL,
                rank_tol: float = DEFAULT_RANK_TOL, keep_ledger: bool = False,
                permutations=None) -> TestReport:
    """Run the paired test with B random permutations.

    Permutation b comes from a counter-based stream keyed by
    ``(seed, b)``, so the report is a pure function of
    ``(data, B, seed, variant, direction)`` no matter how the work is
    chunked or scheduled.  ``permutations`` overrides the stream with an
    explicit collection (for exhaustive enumeration on tiny samples).

    The p-value always lands in [1/(B+1), 1].  With fewer than
    ``2p + 2`` rows (plus one more with an intercept) the pooled span
    can cover the whole sample space; the test stays valid but every
    pair may tie, which is reported as a warning.
    """
    _check_args(variant, direction)
    block = _perm_matrix(data, B, seed, permutations)
    nperm = block.shape[0]
    prep = _engine.prepare_design(data.y, data.x, data.Z, data.intercept, rank_tol)
    sc = _engine.scalars_in_chunks(prep, block, rank_tol)
    original, permuted = _variant_pair(sc, prep.xnorm, prep.yss, variant, direction, rank_tol)
    omegas = omega_values(original, permuted, tie_tol, guard=1e-300 * prep.yss)

    warnings = []
    pooled_cols = 2 * data.p + 1 + (1 if data.intercept else 0)
    if pooled_cols >= data.n:
        warnings.append(
            "pooled span has as many columns as rows; statistics may all tie "
            "and the test is conservative"
        )
    if nperm > 0 and np.all(omegas == 0.5):
        warnings.append("every permutation comparison tied")

    ledger = None
    if keep_ledger:
        ledger = [PairedStat(float(o), float(q), float(w))
                  for o, q, w in zip(original, permuted, omegas)]
    return TestReport(
        p_value=_p_from_omegas(omegas),
        B=nperm,
        method="palmrt",
        seed=None if permutations is not None else seed,
        variant=variant,
        warnings=warnings,
        ledger=ledger,
    )


def bivariate_statistic(pi1: Permutation, pi2: Permutation, x, Z, eps,
                        intercept: bool = True, variant: str = "residual",
                        rank_tol: float = DEFAULT_RANK_TOL) -> float:
    """Two-permutation statistic whose diagonal pairs reproduce the test.

    For the residual form this is the squared residual of ``eps`` on
    span(x_{pi2}, Z_{pi2}, Z_{pi1}, 1).  Evaluated at (identity, pi) and
    (pi, identity) it gives exactly the (original, permuted) pair of
    :func:`palmrt_pair`; the property tests rely on that, and on the
    relabeling identity checked by :func:`transferability_check`.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(Z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    eps = np.asarray(eps, dtype=float)
    n = x.shape[0]
    const = np.ones((n, 1)) if intercept else np.empty((n, 0))
    x2 = apply_rows(pi2, x)
    z1 = apply_rows(pi1, z)
    z2 = apply_rows(pi2, z)
    if variant == "residual":
        return residual_ss(Basis(np.column_stack([x2, z2, z1, const]), rank_tol), eps)
    if variant == "coefficient":
        return abs(_partial_coef(x2, np.hstack([z2, z1, const]), eps, rank_tol))
    if variant == "inner":
        r = residual_vector(Basis(np.hstack([z1, z2, const]), rank_tol), eps)
        return abs(float(x2 @ r))
    raise InvalidInputError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def transferability_check(x, Z, eps, trials: int = 100, seed: int = 0,
                          tol: float = 1e-8, intercept: bool = True,
                          variant: str = "residual") -> bool:
    """Verify the relabeling identity the error guarantee rests on.

    For random permutation triples (pi1, pi2, sigma) the statistic must
    satisfy  T(pi1, pi2; eps_sigma) == T(pi1 o sigma^-1, pi2 o sigma^-1; eps)
    up to ``tol`` (relative to the statistic scale).  Returns True when
    every sampled triple passes.
    """
    x = np.asarray(x, dtype=float)
    eps = np.asarray(eps, dtype=float)
    n = x.shape[0]
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        pi1 = Permutation(rng.permutation(n))
        pi2 = Permutation(rng.permutation(n))
        sigma = Permutation(rng.permutation(n))
        lhs = bivariate_statistic(pi1, pi2, x, Z, apply_rows(sigma, eps),
                                  intercept=intercept, variant=variant)
        sig_inv = inverse(sigma)
        rhs = bivariate_statistic(compose(pi1, sig_inv), compose(pi2, sig_inv),
                                  x, Z, eps, intercept=intercept, variant=variant)
        scale = max(abs(lhs), abs(rhs), float(eps @ eps), 1e-30)
        if abs(lhs - rhs) > tol * scale:
            return False
    return True
