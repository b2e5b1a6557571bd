"""The paired permutation test against independent oracles.

The reference oracle for every projection is the Gram pseudo-inverse
hat matrix (built in test_linalg).  The block engine must agree with
the single-permutation reference path, which in turn must agree with
the oracle.  Distributional facts (exhaustive enumeration vs Monte
Carlo) and the combinatorial row-sum bound get their own checks.
"""

import numpy as np
import pytest

from palmrt import (
    Dataset,
    PermStream,
    Permutation,
    apply_rows,
    bivariate_statistic,
    compose,
    enumerate_all,
    identity,
    inverse,
    palmrt_pair,
    palmrt_test,
    transferability_check,
)
from palmrt.core import omega_values
from palmrt.errors import InvalidInputError

from test_linalg import hat_matrix


def make_data(seed, n=20, p=3, beta=0.5, intercept=True, deficient=False):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, p))
    if deficient and p >= 2:
        z[:, -1] = z[:, 0] - 2.0 * z[:, 1]
    x = 0.4 * z[:, 0] + rng.standard_normal(n) if p else rng.standard_normal(n)
    y = beta * x + z @ rng.standard_normal(p) + rng.standard_normal(n)
    return Dataset(y=y, x=x, Z=z, intercept=intercept)


def oracle_pair(data, perm):
    """(original, permuted) residual statistics via explicit hat matrices."""
    n = data.n
    const = np.ones((n, 1)) if data.intercept else np.empty((n, 0))
    xp = apply_rows(perm, data.x)
    zp = apply_rows(perm, data.Z)
    span_orig = np.column_stack([xp, data.Z, zp, const])
    span_perm = np.column_stack([data.x, data.Z, zp, const])
    eye = np.eye(n)
    ro = (eye - hat_matrix(span_orig)) @ data.y
    rp = (eye - hat_matrix(span_perm)) @ data.y
    return float(ro @ ro), float(rp @ rp)


# ---------------------------------------------------------------- oracles


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("intercept", [True, False])
def test_pair_matches_hat_matrix_oracle(seed, intercept):
    data = make_data(seed, intercept=intercept)
    rng = np.random.default_rng(seed + 100)
    for _ in range(5):
        perm = Permutation(rng.permutation(data.n))
        stat = palmrt_pair(data, perm)
        want_o, want_p = oracle_pair(data, perm)
        assert stat.original == pytest.approx(want_o, rel=1e-9, abs=1e-9)
        assert stat.permuted == pytest.approx(want_p, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("variant", ["residual", "coefficient", "inner"])
@pytest.mark.parametrize("kwargs", [
    {}, {"intercept": False}, {"deficient": True}, {"p": 0}, {"n": 9, "p": 4},
])
def test_engine_matches_reference_path(variant, kwargs):
    data = make_data(7, **kwargs)
    rng = np.random.default_rng(11)
    perms = [Permutation(rng.permutation(data.n)) for _ in range(40)]
    report = palmrt_test(data, variant=variant, keep_ledger=True, permutations=perms)
    assert report.B == 40 and report.seed is None
    for stat, perm in zip(report.ledger, perms):
        ref = palmrt_pair(data, perm, variant=variant)
        assert stat.original == pytest.approx(ref.original, rel=1e-8, abs=1e-10)
        assert stat.permuted == pytest.approx(ref.permuted, rel=1e-8, abs=1e-10)
        assert stat.omega == ref.omega


def test_bivariate_function_realizes_the_pair():
    """Diagonal evaluations of the two-permutation statistic give the pair.

    The residual form realizes (original, permuted) at
    ((id, pi), (pi, id)); the coefficient and inner forms realize it in
    the swapped order, which is equally valid because the uniform law
    on permutations is closed under inversion.
    """
    data = make_data(3)
    rng = np.random.default_rng(5)
    pi0 = identity(data.n)
    for variant, swap in (("residual", False), ("coefficient", True), ("inner", True)):
        for _ in range(5):
            pi = Permutation(rng.permutation(data.n))
            stat = palmrt_pair(data, pi, variant=variant)
            at_0b = bivariate_statistic(pi0, pi, data.x, data.Z, data.y, variant=variant)
            at_b0 = bivariate_statistic(pi, pi0, data.x, data.Z, data.y, variant=variant)
            want = (at_b0, at_0b) if swap else (at_0b, at_b0)
            assert stat.original == pytest.approx(want[0], rel=1e-9, abs=1e-12)
            assert stat.permuted == pytest.approx(want[1], rel=1e-9, abs=1e-12)


def test_transferability_identity_holds():
    rng = np.random.default_rng(9)
    n, p = 15, 2
    x = rng.standard_normal(n)
    z = rng.standard_normal((n, p))
    eps = rng.standard_cauchy(n)
    for variant in ("residual", "coefficient", "inner"):
        assert transferability_check(x, z, eps, trials=100, seed=1, tol=1e-8,
                                     variant=variant)


# ------------------------------------------------------- exact structure


def test_identity_permutations_give_exact_ties():
    data = make_data(0)
    perms = [identity(data.n)] * 10
    report = palmrt_test(data, permutations=perms, keep_ledger=True)
    assert all(s.omega == 0.5 for s in report.ledger)
    assert report.p_value == pytest.approx((1 + 5.0) / 11.0)
    assert any("tied" in w for w in report.warnings)


def test_feature_inside_covariate_span_ties_everything():
    rng = np.random.default_rng(2)
    n = 16
    z = rng.standard_normal((n, 2))
    data = Dataset(y=rng.standard_normal(n), x=z[:, 0], Z=z)
    report = palmrt_test(data, B=50, seed=0, keep_ledger=True)
    assert all(s.omega == 0.5 for s in report.ledger)
    assert report.p_value == pytest.approx((1 + 25.0) / 51.0)


def test_pvalue_bounds_and_reproducibility():
    data = make_data(4, beta=3.0)
    rep1 = palmrt_test(data, B=99, seed=5)
    rep2 = palmrt_test(data, B=99, seed=5)
    assert rep1.p_value == rep2.p_value
    assert rep1.p_value >= 1.0 / 100.0
    null = make_data(4, beta=0.0)
    for seed in range(3):
        assert palmrt_test(null, B=49, seed=seed).p_value <= 1.0


def test_scale_invariance_of_omegas():
    data = make_data(6)
    perms = [Permutation(np.random.default_rng(s).permutation(data.n)) for s in range(30)]
    base = palmrt_test(data, permutations=perms, keep_ledger=True)
    for c in (3.0, 1e-6, 1e6):
        scaled = Dataset(y=c * data.y, x=data.x, Z=data.Z)
        rep = palmrt_test(scaled, permutations=perms, keep_ledger=True)
        assert [s.omega for s in rep.ledger] == [s.omega for s in base.ledger]
        assert rep.p_value == base.p_value


def test_degenerate_sample_size_warns_and_stays_conservative():
    rng = np.random.default_rng(8)
    n, p = 7, 3                      # pooled columns: 2p + 1 + 1 = 8 > n
    data = Dataset(y=rng.standard_normal(n), x=rng.standard_normal(n),
                   Z=rng.standard_normal((n, p)))
    report = palmrt_test(data, B=60, seed=0)
    assert any("pooled span" in w for w in report.warnings)
    assert report.p_value == pytest.approx((1 + 30.0) / 61.0)


def test_variant_and_direction_validation():
    data = make_data(0, n=8, p=1)
    with pytest.raises(InvalidInputError):
        palmrt_test(data, B=5, variant="nope")
    with pytest.raises(InvalidInputError):
        palmrt_test(data, B=5, direction="sideways")
    with pytest.raises(InvalidInputError):
        palmrt_test(data, B=0)
    with pytest.raises(InvalidInputError):
        palmrt_pair(data, identity(5))


# ------------------------------------------------- enumeration vs sampling


def test_exhaustive_enumeration_agrees_with_sampling():
    """Monte Carlo mean pair score converges to the exhaustive mean."""
    data = make_data(13, n=5, p=1, beta=1.0)
    full = palmrt_test(data, permutations=enumerate_all(5), keep_ledger=True)
    omegas = np.array([s.omega for s in full.ledger])
    mc = palmrt_test(data, B=10_000, seed=3, keep_ledger=True)
    mc_omegas = np.array([s.omega for s in mc.ledger])
    se = omegas.std(ddof=0) / np.sqrt(mc_omegas.size)
    assert abs(mc_omegas.mean() - omegas.mean()) <= 3 * se + 1e-12


def test_variant_reparameterizations_coincide_without_covariates():
    """With no covariates and no intercept all three forms order pairs alike."""
    rng = np.random.default_rng(21)
    n = 10
    x = rng.standard_normal(n)
    data = Dataset(y=0.7 * x + rng.standard_normal(n), x=x, Z=None, intercept=False)
    ledgers = {}
    for variant in ("residual", "coefficient", "inner"):
        rep = palmrt_test(data, B=200, seed=9, variant=variant, keep_ledger=True)
        ledgers[variant] = [s.omega for s in rep.ledger]
    assert ledgers["residual"] == ledgers["inner"] == ledgers["coefficient"]


def test_coefficient_variant_tracks_residual_decisions():
    """The two statistics usually order pairs the same way on real designs."""
    agree = total = 0
    for seed in range(50):
        data = make_data(seed, n=25, p=2, beta=0.8)
        pa = palmrt_test(data, B=60, seed=seed, variant="residual").p_value
        pb = palmrt_test(data, B=60, seed=seed, variant="coefficient").p_value
        agree += (pa <= 0.05) == (pb <= 0.05)
        total += 1
    assert agree / total >= 0.95


def test_directional_coefficient_variant():
    data = make_data(30, n=40, p=2, beta=2.5)
    pos = palmrt_test(data, B=400, seed=1, variant="coefficient", direction="positive")
    neg = palmrt_test(data, B=400, seed=1, variant="coefficient", direction="negative")
    assert pos.p_value < 0.05
    assert neg.p_value > 0.5


# ------------------------------------------------------ combinatorial bound


def row_scores(t: np.ndarray) -> np.ndarray:
    """Row sums of the score matrix W built from a square statistic table."""
    w = np.where(t.T > t, 1.0, 0.0) + 0.5 * (t.T == t)
    np.fill_diagonal(w, 1.0)
    return w.sum(axis=1)


@pytest.mark.parametrize("kind", ["continuous", "ties", "constant"])
def test_row_sum_bound_over_random_matrices(kind):
    """At most a 2*alpha fraction of rows can look alpha-significant.

    This is the counting fact behind the doubled-level guarantee; it
    must hold for every real matrix, so it is checked on random tables
    with and without ties.
    """
    rng = np.random.default_rng(hash(kind) % 2 ** 31)
    m = 12
    alphas = np.concatenate([np.linspace(0.01, 0.99, 20),
                             np.arange(1, m + 1) / m])
    for _ in range(340):
        if kind == "continuous":
            t = rng.standard_normal((m, m))
        elif kind == "ties":
            t = rng.integers(0, 3, size=(m, m)).astype(float)
        else:
            t = np.full((m, m), 7.0)
        sums = row_scores(t)
        for alpha in alphas:
            assert np.count_nonzero(sums <= m * alpha) < 2 * alpha * m


def test_omega_values_edge_cases():
    inf = np.inf
    orig = np.array([1.0, 1.0, 0.0, inf, 1.0, inf])
    perm = np.array([2.0, 1.0, 0.0, inf, inf, 1.0])
    out = omega_values(orig, perm)
    np.testing.assert_array_equal(out, [1.0, 0.5, 0.5, 0.5, 1.0, 0.0])
    # A relative near-tie collapses to 1/2.
    assert omega_values(np.array([1.0]), np.array([1.0 + 1e-12]))[0] == 0.5


def test_compose_convention_used_by_transferability():
    """T(pi1, pi2; eps_sigma) relabels through compose(pi, inverse(sigma))."""
    rng = np.random.default_rng(17)
    n = 8
    x, eps = rng.standard_normal(n), rng.standard_normal(n)
    z = rng.standard_normal((n, 1))
    pi1, pi2, sigma = (Permutation(rng.permutation(n)) for _ in range(3))
    lhs = bivariate_statistic(pi1, pi2, x, z, apply_rows(sigma, eps))
    rhs = bivariate_statistic(compose(pi1, inverse(sigma)), compose(pi2, inverse(sigma)),
                              x, z, eps)
    assert lhs == pytest.approx(rhs, rel=1e-9)
