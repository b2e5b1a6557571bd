"""Monte-Carlo harness: designs, noises, power calibration, experiment runners.

Designs are drawn once per experiment and held fixed across noise
replications (pass ``redraw_design=True`` to redraw per replication).
Signal strengths are not chosen by hand: ``calibrate_beta`` bisects the
coefficient until the parametric F test hits a requested power, so
power comparisons across methods happen at a controlled operating
point.

Every runner is a pure function of its arguments.  Replication r uses
a generator seeded by ``SeedSequence(seed, spawn_key=(r,))``, drawing
the noise vector first and the permutation pool second, and all methods
within a replication share that pool.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.stats

from .baselines import _spans, _stat_rows, braak_test, f_test, fl_test, kennedy_test, perm_test
from .ci import invert_ci, normal_ci
from .core import DEFAULT_TIE_TOL, Dataset, palmrt_test
from .errors import CalibrationError, InvalidInputError
from .linalg import DEFAULT_RANK_TOL, Basis, residual_vector

DESIGNS = ("gaussian", "cauchy", "anova", "paired")
_SPEC_NAMES = DESIGNS + ("custom",)
NOISES = ("gaussian", "cauchy", "multinomial")
METHODS = ("palmrt", "ftest", "perm", "fl", "kennedy", "braak")

_SPIKE = 1e4


@dataclass(frozen=True)
class DesignSpec:
    """A named design family at a given size; ``seed`` fixes the draw."""

    name: str
    n: int
    p: int
    seed: int = 0

    def __post_init__(self):
        if self.name not in _SPEC_NAMES:
            raise InvalidInputError(f"unknown design {self.name!r}; expected one of {DESIGNS}")
        if self.p < 0 or self.n < 1:
            raise InvalidInputError(f"bad design size n = {self.n}, p = {self.p}")
        if self.name in ("anova", "paired") and self.n < self.p + 2:
            raise InvalidInputError(f"{self.name} design needs n >= p + 2")


@dataclass(frozen=True)
class NoiseSpec:
    name: str

    def __post_init__(self):
        if self.name not in NOISES:
            raise InvalidInputError(f"unknown noise {self.name!r}; expected one of {NOISES}")


@dataclass(frozen=True)
class SignalSpec:
    """Either an explicit coefficient or a target F-test power."""

    beta: float | None = None
    target_power: float | None = None

    def __post_init__(self):
        if (self.beta is None) == (self.target_power is None):
            raise InvalidInputError("give exactly one of beta or target_power")


@dataclass
class ExperimentResult:
    """Flat result table plus the metadata that produced it."""

    kind: str
    design: DesignSpec
    noise: NoiseSpec
    B: int
    reps: int
    seed: int
    meta: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "design": {"name": self.design.name, "n": self.design.n,
                       "p": self.design.p, "seed": self.design.seed},
            "noise": {"name": self.noise.name},
            "B": self.B,
            "reps": self.reps,
            "seed": self.seed,
            "meta": self.meta,
            "rows": self.rows,
        }

    def flat_rows(self) -> list:
        """Rows with the experiment metadata folded in, ready for CSV."""
        head = {
            "kind": self.kind, "design": self.design.name, "n": self.design.n,
            "p": self.design.p, "noise": self.noise.name, "B": self.B,
            "reps": self.reps, "seed": self.seed,
        }
        return [{**head, **row} for row in self.rows]


def gen_design(spec: DesignSpec):
    """Draw (x, Z) for a DesignSpec; x is the feature, Z the p covariates."""
    if spec.name == "custom":
        raise InvalidInputError("custom designs carry their own arrays; nothing to generate")
    rng = np.random.default_rng(spec.seed)
    n, p = spec.n, spec.p
    if spec.name == "gaussian":
        m = rng.standard_normal((n, p + 1))
    elif spec.name == "cauchy":
        m = rng.standard_cauchy((n, p + 1))
    elif spec.name == "anova":
        m = np.zeros((n, p + 1))
        width = n // (p + 1)
        for j in range(p + 1):
            m[j * width:(j + 1) * width, j] = 1.0
    else:  # paired
        m = np.zeros((n, p + 1))
        m[0, :] = 1.0
        for j in range(p + 1):
            m[j + 1, j] = 1.0
    return m[:, 0], m[:, 1:]


def _draw_noise(spec: NoiseSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.name == "gaussian":
        return rng.standard_normal(n)
    if spec.name == "cauchy":
        return rng.standard_cauchy(n)
    eps = rng.standard_normal(n)
    idx = int(rng.integers(n))
    sign = 1.0 if rng.integers(2) == 1 else -1.0
    eps[idx] += _SPIKE * sign
    return eps


def gen_noise(spec: NoiseSpec, n: int, seed: int = 0) -> np.ndarray:
    return _draw_noise(spec, n, np.random.default_rng(seed))


def _resolve_design(design, default_seed: int = 0):
    """Accept a DesignSpec or an explicit (x, Z) pair."""
    if isinstance(design, DesignSpec):
        x, z = gen_design(design)
        return design, x, z
    x, z = design
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    spec = DesignSpec(name="custom", n=x.shape[0], p=z.shape[1], seed=default_seed)
    return spec, x, z


def _rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def _perm_pool(rng: np.random.Generator, B: int, n: int) -> np.ndarray:
    return rng.permuted(np.tile(np.arange(n), (B, 1)), axis=1)


def _method_callables(methods, B, tie_tol, rank_tol):
    """Normalize the methods argument to an ordered name -> callable map.

    Callables take (data, pool) and return a p-value; a mapping input
    passes through untouched so tests can inject custom methods.
    """
    if isinstance(methods, dict):
        return dict(methods)
    out = {}
    for name in methods:
        if name == "palmrt":
            out[name] = lambda d, pool: palmrt_test(
                d, permutations=pool, tie_tol=tie_tol, rank_tol=rank_tol).p_value
        elif name == "ftest":
            out[name] = lambda d, pool: f_test(d, rank_tol=rank_tol).p_value
        elif name in ("perm", "fl", "kennedy", "braak"):
            fn = {"perm": perm_test, "fl": fl_test,
                  "kennedy": kennedy_test, "braak": braak_test}[name]
            out[name] = (lambda f: lambda d, pool: f(
                d, permutations=pool, tie_tol=tie_tol, rank_tol=rank_tol).p_value)(fn)
        else:
            raise InvalidInputError(f"unknown method {name!r}; expected one of {METHODS}")
    return out


def _simulate_pvalues(design, noise: NoiseSpec, beta: float, methods, reps: int,
                      seed: int, B: int, redraw_design: bool, tie_tol: float,
                      rank_tol: float):
    """p-value matrix (reps, n_methods) plus the resolved design spec."""
    spec, x, z = _resolve_design(design)
    calls = _method_callables(methods, B, tie_tol, rank_tol)
    needs_pool = any(name != "ftest" for name in calls)
    pvals = np.empty((reps, len(calls)))
    for rep in range(reps):
        rng = _rep_rng(seed, rep)
        if redraw_design and isinstance(design, DesignSpec):
            fresh = replace(design, seed=int(rng.integers(2 ** 63)))
            x, z = gen_design(fresh)
        eps = _draw_noise(noise, spec.n, rng)
        y = beta * x + eps
        data = Dataset(y=y, x=x, Z=z)
        pool = _perm_pool(rng, B, spec.n) if needs_pool else None
        for j, fn in enumerate(calls.values()):
            pvals[rep, j] = fn(data, pool)
    return spec, list(calls), pvals


def run_type1(design, noise: NoiseSpec, methods=("palmrt",), alphas=(0.05,),
              reps: int = 2000, seed: int = 0, B: int = 2000, *,
              redraw_design: bool = False, tie_tol: float = DEFAULT_TIE_TOL,
              rank_tol: float = DEFAULT_RANK_TOL) -> ExperimentResult:
    """Null rejection rates on pure noise (y = eps), per method and alpha."""
    spec, names, pvals = _simulate_pvalues(design, noise, 0.0, methods, reps, seed, B,
                                           redraw_design, tie_tol, rank_tol)
    rows = []
    for j, name in enumerate(names):
        for alpha in alphas:
            hits = int(np.sum(pvals[:, j] <= alpha))
            rate = hits / reps
            rows.append({
                "method": name, "alpha": float(alpha), "rejections": hits,
                "rate": rate, "se": (rate * (1 - rate) / reps) ** 0.5,
                "ratio": rate / alpha,
            })
    return ExperimentResult(kind="type1", design=spec, noise=noise, B=B, reps=reps,
                            seed=seed, meta={"alphas": [float(a) for a in alphas]},
                            rows=rows)


def calibrate_beta(design, noise: NoiseSpec, target_power: float, alpha: float = 0.05,
                   reps: int = 2000, seed: int = 0, *, se_band: float = 2.0,
                   rank_tol: float = DEFAULT_RANK_TOL, max_expand: int = 60,
                   max_iter: int = 200) -> float:
    """Coefficient at which the F test reaches ``target_power``.

    Bisects on a Monte-Carlo power curve that reuses one pre-drawn noise
    block (common random numbers), stopping once the estimate is within
    ``se_band`` binomial standard errors of the target.  Raises
    ``CalibrationError`` when no bracket exists or the curve refuses to
    cross the target, which flags a non-monotone or degenerate setup.
    """
    if not 0.0 <= target_power < 1.0:
        raise InvalidInputError(f"target power must be in [0, 1), got {target_power}")
    if target_power == 0.0:
        return 0.0
    if target_power <= alpha:
        raise InvalidInputError("target power at or below alpha is not a usable target")
    spec, x, z = _resolve_design(design)
    data_probe = Dataset(y=np.zeros(spec.n), x=x, Z=z)
    qz, qxz, df = _spans(data_probe, rank_tol)

    xt = residual_vector(Basis(np.hstack([z, np.ones((spec.n, 1))]), rank_tol), x)
    scale = float(np.linalg.norm(xt))
    if scale <= rank_tol * max(np.linalg.norm(x), 1.0):
        raise CalibrationError("feature is aliased with the covariates; F power is flat")

    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xCA11B,)))
    eps = np.stack([_draw_noise(noise, spec.n, rng) for _ in range(reps)])

    def power(beta: float) -> float:
        rows = beta * x[None, :] + eps
        scale = float(np.mean(np.einsum("bn,bn->b", rows, rows)))
        stats = _stat_rows(qz, qxz, df, rows, scale)
        pv = scipy.stats.f.sf(stats, 1, df)
        return float(np.mean(pv <= alpha))

    sigma = 1.4826 * float(np.median(np.abs(eps))) + 1e-12
    lo, hi = 0.0, 2.0 * sigma / scale * spec.n ** 0.5
    p_hi = power(hi)
    expands = 0
    while p_hi < target_power:
        expands += 1
        if expands > max_expand:
            raise CalibrationError(
                f"cannot bracket target power {target_power}: power({hi:.3g}) = {p_hi:.3f}"
            )
        lo, hi = hi, hi * 4.0
        p_hi = power(hi)

    band = se_band * (target_power * (1.0 - target_power) / reps) ** 0.5
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        pm = power(mid)
        if abs(pm - target_power) <= band:
            return mid
        if pm < target_power:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(hi, 1.0):
            break
    raise CalibrationError(
        f"bisection exhausted without entering the +/-{se_band} SE band around "
        f"{target_power}; power jumped from {power(lo):.3f} to {power(hi):.3f}"
    )


def run_power(design, noise: NoiseSpec, methods=("palmrt", "ftest"),
              targets=(0.7,), alpha: float = 0.05, reps: int = 2000, seed: int = 0,
              B: int = 2000, *, calib_reps: int = 2000,
              tie_tol: float = DEFAULT_TIE_TOL,
              rank_tol: float = DEFAULT_RANK_TOL) -> ExperimentResult:
    """Power at coefficients calibrated to F-test target powers.

    The result's ``meta["ratios"]`` maps each non-reference method at
    each target to the ratio of the paired test's power over that
    method's power.
    """
    if not targets:
        raise InvalidInputError("run_power needs at least one target power")
    rows = []
    spec = None
    for target in targets:
        beta = calibrate_beta(design, noise, float(target), alpha, reps=calib_reps,
                              seed=seed, rank_tol=rank_tol)
        spec, names, pvals = _simulate_pvalues(design, noise, beta, methods, reps,
                                               seed, B, False, tie_tol, rank_tol)
        for j, name in enumerate(names):
            rate = float(np.mean(pvals[:, j] <= alpha))
            rows.append({
                "method": name, "target": float(target), "beta": beta,
                "power": rate, "se": (rate * (1 - rate) / reps) ** 0.5,
            })
    ratios = {}
    by_key = {(r["method"], r["target"]): r["power"] for r in rows}
    for (name, target), p_m in by_key.items():
        if name == "palmrt":
            continue
        p_palm = by_key.get(("palmrt", target))
        if p_palm is not None and p_m > 0:
            ratios[f"palmrt_over_{name}@{target}"] = p_palm / p_m
    return ExperimentResult(kind="power", design=spec, noise=noise, B=B, reps=reps,
                            seed=seed,
                            meta={"alpha": float(alpha), "targets": list(map(float, targets)),
                                  "ratios": ratios},
                            rows=rows)


def run_ci_coverage(design, noise: NoiseSpec, beta: float, alpha: float = 0.05,
                    reps: int = 2000, seed: int = 0, B: int = 2000, *,
                    tie_tol: float = DEFAULT_TIE_TOL,
                    rank_tol: float = DEFAULT_RANK_TOL) -> ExperimentResult:
    """Coverage and length of the inversion interval and the normal interval."""
    spec, x, z = _resolve_design(design)
    cover = {"inversion": 0, "normal": 0}
    lengths = {"inversion": [], "normal": []}
    n_empty = 0
    n_all = 0
    for rep in range(reps):
        rng = _rep_rng(seed, rep)
        eps = _draw_noise(noise, spec.n, rng)
        data = Dataset(y=beta * x + eps, x=x, Z=z)
        pool = _perm_pool(rng, B, spec.n)
        inv, _ = invert_ci(data, alpha=alpha, permutations=pool,
                           tie_tol=tie_tol, rank_tol=rank_tol)
        norm = normal_ci(data, alpha, rank_tol=rank_tol)
        n_empty += inv.kind == "empty"
        n_all += inv.kind == "all_reals"
        for name, interval in (("inversion", inv), ("normal", norm)):
            cover[name] += interval.contains(beta)
            lengths[name].append(interval.length)
    rows = []
    for name in ("inversion", "normal"):
        rate = cover[name] / reps
        rows.append({
            "method": name, "beta": float(beta), "coverage": rate,
            "se": (rate * (1 - rate) / reps) ** 0.5,
            "median_length": float(np.median(lengths[name])),
            "n_empty": n_empty if name == "inversion" else 0,
            "n_all_reals": n_all if name == "inversion" else 0,
        })
    return ExperimentResult(kind="ci_coverage", design=spec, noise=noise, B=B,
                            reps=reps, seed=seed,
                            meta={"alpha": float(alpha), "beta": float(beta)},
                            rows=rows)
