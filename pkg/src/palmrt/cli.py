"""Command line interface.

Three subcommands: ``test`` runs hypothesis tests on a data table,
``ci`` inverts the permutation test into confidence intervals, and
``simulate`` executes a JSON-described experiment plan, writing tables
and figures.

Exit codes: 0 on success, 2 for invalid input or unreadable files,
3 when an internal consistency check fails.
"""

from __future__ import annotations

import functools
import json
import os
import sys

import click

from . import io as pio
from .baselines import braak_test, f_test, fl_test, kennedy_test, perm_test
from .ci import invert_ci
from .core import Dataset, VARIANTS, palmrt_test
from .errors import InvalidInputError, PalmrtError
from .plots import render_figures
from .simulate import DesignSpec, NoiseSpec, run_ci_coverage, run_power, run_type1

_METHOD_FNS = {
    "palmrt": palmrt_test, "ftest": f_test, "perm": perm_test,
    "fl": fl_test, "kennedy": kennedy_test, "braak": braak_test,
}


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except InvalidInputError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except PalmrtError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)
    return wrapper


def _split_list(text):
    return tuple(part.strip() for part in text.split(",") if part.strip()) if text else ()


def _parse_interactions(text):
    pairs = []
    for chunk in _split_list(text):
        bits = chunk.split(":")
        if len(bits) != 2 or not bits[0] or not bits[1]:
            raise InvalidInputError(f"interaction {chunk!r} must look like colA:colB")
        pairs.append((bits[0], bits[1]))
    return tuple(pairs)


def _model_spec(response, feature, features, covariates, interactions, intercept):
    if feature and features:
        raise InvalidInputError("use either repeated --feature or one --features list, not both")
    feats = tuple(feature) if feature else _split_list(features)
    return pio.ModelSpec(
        response=response,
        features=feats,
        covariates=_split_list(covariates),
        interactions=_parse_interactions(interactions),
        intercept=intercept,
    )


def _emit(records, config, out, fmt):
    doc = pio.json_document(records, config)
    if out:
        pio.write_records_json(records, config, out)
        stem, _ = os.path.splitext(out)
        pio.write_records_csv(records, stem + ".csv")
        click.echo(f"wrote {out} and {stem}.csv")
    elif fmt == "csv":
        click.echo(pio.records_csv_text(records), nl=False)
    else:
        click.echo(doc, nl=False)


def _data_options(fn):
    fn = click.option("--data", required=True, type=click.Path(), help="input table (CSV)")(fn)
    fn = click.option("--response", required=True, help="response column")(fn)
    fn = click.option("--feature", multiple=True, help="feature column to test (repeatable)")(fn)
    fn = click.option("--features", default="", help="comma separated feature columns")(fn)
    fn = click.option("--covariates", default="", help="comma separated covariate columns")(fn)
    fn = click.option("--interactions", default="",
                      help="comma separated colA:colB product terms added to the covariates")(fn)
    fn = click.option("--intercept/--no-intercept", default=True, show_default=True)(fn)
    fn = click.option("--permutations", "-B", "n_perm", default=2000, show_default=True,
                      help="number of permutation draws")(fn)
    fn = click.option("--seed", default=0, show_default=True)(fn)
    fn = click.option("--out", default=None, type=click.Path(),
                      help="write JSON here (plus a CSV mirror); default prints to stdout")(fn)
    fn = click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json",
                      show_default=True, help="stdout format when --out is not given")(fn)
    return fn


@click.group(context_settings={"auto_envvar_prefix": "PALMRT"})
@click.version_option(package_name="palmrt")
def main():
    """Permutation tests for one linear-model coefficient."""


@main.command("test")
@_data_options
@click.option("--method", "methods", multiple=True,
              type=click.Choice(sorted(_METHOD_FNS)), default=("palmrt",),
              show_default=True, help="test to run (repeatable)")
@click.option("--variant", type=click.Choice(list(VARIANTS)), default="residual",
              show_default=True, help="paired statistic used by the palmrt method")
@click.option("--bh-fdr", default=None, type=float,
              help="apply Benjamini-Hochberg across features at this FDR, per method")
@_guarded
def test_cmd(data, response, feature, features, covariates, interactions, intercept,
             n_perm, seed, out, fmt, methods, variant, bh_fdr):
    """Test each feature's coefficient against zero."""
    spec = _model_spec(response, feature, features, covariates, interactions, intercept)
    table = pio.load_table(data)
    analyses = pio.extract_analyses(table, spec)

    records = []
    for name in methods:
        for an in analyses:
            ds = Dataset(y=an.y, x=an.x, Z=an.Z, intercept=intercept)
            if name == "palmrt":
                rep = palmrt_test(ds, B=n_perm, seed=seed, variant=variant)
            elif name == "ftest":
                rep = f_test(ds)
            else:
                rep = _METHOD_FNS[name](ds, B=n_perm, seed=seed)
            records.append({
                "method": name, "feature": an.feature, "n_used": an.n_used,
                "B": rep.B, "seed": rep.seed, "p_value": rep.p_value,
                "ci": None, "warnings": list(rep.warnings),
            })
    if bh_fdr is not None:
        _apply_bh(records, methods, bh_fdr, n_perm)

    config = {
        "command": "test", "data": str(data), "response": response,
        "features": list(spec.features), "covariates": list(spec.covariates),
        "interactions": [list(p) for p in spec.interactions], "intercept": intercept,
        "methods": list(methods), "variant": variant, "B": n_perm, "seed": seed,
        "bh_fdr": bh_fdr,
    }
    _emit(records, config, out, fmt)


def _apply_bh(records, methods, q, n_perm):
    for name in methods:
        group = [r for r in records if r["method"] == name]
        reject, p_adj = pio.benjamini_hochberg([r["p_value"] for r in group], q)
        floor = 1.0 / (n_perm + 1)
        if name != "ftest" and floor > q / len(group):
            for r in group:
                r["warnings"].append(
                    f"permutation p-value floor {floor:.4g} exceeds the per-test "
                    f"FDR budget {q / len(group):.4g}; increase --permutations"
                )
        for r, rej, pa in zip(group, reject, p_adj):
            r["bh_reject"] = bool(rej)
            r["p_adjusted"] = float(pa)


@main.command("ci")
@_data_options
@click.option("--alpha", default=0.05, show_default=True, help="miscoverage level")
@click.option("--fallback", type=click.Choice(["none", "normal"]), default="none",
              show_default=True, help="interval reported when the inversion is empty")
@_guarded
def ci_cmd(data, response, feature, features, covariates, interactions, intercept,
           n_perm, seed, out, fmt, alpha, fallback):
    """Confidence interval for each feature's coefficient."""
    spec = _model_spec(response, feature, features, covariates, interactions, intercept)
    table = pio.load_table(data)
    analyses = pio.extract_analyses(table, spec)

    records = []
    for an in analyses:
        ds = Dataset(y=an.y, x=an.x, Z=an.Z, intercept=intercept)
        interval, _ = invert_ci(ds, B=n_perm, seed=seed, alpha=alpha, fallback=fallback)
        rep = palmrt_test(ds, B=n_perm, seed=seed)
        warnings = list(rep.warnings)
        if interval.fallback_used:
            warnings.append("inversion interval was empty; reporting the normal fallback")
        records.append({
            "method": "palmrt", "feature": an.feature, "n_used": an.n_used,
            "B": n_perm, "seed": seed, "p_value": rep.p_value,
            "ci": {"kind": interval.kind, "lo": interval.lo, "hi": interval.hi},
            "warnings": warnings,
        })

    config = {
        "command": "ci", "data": str(data), "response": response,
        "features": list(spec.features), "covariates": list(spec.covariates),
        "interactions": [list(p) for p in spec.interactions], "intercept": intercept,
        "alpha": alpha, "fallback": fallback, "B": n_perm, "seed": seed,
    }
    _emit(records, config, out, fmt)


_RUNNERS = {"type1": run_type1, "power": run_power, "ci_coverage": run_ci_coverage}


def _experiment_from(entry: dict, index: int):
    entry = dict(entry)
    kind = entry.pop("kind", None)
    runner = _RUNNERS.get(kind)
    if runner is None:
        raise InvalidInputError(
            f"experiment {index}: kind must be one of {sorted(_RUNNERS)}, got {kind!r}"
        )
    try:
        design = DesignSpec(**entry.pop("design"))
        noise = NoiseSpec(entry.pop("noise"))
    except (KeyError, TypeError) as exc:
        raise InvalidInputError(f"experiment {index}: bad design/noise block: {exc}") from exc
    for key in ("methods", "alphas", "targets"):
        if key in entry and isinstance(entry[key], list):
            entry[key] = tuple(entry[key])
    try:
        return runner(design, noise, **entry)
    except TypeError as exc:
        raise InvalidInputError(f"experiment {index}: {exc}") from exc


@main.command("simulate")
@click.option("--config", "config_path", required=True, type=click.Path(),
              help="JSON experiment plan with an 'experiments' list")
@click.option("--out", "outdir", required=True, type=click.Path(), help="output directory")
@click.option("--figures/--no-figures", default=True, show_default=True)
@_guarded
def simulate_cmd(config_path, outdir, figures):
    """Run the experiments described in a JSON plan."""
    with open(config_path) as fh:
        try:
            plan = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"cannot parse {config_path}: {exc}") from exc
    entries = plan.get("experiments")
    if not isinstance(entries, list) or not entries:
        raise InvalidInputError("plan must contain a non-empty 'experiments' list")

    os.makedirs(outdir, exist_ok=True)
    results = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict):
            raise InvalidInputError(f"experiment {i} must be a JSON object")
        results.append(_experiment_from(entry, i))
        click.echo(f"experiment {i} ({results[-1].kind}) done")

    pio.write_result_json(results, os.path.join(outdir, "results.json"))
    pio.write_result_csv(results, os.path.join(outdir, "results.csv"))
    written = [os.path.join(outdir, "results.json"), os.path.join(outdir, "results.csv")]
    if figures:
        written += render_figures(results, outdir)
    for path in written:
        click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
