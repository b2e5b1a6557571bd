"""Reading data tables and writing analysis output.

Input is a delimited text table with a header row.  Missing values are
dropped per analysis: a row is excluded only when one of the columns
that analysis actually references is missing, so different features can
use different subsets of the same table.

Output is a JSON document (records plus the configuration that produced
them) and an optional flat CSV mirror of the records.  JSON is written
with sorted keys and fixed indentation so identical runs produce
byte-identical files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import InvalidInputError

NA_MARKERS = frozenset({"", "na", "n/a", "nan", "null", "none"})


@dataclass(frozen=True)
class ModelSpec:
    """Columns of one model: response, features to test, shared covariates.

    Interactions are (a, b) column-name pairs whose elementwise product
    joins the covariate set.  Each feature is tested separately against
    the same covariates.
    """

    response: str
    features: tuple
    covariates: tuple = ()
    interactions: tuple = ()
    intercept: bool = True

    def __post_init__(self):
        if not self.features:
            raise InvalidInputError("at least one feature column is required")
        overlap = set(self.features) & set(self.covariates)
        if overlap:
            raise InvalidInputError(f"columns listed as both feature and covariate: {sorted(overlap)}")
        if self.response in self.features or self.response in self.covariates:
            raise InvalidInputError(f"response column {self.response!r} reused as a predictor")

    def columns_for(self, feature: str) -> list:
        """Every table column the analysis of ``feature`` touches."""
        cols = [self.response, feature]
        cols += [c for c in self.covariates if c not in cols]
        for a, b in self.interactions:
            for c in (a, b):
                if c not in cols:
                    cols.append(c)
        return cols


@dataclass(frozen=True)
class Analysis:
    """One feature's design, extracted from the table after row filtering."""

    feature: str
    y: np.ndarray
    x: np.ndarray
    Z: np.ndarray
    n_used: int
    n_dropped: int


def load_table(path) -> pd.DataFrame:
    """Read a delimited table with every cell kept as a string."""
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except OSError:
        raise
    except Exception as exc:
        raise InvalidInputError(f"cannot parse {path}: {exc}") from exc
    if df.shape[1] == 0:
        raise InvalidInputError(f"{path} has no columns")
    return df


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in NA_MARKERS


def _numeric_column(df: pd.DataFrame, name: str, keep: np.ndarray) -> np.ndarray:
    raw = df[name].to_numpy()
    out = np.empty(int(keep.sum()))
    for slot, i in enumerate(np.flatnonzero(keep)):
        text = raw[i].strip()
        try:
            out[slot] = float(text)
        except ValueError:
            # Row numbering matches the file: header is row 1.
            raise InvalidInputError(
                f"non-numeric value {text!r} at row {i + 2}, column {name!r}"
            ) from None
    return out


def extract_analyses(df: pd.DataFrame, spec: ModelSpec) -> list:
    """Per-feature designs with listwise deletion over referenced columns."""
    wanted = set(spec.columns_for(spec.features[0]))
    for f in spec.features[1:]:
        wanted |= set(spec.columns_for(f))
    missing = sorted(wanted - set(df.columns))
    if missing:
        raise InvalidInputError(f"columns not in table: {missing}")

    na_mask = {c: df[c].map(_is_missing).to_numpy() for c in wanted}
    analyses = []
    for feature in spec.features:
        cols = spec.columns_for(feature)
        keep = ~np.logical_or.reduce([na_mask[c] for c in cols])
        n_used = int(keep.sum())
        if n_used == 0:
            raise InvalidInputError(
                f"no complete rows for feature {feature!r} after dropping missing values"
            )
        values = {c: _numeric_column(df, c, keep) for c in cols}
        z_cols = [values[c] for c in spec.covariates]
        z_cols += [values[a] * values[b] for a, b in spec.interactions]
        z = np.column_stack(z_cols) if z_cols else np.empty((n_used, 0))
        analyses.append(Analysis(
            feature=feature, y=values[spec.response], x=values[feature], Z=z,
            n_used=n_used, n_dropped=len(df) - n_used,
        ))
    return analyses


def benjamini_hochberg(pvals, q: float):
    """Step-up FDR control: (reject flags, adjusted p-values)."""
    p = np.asarray(pvals, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise InvalidInputError("benjamini_hochberg needs a non-empty 1-d p-value list")
    if not 0.0 < q < 1.0:
        raise InvalidInputError(f"FDR level must be in (0, 1), got {q}")
    m = p.size
    order = np.argsort(p, kind="stable")
    ranked = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum.accumulate(ranked[::-1])[::-1]
    adj = np.minimum(adj, 1.0)
    p_adj = np.empty(m)
    p_adj[order] = adj
    reject = p_adj <= q
    return reject, p_adj


def json_document(records, config: dict) -> str:
    return json.dumps({"config": config, "records": records},
                      indent=2, sort_keys=True) + "\n"


def write_records_json(records, config: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write(json_document(records, config))


_RECORD_FIELDS = ("method", "feature", "n_used", "B", "seed", "p_value",
                  "p_adjusted", "bh_reject", "ci_kind", "ci_lo", "ci_hi", "warnings")


def _flatten_record(rec: dict) -> dict:
    plain = ("method", "feature", "n_used", "B", "seed", "p_value", "p_adjusted", "bh_reject")
    flat = {k: rec.get(k, "") for k in plain}
    ci = rec.get("ci")
    flat["ci_kind"] = ci["kind"] if ci else ""
    flat["ci_lo"] = ci["lo"] if ci else ""
    flat["ci_hi"] = ci["hi"] if ci else ""
    flat["warnings"] = "; ".join(rec.get("warnings", ()))
    return flat


def records_csv_text(records) -> str:
    import io as _io

    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_RECORD_FIELDS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow(_flatten_record(rec))
    return buf.getvalue()


def write_records_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(records_csv_text(records))


def write_result_json(results, path) -> None:
    """Serialize one or more ExperimentResult objects."""
    docs = [r.to_dict() for r in results]
    with open(path, "w") as fh:
        fh.write(json.dumps({"results": docs}, indent=2, sort_keys=True) + "\n")


def write_result_csv(results, path) -> None:
    rows = []
    for r in results:
        rows.extend(r.flat_rows())
    if not rows:
        raise InvalidInputError("no rows to write")
    names = list(rows[0])
    for row in rows[1:]:
        names += [k for k in row if k not in names]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=names, restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
