"""File formats: aggregate-summary JSON and selected-sample CSV microdata.

The summary file is a small JSON object:

    {"variables": [...], "n": 12345 | null, "means": [...],
     "cov": [[...], ...], "cov_divisor": "n-1" | "n" | "population"}

Covariances are normalized to the internal n-1 convention on load ("n"
divisor entries are rescaled by n / (n - 1); "population" aggregates are
taken as exact and left untouched).  CSV microdata must be complete-case;
non-numeric columns are one-hot encoded with the lexicographically first
level as the reference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError
from .statcore import SummaryStats

SUMMARY_DIVISORS = ("n-1", "n", "population")

# Relative asymmetry accepted (and symmetrized away) in a supplied covariance.
_ASYM_RTOL = 1e-6


def load_summary_file(path, pattern: str = "nonselected") -> SummaryStats:
    """Parse and validate an aggregate-summary JSON file."""
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    for key in ("variables", "means", "cov", "cov_divisor"):
        if key not in payload:
            raise DataError(f"{path}: missing required key {key!r}")
    variables = [str(v) for v in payload["variables"]]
    divisor = payload["cov_divisor"]
    if divisor not in SUMMARY_DIVISORS:
        raise DataError(f"{path}: unknown cov_divisor {divisor!r} (expected one of {SUMMARY_DIVISORS})")
    n = payload.get("n")
    if n is not None:
        n = int(n)
        if n <= 1:
            raise DataError(f"{path}: n must exceed 1, got {n}")

    means = np.asarray(payload["means"], dtype=float)
    cov = np.asarray(payload["cov"], dtype=float)
    m = len(variables)
    if means.shape != (m,) or cov.shape != (m, m):
        raise DataError(
            f"{path}: dimension mismatch ({m} variables, means {means.shape}, cov {cov.shape})"
        )
    scale = max(float(np.abs(cov).max()), 1e-300)
    asym = float(np.abs(cov - cov.T).max()) / scale
    if asym > _ASYM_RTOL:
        raise DataError(f"{path}: covariance asymmetry {asym:.3g} exceeds tolerance {_ASYM_RTOL:g}")
    cov = (cov + cov.T) / 2.0

    if divisor == "n":
        if n is None:
            raise DataError(f"{path}: cov_divisor 'n' requires the count n")
        cov = cov * (n / (n - 1))
    return SummaryStats(variables=tuple(variables), count=n, means=means, cov=cov, pattern=pattern)


def write_summary_file(stats: SummaryStats, path) -> None:
    """Write aggregates in the internal n-1 convention."""
    payload = {
        "variables": list(stats.variables),
        "n": stats.count,
        "means": [float(v) for v in stats.means],
        "cov": [[float(v) for v in row] for row in stats.cov],
        "cov_divisor": "n-1" if stats.count is not None else "population",
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


@dataclass
class PreparedData:
    """Numeric design blocks extracted from a microdata table."""

    y: np.ndarray
    z: np.ndarray
    a: np.ndarray
    z_names: tuple[str, ...]
    a_names: tuple[str, ...]
    outcome: str
    n_rows: int
    encoded: dict = field(default_factory=dict)  # original column -> dummy names


def load_microdata(path) -> pd.DataFrame:
    path = Path(path)
    try:
        return pd.read_csv(path)
    except pd.errors.ParserError as exc:
        raise DataError(f"{path}: CSV parse failure: {exc}") from exc


def _encode_columns(frame: pd.DataFrame, columns, encoded: dict):
    """Numeric passthrough plus one-hot encoding of non-numeric columns."""
    blocks, names = [], []
    for col in columns:
        series = frame[col]
        if pd.api.types.is_numeric_dtype(series):
            blocks.append(series.to_numpy(dtype=float)[:, None])
            names.append(col)
            continue
        levels = sorted(str(v) for v in series.unique())
        if len(levels) < 2:
            raise DataError(f"categorical column {col!r} has a single level {levels}")
        # First level (lexicographic) is the reference.
        dummy_names = [f"{col}={lev}" for lev in levels[1:]]
        values = series.astype(str).to_numpy()
        block = np.column_stack([(values == lev).astype(float) for lev in levels[1:]])
        blocks.append(block)
        names.extend(dummy_names)
        encoded[col] = {"reference": levels[0], "columns": dummy_names}
    if blocks:
        return np.column_stack(blocks), tuple(names)
    return np.empty((len(frame), 0)), ()


def prepare_analysis_data(
    frame: pd.DataFrame,
    outcome: str,
    predictors,
    auxiliaries,
    outcome_kind: str = "continuous",
) -> PreparedData:
    """Validate roles, reject incomplete rows, and build numeric blocks."""
    predictors = list(predictors)
    auxiliaries = list(auxiliaries)
    if not auxiliaries:
        raise DataError("at least one auxiliary column is required")
    roles = [outcome] + predictors + auxiliaries
    if len(set(roles)) != len(roles):
        raise DataError(f"a column appears in more than one role: {roles}")
    missing_cols = [c for c in roles if c not in frame.columns]
    if missing_cols:
        raise DataError(f"columns not present in the CSV: {missing_cols}")

    used = frame[roles]
    na_counts = used.isna().sum()
    bad = {col: int(cnt) for col, cnt in na_counts.items() if cnt > 0}
    if bad:
        raise DataError(
            f"microdata must be complete-case; missing cells by column: {bad} "
            f"({int(used.isna().any(axis=1).sum())} affected rows)"
        )

    y_series = frame[outcome]
    if not pd.api.types.is_numeric_dtype(y_series):
        raise DataError(f"outcome column {outcome!r} must be numeric")
    y = y_series.to_numpy(dtype=float)
    if outcome_kind == "binary":
        vals = np.unique(y)
        if not np.all(np.isin(vals, (0.0, 1.0))):
            raise DataError(f"binary outcome may contain only 0 and 1, found {vals}")
    elif outcome_kind != "continuous":
        raise DataError(f"unknown outcome kind {outcome_kind!r}")

    encoded: dict = {}
    z, z_names = _encode_columns(frame, predictors, encoded)
    a, a_names = _encode_columns(frame, auxiliaries, encoded)
    return PreparedData(
        y=y,
        z=z,
        a=a,
        z_names=z_names,
        a_names=a_names,
        outcome=outcome,
        n_rows=len(frame),
        encoded=encoded,
    )


def jsonify(value):
    """Recursive conversion to JSON-serializable builtins, full precision."""
    if isinstance(value, dict):
        return {str(k): jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonify(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonify(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def dump_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(jsonify(report), indent=2, sort_keys=True) + "\n")
