"""
File handling utilities for the estimation toolkit.
Reads role columns from CSV files into datasets and writes simulated data,
result tables and JSON reports.
"""

import json
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tabulate import tabulate

import config
from estimation.exceptions import ConfigError, DataError
from estimation.models import Dataset, constant_columns

logger = logging.getLogger(__name__)

# first data row is line 2 of the file
_HEADER_LINES = 1


def ensure_directory(path) -> None:
    """Ensure a directory exists, create if it doesn't"""
    Path(path).mkdir(parents=True, exist_ok=True)


def _read_frame(csv_path) -> pd.DataFrame:
    path = Path(csv_path)
    if not path.is_file():
        raise DataError(f"CSV file not found: {path}")
    try:
        return pd.read_csv(path, encoding="utf-8", dtype=str, keep_default_na=False, skipinitialspace=True)
    except UnicodeDecodeError as e:
        raise DataError(f"{path} is not valid UTF-8 ({e.reason} at byte {e.start})")
    except pd.errors.EmptyDataError:
        raise DataError(f"{path} is empty or has no header")
    except pd.errors.ParserError as e:
        raise DataError(f"cannot parse {path}: {e}")


def _parse_number(token) -> float:
    try:
        return float(token)
    except (TypeError, ValueError):
        return np.nan


def _numeric_column(frame: pd.DataFrame, column: str) -> pd.Series:
    """Parse one column; blanks and NA markers become NaN, anything else must be a finite number"""
    raw = frame[column].str.strip()
    missing = raw.isna() | raw.isin(["", "NA", "NaN", "nan", "null", "NULL"])
    values = raw.where(~missing).map(_parse_number).astype(np.float64)
    bad = values.isna() & ~missing
    if bad.any():
        idx = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataError(f"non-numeric value '{raw.iloc[idx]}'", row=idx + _HEADER_LINES + 1, column=column)
    infinite = ~np.isfinite(values.fillna(0.0).to_numpy())
    if infinite.any():
        idx = int(np.flatnonzero(infinite)[0])
        raise DataError("non-finite value", row=idx + _HEADER_LINES + 1, column=column)
    return values


def _check_field_counts(frame: pd.DataFrame) -> None:
    """Short rows come back as NaN; blank fields stay empty strings"""
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        idx = int(np.flatnonzero(short)[0])
        row = frame.iloc[idx]
        raise DataError(f"row has {int(row.notna().sum())} fields, header has {frame.shape[1]}",
                        row=idx + _HEADER_LINES + 1, column=row.index[row.isna().to_numpy()][0])


def read_dataset(csv_path, y: str, d: str, x: Sequence[str] = (), z: Sequence[str] = ()) -> Tuple[Dataset, int]:
    """
    Load the role columns of a CSV file into a Dataset

    Rows with a missing value in any role column are dropped. A constant
    column is added to X when none of the X columns is constant.

    Args:
        csv_path: UTF-8 CSV with a header row
        y, d: response and endogenous regressor columns
        x: exogenous columns
        z: instrument columns

    Returns:
        (dataset, number of dropped rows)

    Raises:
        ConfigError: a role column is not in the header
        DataError: unreadable file, short rows, or non-numeric / non-finite entries
    """
    frame = _read_frame(csv_path)
    frame.columns = [str(c).strip() for c in frame.columns]
    roles = [y, d, *x, *z]
    missing = [c for c in roles if c not in frame.columns]
    if missing:
        raise ConfigError(f"columns not found in {csv_path}: {', '.join(missing)}")

    _check_field_counts(frame)

    numeric = pd.DataFrame({c: _numeric_column(frame, c) for c in roles})
    complete = numeric.notna().all(axis=1)
    dropped = int((~complete).sum())
    if dropped:
        logger.warning(f"Dropped {dropped} rows with missing values in role columns")
    numeric = numeric[complete]
    if numeric.empty:
        raise DataError(f"no complete rows in {csv_path}")

    try:
        data = Dataset.from_arrays(
            y=numeric[y].to_numpy(),
            d=numeric[d].to_numpy(),
            z=numeric[list(z)].to_numpy(),
            x=numeric[list(x)].to_numpy() if x else None,
            y_label=y,
            d_label=d,
            z_labels=tuple(z),
            **({"x_labels": tuple(x)} if x else {}),
        )
    except ValueError as e:
        raise DataError(str(e))
    logger.info(f"Loaded {data.n} observations from {csv_path}")
    return data, dropped


def write_dataset(data: Dataset, csv_path) -> Path:
    """
    Write the role columns of a dataset with 17 significant digits

    Constant X columns are omitted; reading the file back adds the constant.
    """
    path = Path(csv_path)
    ensure_directory(path.parent)
    columns = {data.y_label: data.y, data.d_label: data.d}
    for label, values, const in zip(data.x_labels, data.x.T, constant_columns(data.x)):
        if not const:
            columns[label] = values
    for label, values in zip(data.z_labels, data.z.T):
        columns[label] = values
    pd.DataFrame(columns).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    logger.info(f"Wrote {data.n} rows to {path}")
    return path


def format_table(rows: List[dict], fmt: str = "markdown", floatfmt: str = ".3f") -> str:
    """Render result rows as CSV or an aligned Markdown table"""
    frame = pd.DataFrame(rows)
    if fmt == "csv":
        return frame.to_csv(index=False, float_format="%.6f", lineterminator="\n")
    if fmt == "markdown":
        return tabulate(frame, headers="keys", tablefmt="github", showindex=False, floatfmt=floatfmt) + "\n"
    raise ConfigError(f"unsupported table format '{fmt}'")


def write_report(content: str, out_path=None) -> Optional[Path]:
    """Write text to out_path, or to stdout when no path is given"""
    if out_path is None:
        print(content, end="" if content.endswith("\n") else "\n")
        return None
    path = Path(out_path)
    ensure_directory(path.parent)
    path.write_text(content, encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def report_json(command: str, estimate=None, se_analytic=None, se_bootstrap=None, ci=None,
                diagnostics: Optional[dict] = None, seed=None, **extra) -> str:
    """
    Machine-readable report with the same top-level keys for every command

    Non-finite numbers are written as null.
    """
    payload = {
        "command": command,
        "estimate": estimate,
        "se_analytic": se_analytic,
        "se_bootstrap": se_bootstrap,
        "ci": ci,
        "diagnostics": diagnostics or {},
        "seed": seed,
        "version": config.VERSION,
    }
    payload.update(extra)
    return json.dumps(_jsonable(payload), indent=2) + "\n"


def load_json_config(path) -> dict:
    """Flat JSON object of option values (keys use underscores)"""
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: line {e.lineno}, column {e.colno}")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} must contain a JSON object")
    return {str(k).replace("-", "_"): v for k, v in raw.items()}


def split_list(value) -> Tuple[str, ...]:
    """'a,b,c' -> ('a', 'b', 'c'); lists pass through"""
    if value is None:
        return ()
    if isinstance(value, (list, tuple)):
        items: Iterable = value
    else:
        items = str(value).split(",")
    return tuple(str(v).strip() for v in items if str(v).strip())
