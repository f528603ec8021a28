import csv
import json
import logging
import re
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from dotenv import dotenv_values

from app.exceptions import DatasetFormatError, DimensionError, InputError
from app.model.model import IVDataset, validate_dataset

logger = logging.getLogger(__name__)

_ENDOGENOUS = re.compile(r"^X(\d+)$")
_INSTRUMENT = re.compile(r"^Z(\d+)$")


def _numbered_columns(columns: Sequence[str], pattern: re.Pattern, prefix: str) -> List[str]:
    found = sorted(int(match.group(1)) for match in map(pattern.match, columns) if match)
    expected = list(range(1, len(found) + 1))
    if found != expected:
        raise DatasetFormatError(f"{prefix} columns must be numbered {prefix}1..{prefix}{len(found)}, got {found}")
    return [f"{prefix}{i}" for i in found]


def _check_row_widths(path: Path, width: int) -> None:
    """Field counts of the raw rows; the parser pads short rows with empty strings."""
    with path.open(newline="", encoding="utf-8") as handle:
        for line, fields in enumerate(csv.reader(handle), start=1):
            if fields and len(fields) != width:
                raise DatasetFormatError(
                    f"malformed row {line} in {path}: expected {width} fields, found {len(fields)}"
                )


def load_csv(path, m: Optional[int] = None, k: Optional[int] = None) -> IVDataset:
    """
    Read a dataset with header y, X1..Xm, Z1..Zk (any column order).

    Args:
        path: CSV file, UTF-8, comma separated, '.' decimal point
        m: expected number of endogenous columns (inferred from the header when None)
        k: expected number of instruments (inferred from the header when None)

    Returns:
        Validated IVDataset

    Raises:
        DatasetFormatError: missing file, malformed row, non-numeric cell or bad header
        InputError: any IVDataset invariant violation
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetFormatError(f"dataset file not found: {path}")

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True, encoding="utf-8")
    except pd.errors.ParserError as e:
        raise DatasetFormatError(f"malformed row in {path}: {str(e).strip()}") from e
    except (pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DatasetFormatError(f"cannot read {path}: {str(e).strip()}") from e

    columns = [str(c).strip() for c in frame.columns]
    frame.columns = columns
    if len(set(columns)) != len(columns):
        raise DatasetFormatError(f"duplicate column names in {path}")
    if "y" not in columns:
        raise DatasetFormatError(f"missing outcome column 'y' in {path}")
    x_columns = _numbered_columns(columns, _ENDOGENOUS, "X")
    z_columns = _numbered_columns(columns, _INSTRUMENT, "Z")
    unknown = set(columns) - {"y", *x_columns, *z_columns}
    if unknown:
        raise DatasetFormatError(f"unexpected columns in {path}: {sorted(unknown)}")
    if m is not None and len(x_columns) != m:
        raise DimensionError(f"expected m={m} endogenous columns, found {len(x_columns)}")
    if k is not None and len(z_columns) != k:
        raise DimensionError(f"expected k={k} instrument columns, found {len(z_columns)}")

    _check_row_widths(path, len(columns))

    numeric = {}
    for column in ["y", *x_columns, *z_columns]:
        cells = frame[column].str.strip()
        values = pd.to_numeric(cells, errors="coerce")
        bad = values.isna() & ~cells.str.lower().isin(["nan", "inf", "-inf", "+inf", "infinity", "-infinity"])
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DatasetFormatError(
                f"non-numeric cell in column {column}, row {row + 2}: {frame[column].iloc[row]!r}"
            )
        numeric[column] = cells.astype(float).to_numpy()

    ds = IVDataset(
        y=numeric["y"],
        X=np.column_stack([numeric[c] for c in x_columns]) if x_columns else np.empty((len(frame), 0)),
        Z=np.column_stack([numeric[c] for c in z_columns]) if z_columns else np.empty((len(frame), 0)),
    )
    validate_dataset(ds)
    logger.info(f"Loaded {path}: n={ds.n}, k={ds.k}, m={ds.m}")
    return ds


def save_csv(ds: IVDataset, path) -> Path:
    """Write the dataset with the y, X1..Xm, Z1..Zk column convention."""
    frame = pd.DataFrame({"y": ds.y})
    for j in range(ds.m):
        frame[f"X{j + 1}"] = ds.X[:, j]
    for j in range(ds.k):
        frame[f"Z{j + 1}"] = ds.Z[:, j]
    path = Path(path)
    try:
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    except OSError as e:
        logger.error(f"Error writing dataset to {path}: {str(e)}")
        raise InputError(f"cannot write {path}: {e.strerror or e}") from e
    return path


def render_table(records: List[Dict], columns: Sequence[str], fmt: str = "csv",
                 metadata: Optional[Dict] = None) -> str:
    """Serialize table rows as CSV (fixed column order) or JSON (rows plus metadata)."""
    if fmt == "csv":
        frame = pd.DataFrame(records, columns=list(columns))
        return frame.to_csv(index=False, float_format="%.10g", lineterminator="\n")
    if fmt == "json":
        payload = {"metadata": metadata or {}, "columns": list(columns),
                   "rows": [{c: record.get(c) for c in columns} for record in records]}
        return json.dumps(payload, indent=2) + "\n"
    raise InputError(f"unknown output format: {fmt!r}")


def write_table(records: List[Dict], columns: Sequence[str], path, fmt: str = "csv",
                metadata: Optional[Dict] = None) -> Path:
    path = Path(path)
    text = render_table(records, columns, fmt, metadata)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        logger.error(f"Error writing table to {path}: {str(e)}")
        raise InputError(f"cannot write {path}: {e.strerror or e}") from e
    logger.info(f"Wrote {len(records)} rows to {path}")
    return path


def read_config_file(path) -> Dict[str, str]:
    """Flat key=value experiment configuration; keys are lower-cased, dashes become underscores."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"config file not found: {path}")
    values = dotenv_values(path)
    return {key.strip().lower().replace("-", "_"): value for key, value in values.items() if value is not None}
