"""
JSONL persistence and analytics for beta-risk artifacts.

Dataset files, per-epoch metrics logs and prediction dumps are all JSONL.
This module writes and reads them in a byte-stable way, validates their
schema, and runs DuckDB SQL over them for ad-hoc inspection and CSV export.
"""

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Union

import duckdb
import pandas as pd

from .errors import DataIOError, StructuralError

logger = logging.getLogger(__name__)

TABLE_PLACEHOLDER = "records"
# whole-word table name only, so columns like n_records are left alone
TABLE_PATTERN = re.compile(rf"\b{TABLE_PLACEHOLDER}\b")


@dataclass
class WriteResult:
    """Result of writing a JSONL file."""
    records_written: int
    output_file: str


def dumps_record(record: Dict[str, Any]) -> str:
    """Serialize one record with a stable key order."""
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def write_jsonl(records: Iterable[Dict[str, Any]], output_file: Union[str, Path]) -> WriteResult:
    """Write records one per line."""
    output_path = Path(output_file)
    count = 0
    try:
        with open(output_path, "w", encoding="utf-8") as f:
            for record in records:
                f.write(dumps_record(record) + "\n")
                count += 1
    except OSError as e:
        raise DataIOError(output_path, f"cannot write JSONL: {e}") from e
    logger.debug(f"Wrote {count} records to {output_path}")
    return WriteResult(records_written=count, output_file=str(output_path))


def append_jsonl(record: Dict[str, Any], output_file: Union[str, Path]) -> None:
    """Append a single record (used for per-epoch logs)."""
    output_path = Path(output_file)
    try:
        with open(output_path, "a", encoding="utf-8") as f:
            f.write(dumps_record(record) + "\n")
    except OSError as e:
        raise DataIOError(output_path, f"cannot append to JSONL: {e}") from e


def iter_jsonl(jsonl_file: Union[str, Path]) -> Iterator[Dict[str, Any]]:
    """Yield records, skipping blank lines."""
    jsonl_path = Path(jsonl_file)
    if not jsonl_path.exists():
        raise DataIOError(jsonl_path, "JSONL file not found")
    try:
        with open(jsonl_path, "r", encoding="utf-8") as f:
            for line_num, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as e:
                    raise StructuralError(f"{jsonl_path} line {line_num}: invalid JSON - {e}") from e
    except OSError as e:
        raise DataIOError(jsonl_path, f"cannot read JSONL: {e}") from e


def read_jsonl(jsonl_file: Union[str, Path]) -> List[Dict[str, Any]]:
    return list(iter_jsonl(jsonl_file))


def load_jsonl(jsonl_file: Union[str, Path]) -> pd.DataFrame:
    """Load JSONL data into a pandas DataFrame."""
    return pd.DataFrame(read_jsonl(jsonl_file))


def validate_jsonl_schema(
    jsonl_file: Union[str, Path],
    required_fields: Sequence[str],
    kind: Optional[str] = None,
) -> List[str]:
    """Check that every record (of `kind`, if given) has the required fields.

    Returns a list of human-readable problems; empty means valid.
    """
    errors = []
    jsonl_path = Path(jsonl_file)
    if not jsonl_path.exists():
        raise DataIOError(jsonl_path, "JSONL file not found")
    with open(jsonl_path, "r", encoding="utf-8") as f:
        for line_num, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                errors.append(f"Line {line_num}: Invalid JSON - {e}")
                continue
            if not isinstance(record, dict):
                errors.append(f"Line {line_num}: record must be an object")
                continue
            if kind is not None and record.get("kind") != kind:
                continue
            for field_name in required_fields:
                if field_name not in record:
                    errors.append(f"Line {line_num}: Missing required field '{field_name}'")
    return errors


def analyze_with_duckdb(jsonl_file: Union[str, Path], sql_query: str) -> pd.DataFrame:
    """Execute SQL over a JSONL file; the table name `records` refers to it."""
    jsonl_path = Path(jsonl_file)
    if not jsonl_path.exists():
        raise DataIOError(jsonl_path, "JSONL file not found")
    conn = duckdb.connect(":memory:")
    source = f"read_json_auto('{jsonl_path}')"
    query = TABLE_PATTERN.sub(lambda _: source, sql_query)
    try:
        return conn.execute(query).fetchdf()
    except duckdb.Error as e:
        logger.error(f"DuckDB query failed: {e}")
        raise StructuralError(f"query failed: {e}") from e
    finally:
        conn.close()


def export_to_csv(
    jsonl_file: Union[str, Path],
    output_file: Union[str, Path],
    sql_query: Optional[str] = None,
) -> int:
    """Export JSONL data (optionally filtered through SQL) to CSV."""
    if sql_query is None:
        sql_query = f"SELECT * FROM {TABLE_PLACEHOLDER}"
    df = analyze_with_duckdb(jsonl_file, sql_query)
    write_csv(df, output_file)
    logger.info(f"Exported {len(df)} records to {output_file}")
    return len(df)


def write_csv(df: pd.DataFrame, output_file: Union[str, Path]) -> None:
    """Write a DataFrame as CSV with full float precision."""
    output_path = Path(output_file)
    try:
        df.to_csv(output_path, index=False, float_format="%.17g", lineterminator="\n")
    except OSError as e:
        raise DataIOError(output_path, f"cannot write CSV: {e}") from e


def write_json(document: Dict[str, Any], output_file: Union[str, Path]) -> None:
    """Write a JSON document with sorted keys and 2-space indentation."""
    write_text(json.dumps(document, sort_keys=True, indent=2) + "\n", output_file)


def write_text(text: str, output_file: Union[str, Path]) -> None:
    output_path = Path(output_file)
    try:
        output_path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise DataIOError(output_path, f"cannot write file: {e}") from e


def ensure_dir(directory: Union[str, Path]) -> Path:
    """Create an output directory (and parents) if it does not exist."""
    path = Path(directory)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataIOError(path, f"cannot create directory: {e}") from e
    return path
