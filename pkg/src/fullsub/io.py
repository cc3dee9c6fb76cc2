"""CSV / JSON reading and writing for the command line tool."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .errors import ConfigError, DataError, MissingColumn, MissingValues, NonBinaryTreatment

_MISSING = {"", "na", "nan", "null", "none"}
_TRUE = {"1", "true"}
_FALSE = {"0", "false"}


def format_value(value: Any) -> str:
    """17 significant digits for floats, ``NA`` for missing or non-finite."""
    if value is None:
        return "NA"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g") if math.isfinite(value) else "NA"
    return str(value)


def write_csv(path: Path, records: list[dict], columns: list[str] | None = None) -> None:
    columns = columns or (list(records[0]) if records else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for rec in records:
            writer.writerow([format_value(rec.get(c)) for c in columns])


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


def write_json(path: Path, payload: Any) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return cfg


def parse_treatment(values: Iterable[str], column: str) -> np.ndarray:
    out = []
    for row, raw in enumerate(values, start=2):
        v = raw.strip().lower()
        if v in _TRUE:
            out.append(1)
        elif v in _FALSE:
            out.append(0)
        else:
            raise NonBinaryTreatment(f"column {column!r}, line {row}: {raw!r} is not 0/1/true/false")
    return np.array(out, dtype=np.int8)


def read_table(path: str | Path, columns: list[str], treatment: str) -> dict[str, np.ndarray]:
    """Read the named columns of a header-first, comma separated UTF-8 file.

    The treatment column is parsed as binary, the others as floats.  Any
    missing cell raises :class:`MissingValues` listing the offending lines.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        absent = [c for c in columns if c not in header]
        if absent:
            raise MissingColumn(f"{path}: missing column(s) {absent}")
        raw = {c: [] for c in columns}
        bad_lines = []
        for line, rec in enumerate(reader, start=2):
            if any((rec.get(c) or "").strip().lower() in _MISSING for c in columns):
                bad_lines.append(line)
            for c in columns:
                raw[c].append(rec.get(c) or "")
    if bad_lines:
        shown = ", ".join(map(str, bad_lines[:20]))
        more = "" if len(bad_lines) <= 20 else f" (+{len(bad_lines) - 20} more)"
        raise MissingValues(f"{path}: missing values on line(s) {shown}{more}")
    if not raw[columns[0]]:
        raise DataError(f"{path}: no data rows")
    table = {}
    for c in columns:
        if c == treatment:
            table[c] = parse_treatment(raw[c], c)
            continue
        try:
            table[c] = np.array([float(v) for v in raw[c]])
        except ValueError as exc:
            raise DataError(f"{path}: column {c!r} is not numeric ({exc})") from exc
    return table
