"""Delimited (CSV) and JSON run reports."""

from __future__ import annotations

import csv
import json
import os

from top2sar.experiment import REPORT_COLUMNS, ReportRow

FORMATS = ("csv", "json")
_INT_COLUMNS = {"seed", "epochs"}
_STR_COLUMNS = {"run_id", "transfer_regime", "loss_regime"}


class ReportError(ValueError):
    pass


def _record(row) -> dict:
    src = row if isinstance(row, dict) else {c: getattr(row, c) for c in REPORT_COLUMNS}
    out = {}
    for c in REPORT_COLUMNS:
        v = src[c]
        if c in _STR_COLUMNS:
            out[c] = str(v)
        elif c in _INT_COLUMNS:
            out[c] = int(v)
        else:
            out[c] = round(float(v), 6)
    return out


def _cell(column: str, value) -> str:
    if column in _STR_COLUMNS or column in _INT_COLUMNS:
        return str(value)
    return f"{value:.6f}"


def emit_report(rows: list[ReportRow | dict], path, fmt: str = "csv") -> None:
    """Write rows with the fixed column order; nothing is written for an empty list."""
    if not rows:
        raise ReportError("refusing to write an empty report")
    if fmt not in FORMATS:
        raise ReportError(f"unknown report format {fmt!r}")
    records = [_record(r) for r in rows]
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w", newline="") as fh:
            if fmt == "csv":
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(REPORT_COLUMNS)
                for rec in records:
                    writer.writerow([_cell(c, rec[c]) for c in REPORT_COLUMNS])
            else:
                json.dump(records, fh, indent=1)
                fh.write("\n")
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise ReportError(f"cannot write report to {path}: {exc}") from exc


def read_report(path) -> list[dict]:
    """Parse a report written by :func:`emit_report`; the format is taken from the content."""
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("["):
        raw = json.loads(text)
    else:
        reader = csv.DictReader(text.splitlines())
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ReportError(f"{path}: unexpected CSV header {reader.fieldnames}")
        raw = list(reader)
    missing = [i for i, r in enumerate(raw) if set(r) != set(REPORT_COLUMNS)]
    if missing:
        raise ReportError(f"{path}: record {missing[0]} does not carry the report columns")
    return [_record(r) for r in raw]
