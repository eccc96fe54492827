"""CSV report files: a ``# schema=1`` line, a header, fixed column order."""
from __future__ import annotations

import csv
import io
import math
import os
from pathlib import Path
from typing import Iterable, Sequence

SCHEMA_LINE = "# schema=1"


def fmt_db(value: float | None) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if value == math.inf:
        return "inf"
    return f"{value:.2f}"


def fmt_float(value: float | None) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{value:.9g}"


def write_csv(path: "str | os.PathLike", columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    buf.write(SCHEMA_LINE + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def read_csv(path: "str | os.PathLike") -> list[dict[str, str]]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != SCHEMA_LINE:
        raise ValueError(f"{path}: missing or unsupported schema header")
    return list(csv.DictReader(lines[1:]))
