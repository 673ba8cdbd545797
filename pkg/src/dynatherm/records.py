"""CSV and JSON output files tagged with the configuration hash."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

HASH_PREFIX = "# config_sha256: "


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_csv(path, columns, rows, config_hash: str) -> Path:
    path = Path(path)
    buf = io.StringIO()
    buf.write(f"{HASH_PREFIX}{config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        if len(row) != len(columns):
            raise ValueError(f"row has {len(row)} cells, header has {len(columns)}")
        w.writerow([_cell(x) for x in row])
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> tuple[str, list[str], list[list[str]]]:
    """Returns (config hash, header, rows as strings)."""
    text = Path(path).read_text()
    first, _, rest = text.partition("\n")
    if not first.startswith(HASH_PREFIX):
        raise ValueError(f"{path}: missing config hash header")
    reader = csv.reader(io.StringIO(rest))
    header = next(reader)
    return first[len(HASH_PREFIX):].strip(), header, [r for r in reader if r]


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        x = float(x)
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def write_json(path, payload: dict, config_hash: str) -> Path:
    path = Path(path)
    data = {"config_hash": config_hash, **_jsonable(payload)}
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())
