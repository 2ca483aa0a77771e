"""CSV / JSON artifact writers.

Every file starts with a metadata block: ``# key: <json>`` comment lines in
CSV, a ``"metadata"`` object in JSON. The ``timestamp`` entry is the only
field that varies between identical runs; it is ``null`` when suppressed.
Files are written to a temporary sibling and moved into place with
``os.replace``, so readers never see a partial artifact.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from insitu import __version__


def build_metadata(command: str, spec: Optional[dict], seed: Optional[int], timestamp: bool = True) -> dict:
    return {
        "artifact": "insitu",
        "version": __version__,
        "command": command,
        "seed": seed,
        "n_prec_constant": 1.0,
        "spec": spec,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds") if timestamp else None,
    }


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _cell(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    if v is None:
        return ""
    return str(v)


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if hasattr(v, "item"):  # numpy scalar
        return _jsonable(v.item())
    return v


def dumps_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=False, allow_nan=False) + "\n"


def render_csv(columns: Sequence[str], rows: Sequence[dict], meta: dict) -> str:
    buf = io.StringIO()
    for key, value in meta.items():
        buf.write(f"# {key}: {json.dumps(_jsonable(value), sort_keys=False, allow_nan=False)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, columns: Sequence[str], rows: Sequence[dict], meta: dict) -> Path:
    return atomic_write(path, render_csv(columns, rows, meta))


def write_json(path, payload: dict, meta: dict) -> Path:
    return atomic_write(path, dumps_json({"metadata": meta, **payload}))


def read_csv(path) -> tuple[dict, list[str], list[dict]]:
    """Inverse of :func:`write_csv`; numeric cells come back as floats."""
    meta = {}
    body = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("# ") and not body:
                key, _, value = line[2:].partition(": ")
                meta[key] = json.loads(value)
            else:
                body.append(line)
    reader = csv.DictReader(body)
    rows = []
    for r in reader:
        row = {}
        for k, v in r.items():
            try:
                row[k] = float(v)
            except ValueError:
                row[k] = v
        rows.append(row)
    return meta, list(reader.fieldnames or []), rows
