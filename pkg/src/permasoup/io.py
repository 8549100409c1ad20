"""JSON and CSV formats.

Floats are written with ``repr`` (shortest round-trip form), so identical
inputs always produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .chain import ChainSpec
from .kernel import IndexSet, Kernel, MetricTable


class InputError(ValueError):
    """Malformed or missing input; the message names the offending field."""


def _load_json(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise InputError(f"file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{p}: top level must be an object")
    return doc


def _matrix(doc: dict, key: str, where: str) -> np.ndarray:
    if key not in doc:
        raise InputError(f"{where}: missing field '{key}'")
    try:
        arr = np.array(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{where}: field '{key}' must be a numeric matrix") from exc
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InputError(f"{where}: field '{key}' must be a square matrix")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{where}: field '{key}' has non-finite entries")
    return arr


def _labels(doc: dict, key: str, n: int, where: str):
    if key not in doc:
        return None
    labels = [str(x) for x in doc[key]]
    if len(labels) != n:
        raise InputError(f"{where}: field '{key}' has {len(labels)} labels for {n} rows")
    if len(set(labels)) != n:
        raise InputError(f"{where}: field '{key}' has duplicate labels")
    return labels


def kernel_from_dict(doc: dict, where: str = "kernel") -> Kernel:
    entries = _matrix(doc, "entries", where)
    labels = _labels(doc, "labels", entries.shape[0], where)
    beta = doc.get("beta", 0.5)
    if not isinstance(beta, (int, float)) or not beta > 0:
        raise InputError(f"{where}: field 'beta' must be a positive number")
    coords = doc.get("coordinates")
    index = IndexSet(tuple(labels) if labels else tuple(str(i + 1) for i in range(len(entries))),
                     np.asarray(coords, dtype=float) if coords is not None else None)
    return Kernel(index, entries, float(beta), bool(doc.get("killed_at_root", False)))


def load_kernel(path) -> Kernel:
    return kernel_from_dict(_load_json(path), str(path))


def kernel_to_dict(k: Kernel) -> dict:
    doc = {"labels": list(k.labels), "beta": k.beta, "entries": k.entries.tolist()}
    if k.index.coordinates is not None:
        c = k.index.coordinates
        doc["coordinates"] = c[:, 0].tolist() if c.shape[1] == 1 else c.tolist()
    if k.killed_at_root:
        doc["killed_at_root"] = True
    return doc


def load_chain(path) -> ChainSpec:
    doc = _load_json(path)
    where = str(path)
    w = _matrix(doc, "jump_rates", where)
    labels = _labels(doc, "states", w.shape[0], where)
    kill = doc.get("kill_rates")
    try:
        return ChainSpec.from_rates(w, labels=labels, kill_rates=kill)
    except ValueError as exc:
        raise InputError(f"{where}: {exc}") from exc


def chain_to_dict(c: ChainSpec) -> dict:
    doc = {"states": list(c.labels), "jump_rates": c.jump_rates.tolist()}
    if not c.has_unit_killing:
        doc["kill_rates"] = c.kill_rates.tolist()
    return doc


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_text(path, text: str) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)


def write_table(path, labels: Sequence[str], values: np.ndarray, corner: str = "") -> None:
    """Square table with a header row and a header column of labels."""
    rows = ([lab] + list(row) for lab, row in zip(labels, np.asarray(values, dtype=float)))
    write_text(path, csv_text([corner] + list(labels), rows))


def write_samples(path, labels: Sequence[str], values: np.ndarray) -> None:
    """One row per sample, one column per state."""
    write_text(path, csv_text(list(labels), np.asarray(values, dtype=float)))


def read_table(path) -> MetricTable:
    p = Path(path)
    if not p.exists():
        raise InputError(f"file not found: {p}")
    with p.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InputError(f"{p}: table needs a header and at least one row")
    labels = rows[0][1:]
    try:
        values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise InputError(f"{p}: non-numeric table entry") from exc
    if values.shape != (len(labels), len(labels)):
        raise InputError(f"{p}: table must be square with matching labels")
    return MetricTable(IndexSet(tuple(labels)), rows[0][0] or "table", values)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def json_text(obj) -> str:
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"
