"""CSV storage for decay curve sets.

Layout: a header ``t_ms,rep_1,...,rep_nl`` followed by one row per sampling
time. Values are written with 9 significant digits.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from bayesdecay.basis import TimeGrid
from bayesdecay.errors import InputError
from bayesdecay.evidence import DecayCurveSet

DIGITS = 9


def _fmt(x: float) -> str:
    return f"{x:.{DIGITS}g}"


def curves_to_csv(data: DecayCurveSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_ms"] + [f"rep_{i + 1}" for i in range(data.n_l)])
    for t, row in zip(data.grid.t, data.d):
        w.writerow([_fmt(t)] + [_fmt(v) for v in row])
    return buf.getvalue()


def write_curves(data: DecayCurveSet, path) -> None:
    try:
        Path(path).write_text(curves_to_csv(data))
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def curves_from_csv(text: str, source: str = "<string>") -> DecayCurveSet:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{source}: empty curve file")
    header = [c.strip() for c in rows[0]]
    if len(header) < 2 or header[0] != "t_ms":
        raise InputError(f"{source}: header must be 't_ms,rep_1,...', got {','.join(header)!r}")
    width = len(header)
    t, d = [], []
    for idx, row in enumerate(rows[1:], start=1):
        if len(row) != width:
            raise InputError(f"{source}: data row {idx} has {len(row)} fields, expected {width}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise InputError(f"{source}: data row {idx}: {exc}") from exc
        t.append(vals[0])
        d.append(vals[1:])
    if not t:
        raise InputError(f"{source}: no data rows")
    try:
        return DecayCurveSet(TimeGrid(np.array(t)), np.array(d))
    except InputError as exc:
        raise InputError(f"{source}: {exc}") from exc


def read_curves(path) -> DecayCurveSet:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return curves_from_csv(text, str(path))
