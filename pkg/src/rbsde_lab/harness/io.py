"""Result persistence: solution CSVs, sorted JSON reports and TSV plot data."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

REPORT_SCHEMA = 1


def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def report_bytes(doc: dict) -> bytes:
    """Canonical serialization: sorted keys, fixed separators, trailing newline."""
    return (json.dumps(_clean(doc), sort_keys=True, indent=2, allow_nan=False) + "\n").encode("utf-8")


def write_report(path, doc: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(report_bytes(doc))
    return path


def solution_rows(model, Y, Z=None, K=None, A=None, dA=None, obstacle=None) -> tuple:
    """Header and rows: node id, layer, t, Y, Z, K1..KJ, optional xi, A and dA.

    Predictable columns (Z, K, dA) are empty on the terminal layer.
    """
    header = ["node", "layer", "t", "Y"]
    if Z is not None:
        header += ["Z"] + [f"K{j + 1}" for j in range(model.J)]
    if obstacle is not None:
        header.append("xi")
    if A is not None:
        header.append("A")
    if dA is not None:
        header.append("dA")
    rows = []
    for i in range(model.N + 1):
        t = model.grid.time(i)
        for n in range(model.layer_size(i)):
            row = [model.node_label(i, n), i, _fmt(t), _fmt(Y[i][n])]
            if Z is not None:
                if i < model.N:
                    row.append(_fmt(Z[i][n]))
                    row += [_fmt(v) for v in np.asarray(K[i][n]).reshape(-1)]
                else:
                    row += [""] * (1 + model.J)
            if obstacle is not None:
                row.append(_fmt(obstacle[i][n]))
            if A is not None:
                row.append(_fmt(A[i][n]))
            if dA is not None:
                row.append(_fmt(dA[i][n]) if i < model.N else "")
            rows.append(row)
    return header, rows


def _fmt(v) -> str:
    return repr(float(v))


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def layer_series(model, proc) -> list:
    """Per-layer (mean, min, max) of an adapted process; the mean under the model's measure."""
    out = []
    for i in range(len(proc)):
        v = np.asarray(proc[i], dtype=float)
        out.append((float(np.dot(model.node_probabilities(i), v)), float(v.min()), float(v.max())))
    return out


def write_plot_tsv(path, model, series: dict) -> Path:
    """Columns t then, per named process, its mean, min and max over the layer."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(series)
    stats = {k: layer_series(model, series[k]) for k in names}
    n = min(len(v) for v in stats.values())
    lines = ["\t".join(["t"] + [f"{k}_{s}" for k in names for s in ("mean", "min", "max")])]
    for i in range(n):
        cells = [_fmt(model.grid.time(i))]
        for k in names:
            cells += [_fmt(x) for x in stats[k][i]]
        lines.append("\t".join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_rows_tsv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(header)] + ["\t".join(str(c) for c in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path
