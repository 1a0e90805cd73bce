"""CSV and JSON writers.  Floats use 17 significant digits so they round-trip."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .grid import GridSpec

__all__ = ["fmt", "write_node_csv", "write_columns_csv", "write_rows_csv", "write_params_json"]


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_columns_csv(path, columns: Mapping[str, Sequence]) -> None:
    """Equal-length columns, one header row."""
    names = list(columns)
    data = [np.asarray(columns[n]).ravel() for n in names]
    if len({len(d) for d in data}) > 1:
        raise ValueError("columns differ in length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*data):
            w.writerow([fmt(v) for v in row])


def write_node_csv(path, grid: GridSpec, fields: Mapping[str, np.ndarray]) -> None:
    """One row per node, ``t,x,<name>...``, time-major."""
    tt, xx = grid.mesh()
    cols = {"t": tt, "x": xx}
    for name, values in fields.items():
        values = np.asarray(values)
        if values.shape != grid.shape:
            raise ValueError(f"field {name!r} needs shape {grid.shape}, got {values.shape}")
        cols[name] = values
    write_columns_csv(path, cols)


def write_rows_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _jsonable(v):
    if isinstance(v, Mapping):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, Path):
        return str(v)
    return v


def write_params_json(path, params: Mapping) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(params), fh, indent=2, sort_keys=True)
        fh.write("\n")
