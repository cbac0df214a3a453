"""Comma-separated exports and ``key=value`` sidecars.

Bulk arrays are written with ``%.17g`` and table cells with the shortest
round-trip representation, so files parse back exactly and repeated runs
with one seed give byte-identical output.
"""
from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np

from .exceptions import ReportError

FLOAT_FMT = "%.17g"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _write_block(path, header, ids, floats, float_cols):
    """Fast writer for large integer + float blocks via ``np.savetxt``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = ["%d"] * ids.shape[1] + [FLOAT_FMT] * float_cols
    data = np.column_stack([ids.astype(float), floats]) if float_cols else ids.astype(float)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, data, fmt=fmt, delimiter=",")
    return path


def _path_step_index(m_count, n1):
    pid = np.repeat(np.arange(m_count), n1)
    step = np.tile(np.arange(n1), m_count)
    return np.column_stack([pid, step])


def export_ensemble(paths, path, max_paths=None):
    """``path,step,t,B1..Bd``; only the first ``max_paths`` paths when given."""
    M = paths.num_paths if max_paths is None else min(int(max_paths), paths.num_paths)
    n1 = paths.grid.num_steps + 1
    ids = _path_step_index(M, n1)
    t = np.tile(paths.grid.times, M)
    B = paths.values[:M].reshape(M * n1, paths.dim)
    header = ["path", "step", "t"] + [f"B{j + 1}" for j in range(paths.dim)]
    return _write_block(path, header, ids, np.column_stack([t, B]), 1 + paths.dim)


def export_bounds(bounds, path, max_paths=None):
    """``path,step,t,lower,upper``."""
    M = bounds.lower.shape[0] if max_paths is None else min(int(max_paths), bounds.lower.shape[0])
    n1 = bounds.grid.num_steps + 1
    ids = _path_step_index(M, n1)
    t = np.tile(bounds.grid.times, M)
    return _write_block(path, ["path", "step", "t", "lower", "upper"], ids,
                        np.column_stack([t, bounds.lower[:M].ravel(), bounds.upper[:M].ravel()]), 3)


def export_oracle(rows, path):
    """Rows ``(t, x, Y, Z)``."""
    return write_rows(path, ["t", "x", "Y", "Z"], rows)


def export_solution(sol, path, max_paths=None):
    """``path,step,t,Y,Z1..Zd``; ``Z`` is empty at the final step."""
    M = sol.num_paths if max_paths is None else min(int(max_paths), sol.num_paths)
    N = sol.grid.num_steps
    d = sol.Z.shape[2]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ffmt = ",".join([FLOAT_FMT] * (2 + d))
    with open(path, "w") as fh:
        fh.write(",".join(["path", "step", "t", "Y"] + [f"Z{j + 1}" for j in range(d)]) + "\n")
        for m in range(M):
            block = np.column_stack([sol.grid.times[:N], sol.Y[m, :N], sol.Z[m]])
            for i in range(N):
                fh.write(f"{m},{i}," + ffmt % tuple(block[i]) + "\n")
            fh.write(f"{m},{N}," + FLOAT_FMT % sol.grid.times[N] + "," + FLOAT_FMT % sol.Y[m, N]
                     + "," * d + "\n")
    return path


def export_checks(reports, path):
    """``check,scenario,violation_rate,threshold,pass``."""
    return write_rows(path, ["check", "scenario", "violation_rate", "threshold", "pass"],
                      [r.row() for r in reports])


def write_sidecar(path, items: dict):
    """Plain-text ``key=value`` lines, sorted by key."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for k in sorted(items):
            fh.write(f"{k}={_fmt(items[k])}\n")
    return path


def read_sidecar(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line and "=" in line:
                k, v = line.split("=", 1)
                out[k] = v
    return out


def read_rows(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def require_files(directory, names):
    directory = Path(directory)
    if not directory.is_dir():
        raise ReportError(f"artifact directory {directory} does not exist")
    missing = [n for n in names if not (directory / n).exists()]
    if missing:
        raise ReportError(f"missing artifacts in {directory}: {', '.join(missing)}")
    return directory


def listing(directory):
    return sorted(os.listdir(directory))
