"""File formats: per-entity CSV, legacy-VTK ASCII, JSON manifests and flat config files.

CSV files have a header row ``id,value`` (or ``id,x1,x2,value`` when
coordinates are included) and one row per vertex or cell; numbers are
written in full-precision scientific notation (17 significant digits) so
a write/read round trip is exact.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .mesh import Mesh2D

FMT = "%.16e"


def fmt(x: float) -> str:
    return FMT % float(x)


def _open_for_write(path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="")
    except OSError as exc:
        raise ValidationError(f"cannot write {path}: {exc.strerror}") from None


def write_csv(values, path, coords=None, header: str = "value") -> Path:
    """Write one value per row; ``coords`` (n, 2) adds ``x1,x2`` columns."""
    vals = np.asarray(values, dtype=float).reshape(-1)
    with _open_for_write(path) as fh:
        if coords is None:
            fh.write(f"id,{header}\n")
            for i, v in enumerate(vals):
                fh.write(f"{i},{fmt(v)}\n")
        else:
            c = np.asarray(coords, dtype=float)
            if c.shape != (len(vals), 2):
                raise ValidationError("coords must have shape (n, 2)")
            fh.write(f"id,x1,x2,{header}\n")
            for i, (v, (x, y)) in enumerate(zip(vals, c)):
                fh.write(f"{i},{fmt(x)},{fmt(y)},{fmt(v)}\n")
    return Path(path)


def write_table(path, header, rows) -> Path:
    """Generic CSV table; floats in full-precision scientific notation."""
    with _open_for_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return Path(path)


def read_csv(path) -> np.ndarray:
    """Read the value column of a file written by :func:`write_csv`."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path}: no such file")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    head = rows[0]
    if head[0] != "id" or len(head) not in (2, 4):
        raise ValidationError(f"{path}: expected header 'id,value' or 'id,x1,x2,value'")
    out = np.empty(len(rows) - 1)
    for n, row in enumerate(rows[1:]):
        if len(row) != len(head) or int(row[0]) != n:
            raise ValidationError(f"{path}: malformed row {n + 2}")
        out[n] = float(row[-1])
    return out


def read_coefficients_csv(path, n_cells: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell coefficients from a CSV with header ``id,a,q``."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"coefficient spec {str(path)!r} is neither a known name nor a file")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["id", "a", "q"]:
        raise ValidationError(f"{path}: expected header 'id,a,q'")
    body = rows[1:]
    if len(body) != n_cells:
        raise ValidationError(f"{path}: {len(body)} rows for {n_cells} cells")
    a = np.array([float(r[1]) for r in body])
    q = np.array([float(r[2]) for r in body])
    return a, q


def write_coefficients_csv(path, a, q) -> Path:
    return write_table(path, ["id", "a", "q"], [(i, float(x), float(y)) for i, (x, y) in enumerate(zip(a, q))])


def write_vtk(mesh: Mesh2D, path, point_data=None, cell_data=None, title: str = "mfpd fields") -> Path:
    """Legacy-VTK ASCII unstructured grid with triangle cells.

    ``point_data`` and ``cell_data`` map names to arrays with one entry per
    vertex and per cell respectively. Arrays of shape (n, 2) are written as
    vectors (padded with a zero third component).
    """
    point_data = dict(point_data or {})
    cell_data = dict(cell_data or {})
    for name, arr in point_data.items():
        if len(arr) != mesh.n_vertices:
            raise ValidationError(f"point field {name!r} has {len(arr)} entries for {mesh.n_vertices} vertices")
    for name, arr in cell_data.items():
        if len(arr) != mesh.n_triangles:
            raise ValidationError(f"cell field {name!r} has {len(arr)} entries for {mesh.n_triangles} cells")
    nv, nc = mesh.n_vertices, mesh.n_triangles
    with _open_for_write(path) as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(title.replace("\n", " ")[:255] + "\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        for x, y in mesh.vertices:
            fh.write(f"{fmt(x)} {fmt(y)} 0\n")
        fh.write(f"CELLS {nc} {4 * nc}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"3 {a} {b} {c}\n")
        fh.write(f"CELL_TYPES {nc}\n")
        fh.write("5\n" * nc)
        for section, data, n in (("POINT_DATA", point_data, nv), ("CELL_DATA", cell_data, nc)):
            if not data:
                continue
            fh.write(f"{section} {n}\n")
            for name, arr in data.items():
                _write_vtk_array(fh, name, np.asarray(arr, dtype=float))
    return Path(path)


def _write_vtk_array(fh, name, arr):
    name = name.replace(" ", "_")
    if arr.ndim == 1:
        fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        for v in arr:
            fh.write(fmt(v) + "\n")
    elif arr.ndim == 2 and arr.shape[1] == 2:
        fh.write(f"VECTORS {name} double\n")
        for x, y in arr:
            fh.write(f"{fmt(x)} {fmt(y)} 0\n")
    else:
        raise ValidationError(f"field {name!r} must be scalar or 2-vector per entity")


def read_vtk_sections(path) -> dict:
    """Minimal reader for files from :func:`write_vtk` (used in tests and tools).

    Returns ``{"points": (n, 2), "cells": (m, 3), "POINT_DATA": {...}, "CELL_DATA": {...}}``.
    """
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "# vtk DataFile Version 3.0":
        raise ValidationError(f"{path}: not a legacy VTK file")
    out = {"POINT_DATA": {}, "CELL_DATA": {}}
    i = 4
    section = None
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        key = parts[0]
        if key == "POINTS":
            n = int(parts[1])
            out["points"] = np.array([[float(t) for t in lines[i + 1 + j].split()[:2]] for j in range(n)])
            i += n + 1
        elif key == "CELLS":
            n = int(parts[1])
            out["cells"] = np.array([[int(t) for t in lines[i + 1 + j].split()[1:]] for j in range(n)])
            i += n + 1
        elif key == "CELL_TYPES":
            i += int(parts[1]) + 1
        elif key in ("POINT_DATA", "CELL_DATA"):
            section, count = key, int(parts[1])
            i += 1
        elif key == "SCALARS":
            out[section][parts[1]] = np.array([float(lines[i + 2 + j]) for j in range(count)])
            i += count + 2
        elif key == "VECTORS":
            out[section][parts[1]] = np.array([[float(t) for t in lines[i + 1 + j].split()[:2]] for j in range(count)])
            i += count + 1
        else:
            raise ValidationError(f"{path}: unexpected line {i + 1}: {lines[i]!r}")
    return out


def write_json(path, obj) -> Path:
    with _open_for_write(path) as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return Path(path)


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON at line {exc.lineno}") from None


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` config; ``#`` starts a comment, blank lines ignored."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file {path} not found")
    out = {}
    for n, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{n}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValidationError(f"{path}:{n}: empty key")
        out[key] = val
    return out


def relpath(path, start) -> str:
    return os.path.relpath(path, start)
