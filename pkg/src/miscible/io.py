"""Plain-text persistence of cell fields: CSV with a grid header and legacy VTK.

CSV layout::

    # dim nx ny [nz] Lx Ly [Lz]
    x,y[,z],value        (one row per cell, x fastest)

Every number is printed with 17 significant digits, so a double survives a
write/read cycle unchanged.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError
from .grid import Grid


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


def grid_header(grid: Grid) -> str:
    parts = [str(grid.dim)] + [str(n) for n in grid.shape] + [fmt(L) for L in grid.lengths]
    return "# " + " ".join(parts)


def parse_grid_header(line: str) -> Grid:
    tokens = line.strip().lstrip("#").split()
    try:
        dim = int(tokens[0])
        if dim not in (2, 3) or len(tokens) != 1 + 2 * dim:
            raise ValueError
        shape = tuple(int(t) for t in tokens[1:1 + dim])
        lengths = tuple(float(t) for t in tokens[1 + dim:])
        return Grid(shape, lengths)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"bad grid header: {line.strip()!r}") from exc


def format_field_csv(grid: Grid, field) -> str:
    field = np.asarray(field, dtype=float)
    if field.shape != (grid.ncells,):
        raise FormatError(f"field has shape {field.shape}, grid has {grid.ncells} cells")
    x = grid.centers()
    rows = [",".join([fmt(c) for c in xi] + [fmt(v)]) for xi, v in zip(x, field)]
    return grid_header(grid) + "\n" + "\n".join(rows) + "\n"


def write_field_csv(path, grid: Grid, field) -> None:
    Path(path).write_text(format_field_csv(grid, field))


def read_field_csv(path, grid: Grid | None = None):
    """Return ``(grid, field)``; if ``grid`` is given the header must match it."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise FormatError(f"{path}: missing grid header")
    file_grid = parse_grid_header(lines[0])
    if grid is not None and (file_grid.shape != grid.shape or
                             not np.allclose(file_grid.lengths, grid.lengths, rtol=1e-15, atol=0)):
        raise FormatError(f"{path}: header {lines[0]!r} does not match grid {grid.shape} {grid.lengths}")
    rows = lines[1:]
    if len(rows) != file_grid.ncells:
        raise FormatError(f"{path}: expected {file_grid.ncells} rows, found {len(rows)}")
    values = np.empty(file_grid.ncells)
    for i, row in enumerate(rows):
        cols = row.split(",")
        if len(cols) != file_grid.dim + 1:
            raise FormatError(f"{path}: row {i + 2} has {len(cols)} columns")
        try:
            values[i] = float(cols[-1])
        except ValueError as exc:
            raise FormatError(f"{path}: row {i + 2} has a non-numeric value") from exc
    return file_grid, values


def format_vtk(grid: Grid, fields: dict, title: str = "miscible field") -> str:
    """Legacy ASCII STRUCTURED_POINTS with one point per cell center."""
    h = list(grid.spacing) + [1.0] * (3 - grid.dim)
    dims = list(grid.shape) + [1] * (3 - grid.dim)
    origin = [0.5 * s for s in grid.spacing] + [0.0] * (3 - grid.dim)
    out = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS " + " ".join(str(d) for d in dims),
        "ORIGIN " + " ".join(fmt(o) for o in origin),
        "SPACING " + " ".join(fmt(s) for s in h),
        f"POINT_DATA {grid.ncells}",
    ]
    for name, values in fields.items():
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.ncells,):
            raise FormatError(f"field {name!r} has shape {values.shape}")
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [fmt(v) for v in values]
    return "\n".join(out) + "\n"


def write_vtk(path, grid: Grid, fields: dict, title: str = "miscible field") -> None:
    Path(path).write_text(format_vtk(grid, fields, title))


def write_snapshots(out_dir, grid: Grid, name: str, trajectory, stride: int = 1, vtk: bool = True) -> list:
    """Write levels ``0, stride, 2*stride, ...`` and always the last one."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_levels = len(trajectory)
    levels = sorted(set(range(0, n_levels, max(stride, 1))) | {n_levels - 1})
    written = []
    for n in levels:
        stem = out_dir / f"{name}_{n:04d}"
        write_field_csv(stem.with_suffix(".csv"), grid, trajectory[n])
        written.append(stem.with_suffix(".csv"))
        if vtk:
            write_vtk(stem.with_suffix(".vtk"), grid, {name: trajectory[n]}, f"{name} level {n}")
            written.append(stem.with_suffix(".vtk"))
    return written
