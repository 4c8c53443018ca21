"""Legacy VTK and CSV writers."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .mesh import LayerMesh, TetMesh

__all__ = ["ExportError", "write_vtk", "export_vtk", "read_vtk_counts", "write_csv", "format_float"]

VTK_TETRA = 10


class ExportError(OSError):
    pass


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise ExportError(f"cannot write {path}: {exc}") from exc


def format_float(x: float) -> str:
    return f"{float(x):.17g}"


def write_vtk(layer: LayerMesh, displacement: np.ndarray, path: str | Path, title: str = "displacement") -> Path:
    """One layer as an ASCII unstructured grid with a point vector field."""
    u = np.asarray(displacement, dtype=float)
    if u.shape != (layer.n_nodes, 3):
        raise ValueError(f"displacement has shape {u.shape}, expected ({layer.n_nodes}, 3)")
    n, m = layer.n_nodes, layer.tets.shape[0]
    out = io.StringIO()
    out.write("# vtk DataFile Version 3.0\n")
    out.write(title.replace("\n", " ")[:255] + "\n")
    out.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
    out.write(f"POINTS {n} double\n")
    np.savetxt(out, layer.nodes, fmt="%.17g")
    out.write(f"CELLS {m} {5 * m}\n")
    np.savetxt(out, np.column_stack([np.full(m, 4), layer.tets]), fmt="%d")
    out.write(f"CELL_TYPES {m}\n")
    np.savetxt(out, np.full(m, VTK_TETRA), fmt="%d")
    out.write(f"POINT_DATA {n}\nVECTORS displacement double\n")
    np.savetxt(out, u, fmt="%.17g")
    _atomic_write(Path(path), out.getvalue())
    return Path(path)


def export_vtk(mesh: TetMesh, layer_fields: Sequence[np.ndarray], directory: str | Path, stem: str = "layer") -> list[Path]:
    """``<stem>_<k>.vtk`` for every layer ``k``."""
    if len(layer_fields) != mesh.n_layers:
        raise ValueError(f"{mesh.n_layers} layers but {len(layer_fields)} fields")
    directory = Path(directory)
    return [
        write_vtk(lm, u, directory / f"{stem}_{k}.vtk", f"{stem} {k} displacement")
        for k, (lm, u) in enumerate(zip(mesh.layers, layer_fields))
    ]


def read_vtk_counts(path: str | Path) -> tuple[int, int]:
    """(points, cells) declared in a legacy VTK file."""
    points = cells = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if parts[:1] == ["POINTS"]:
                points = int(parts[1])
            elif parts[:1] == ["CELLS"]:
                cells = int(parts[1])
    if points is None or cells is None:
        raise ValueError(f"{path}: missing POINTS or CELLS section")
    return points, cells


def write_csv(header: Sequence[str], rows: Iterable[Sequence], path: str | Path) -> Path:
    """UTF-8 CSV; floats carry 17 significant digits."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    _atomic_write(Path(path), buf.getvalue())
    return Path(path)
