"""Evaluation of piecewise-linear fields of a structured layer mesh at arbitrary points."""

from __future__ import annotations

import numpy as np

from .mesh import LayerMesh

__all__ = ["interpolate_layer", "grids_nested"]


def _locate(t: np.ndarray, lo: float, hi: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    s = (t - lo) / (hi - lo) * n
    tol = 1e-9 * n
    if np.any(s < -tol) or np.any(s > n + tol):
        raise ValueError("points lie outside the mesh bounding box")
    cell = np.clip(np.floor(s).astype(np.int64), 0, n - 1)
    return cell, np.clip(s - cell, 0.0, 1.0)


def interpolate_layer(mesh: LayerMesh, values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Values of the P1 field ``values`` (one row per node) at ``points``.

    Cells are split into the six Kuhn tetrahedra along the (0,0,0)-(1,1,1)
    diagonal, so the tetrahedron holding a point follows from the order of its
    local coordinates and the barycentric weights are their successive gaps.
    """
    nx, ny, nz = mesh.shape
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    idx, frac = [], []
    for a, n in enumerate((nx, ny, nz)):
        c, f = _locate(points[:, a], lo[a], hi[a], n)
        idx.append(c)
        frac.append(f)
    idx = np.column_stack(idx)
    frac = np.column_stack(frac)
    order = np.argsort(-frac, axis=1, kind="stable")
    xs = np.take_along_axis(frac, order, axis=1)
    w = np.column_stack([1.0 - xs[:, 0], xs[:, 0] - xs[:, 1], xs[:, 1] - xs[:, 2], xs[:, 2]])

    strides = np.array([1, nx + 1, (nx + 1) * (ny + 1)])
    corner = idx @ strides
    out = w[:, :1] * values[corner]
    for j in range(3):
        corner = corner + strides[order[:, j]]
        out = out + w[:, j + 1 : j + 2] * values[corner]
    return out


def grids_nested(coarse: LayerMesh, fine: LayerMesh) -> bool:
    """Whether every horizontal grid line of ``coarse`` is also one of ``fine``."""
    return all(f % c == 0 for c, f in zip(coarse.shape[:2], fine.shape[:2]))
