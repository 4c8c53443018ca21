"""P1 linear elasticity on layered tetrahedral meshes.

Unknowns are the nodal displacements of the free (non-Dirichlet) nodes,
layer by layer and node-major: ``[ux, uy, uz]`` for every free node of layer
0, then layer 1, and so on.  Dirichlet nodes are eliminated, so the global
stiffness is block diagonal with one SPD block per layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .mesh import FacetTag, LayerMesh, TetMesh

__all__ = [
    "IsotropicMaterial",
    "LoadSpec",
    "DofMap",
    "SparseSymmetric",
    "DisplacementField",
    "lame_parameters",
    "elasticity_matrix",
    "element_stiffness",
    "assemble_stiffness",
    "assemble_loads",
    "compute_element_stress",
    "energy_norm",
    "evaluate_primal_objective",
]

_CHUNK = 200_000


def lame_parameters(E: float, nu: float) -> tuple[float, float]:
    """Return ``(lambda, mu)`` for Young's modulus ``E`` and Poisson ratio ``nu``."""
    if not E > 0:
        raise ValueError(f"elastic modulus must be positive, got {E}")
    if not -1.0 < nu < 0.5:
        raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return lam, mu


@dataclass(frozen=True)
class IsotropicMaterial:
    E: float
    nu: float

    def __post_init__(self):
        lame_parameters(self.E, self.nu)

    @property
    def lame_lambda(self) -> float:
        return lame_parameters(self.E, self.nu)[0]

    @property
    def lame_mu(self) -> float:
        return lame_parameters(self.E, self.nu)[1]

    @property
    def spectral_bounds(self) -> tuple[float, float]:
        """Smallest and largest eigenvalue of the elasticity tensor on symmetric tensors."""
        lam, mu = lame_parameters(self.E, self.nu)
        return 2.0 * mu, 3.0 * lam + 2.0 * mu

    def stress(self, strain: np.ndarray) -> np.ndarray:
        """sigma = lambda tr(eps) I + 2 mu eps, for strain arrays of shape (..., 3, 3)."""
        lam, mu = lame_parameters(self.E, self.nu)
        tr = np.trace(strain, axis1=-2, axis2=-1)
        return lam * tr[..., None, None] * np.eye(3) + 2.0 * mu * strain


@dataclass(frozen=True)
class LoadSpec:
    """Per-layer body force and a uniform traction on a rectangular patch of the top face.

    ``traction_patch`` is ``(x0, x1, y0, y1)``; ``None`` means the whole top face.
    """

    body_force: tuple[tuple[float, float, float], ...]
    traction: tuple[float, float, float] = (0.0, 0.0, 0.0)
    traction_patch: tuple[float, float, float, float] | None = None

    def scaled(self, s: float) -> "LoadSpec":
        return LoadSpec(
            body_force=tuple(tuple(s * c for c in b) for b in self.body_force),
            traction=tuple(s * c for c in self.traction),
            traction_patch=self.traction_patch,
        )


@dataclass(frozen=True, eq=False)
class DofMap:
    """Free-node numbering shared by every operator on a mesh."""

    free_nodes: tuple[np.ndarray, ...]
    node_to_free: tuple[np.ndarray, ...]
    offsets: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: TetMesh) -> "DofMap":
        free, lookup, sizes = [], [], []
        for lm in mesh.layers:
            f = lm.free_nodes
            m = np.full(lm.n_nodes, -1)
            m[f] = np.arange(f.size)
            free.append(f)
            lookup.append(m)
            sizes.append(3 * f.size)
        return cls(tuple(free), tuple(lookup), np.concatenate([[0], np.cumsum(sizes)]))

    @property
    def n_dofs(self) -> int:
        return int(self.offsets[-1])

    @property
    def n_layers(self) -> int:
        return len(self.free_nodes)

    def layer_slice(self, layer: int) -> slice:
        return slice(int(self.offsets[layer]), int(self.offsets[layer + 1]))

    def node_dofs(self, layer: int, nodes, local: bool = False) -> np.ndarray:
        """(k, 3) dof indices of layer-local ``nodes``; -1 for Dirichlet nodes."""
        pos = self.node_to_free[layer][np.asarray(nodes)]
        base = 0 if local else int(self.offsets[layer])
        dofs = base + 3 * pos[:, None] + np.arange(3)
        dofs[pos < 0] = -1
        return dofs

    def nodal(self, u: np.ndarray, layer: int, n_nodes: int) -> np.ndarray:
        """Expand the layer block of ``u`` to an (n_nodes, 3) array with zeros on Dirichlet nodes."""
        out = np.zeros((n_nodes, 3))
        out[self.free_nodes[layer]] = u[self.layer_slice(layer)].reshape(-1, 3)
        return out

    def from_nodal(self, fields: Sequence[np.ndarray]) -> np.ndarray:
        """Inverse of :meth:`nodal`: restrict per-layer nodal arrays to free dofs."""
        return np.concatenate([np.asarray(f)[fn].ravel() for f, fn in zip(fields, self.free_nodes)])


@dataclass(frozen=True, eq=False)
class SparseSymmetric:
    """Global stiffness: CSR matrix plus the layer block structure."""

    matrix: sp.csr_matrix
    dofs: DofMap

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def block(self, layer: int) -> sp.csr_matrix:
        s = self.dofs.layer_slice(layer)
        return self.matrix[s, s].tocsr()

    def __matmul__(self, x):
        return self.matrix @ x


@dataclass(frozen=True, eq=False)
class DisplacementField:
    values: np.ndarray
    dofs: DofMap
    mesh: TetMesh = field(repr=False)

    def __post_init__(self):
        if self.values.shape != (self.dofs.n_dofs,):
            raise ValueError(f"expected {self.dofs.n_dofs} values, got {self.values.shape}")

    def layer(self, k: int) -> np.ndarray:
        return self.dofs.nodal(self.values, k, self.mesh.layers[k].n_nodes)


def elasticity_matrix(lam: float, mu: float) -> np.ndarray:
    """6x6 Voigt matrix for engineering shear strains (xx, yy, zz, yz, xz, xy)."""
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] += 2.0 * mu
    D[np.arange(3, 6), np.arange(3, 6)] = mu
    return D


def _gradients(nodes: np.ndarray, tets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric gradients (E, 4, 3) and volumes (E,) of every tetrahedron."""
    p = nodes[tets]
    J = p[:, 1:] - p[:, :1]  # rows are edge vectors
    vol = np.linalg.det(J) / 6.0
    Jinv = np.linalg.inv(J)  # columns are grad(lambda_1..3)
    g = np.empty((tets.shape[0], 4, 3))
    g[:, 1:] = np.transpose(Jinv, (0, 2, 1))
    g[:, 0] = -g[:, 1:].sum(axis=1)
    return g, vol


def _strain_matrices(grads: np.ndarray) -> np.ndarray:
    """(E, 6, 12) strain-displacement matrices in engineering Voigt notation."""
    E = grads.shape[0]
    B = np.zeros((E, 6, 12))
    gx, gy, gz = grads[..., 0], grads[..., 1], grads[..., 2]
    B[:, 0, 0::3] = gx
    B[:, 1, 1::3] = gy
    B[:, 2, 2::3] = gz
    B[:, 3, 1::3] = gz
    B[:, 3, 2::3] = gy
    B[:, 4, 0::3] = gz
    B[:, 4, 2::3] = gx
    B[:, 5, 0::3] = gy
    B[:, 5, 1::3] = gx
    return B


def element_stiffness(coords: np.ndarray, material: IsotropicMaterial) -> np.ndarray:
    """12x12 stiffness of one tetrahedron with vertex ``coords`` (4, 3)."""
    g, vol = _gradients(coords, np.arange(4)[None])
    B = _strain_matrices(g)[0]
    D = elasticity_matrix(material.lame_lambda, material.lame_mu)
    return abs(vol[0]) * B.T @ D @ B


def _layer_stiffness(lm: LayerMesh, material: IsotropicMaterial, node_to_free: np.ndarray) -> sp.csr_matrix:
    n = 3 * int((node_to_free >= 0).sum())
    D = elasticity_matrix(material.lame_lambda, material.lame_mu)
    K = sp.csr_matrix((n, n))
    # chunks keep the COO triplets bounded; chunks are reduced in element order
    for start in range(0, lm.tets.shape[0], _CHUNK):
        tets = lm.tets[start : start + _CHUNK]
        g, vol = _gradients(lm.nodes, tets)
        B = _strain_matrices(g)
        Ke = np.abs(vol)[:, None, None] * np.einsum("eki,kl,elj->eij", B, D, B, optimize=True)
        pos = node_to_free[tets]
        dofs = 3 * pos[:, :, None] + np.arange(3)
        dofs[pos < 0] = -1
        dofs = dofs.reshape(-1, 12)
        rows = np.broadcast_to(dofs[:, :, None], Ke.shape)
        cols = np.broadcast_to(dofs[:, None, :], Ke.shape)
        keep = (rows >= 0) & (cols >= 0)
        K = K + sp.coo_matrix((Ke[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    return K


def assemble_stiffness(mesh: TetMesh, materials: Sequence[IsotropicMaterial]) -> SparseSymmetric:
    """Block-diagonal stiffness over free dofs; ``materials`` is indexed by ``Layer.material``."""
    dofs = DofMap.from_mesh(mesh)
    blocks = []
    for lm, layer in zip(mesh.layers, mesh.spec.layers):
        Kl = _layer_stiffness(lm, materials[layer.material], dofs.node_to_free[lm.index])
        blocks.append(0.5 * (Kl + Kl.T))
    K = sp.block_diag(blocks, format="csr")
    K.sort_indices()
    return SparseSymmetric(K, dofs)


def _inside_patch(xy: np.ndarray, patch, tol: float) -> np.ndarray:
    x0, x1, y0, y1 = patch
    return (xy[..., 0] >= x0 - tol) & (xy[..., 0] <= x1 + tol) & (xy[..., 1] >= y0 - tol) & (xy[..., 1] <= y1 + tol)


def _subdivision_rule(depth: int) -> tuple[np.ndarray, np.ndarray]:
    """Centroids (barycentric) and weights of a ``4**depth`` uniform triangle subdivision."""
    tris = [np.eye(3)]
    for _ in range(depth):
        nxt = []
        for t in tris:
            a, b, c = t
            ab, bc, ca = (a + b) / 2, (b + c) / 2, (c + a) / 2
            nxt += [np.array(v) for v in ([a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca])]
        tris = nxt
    pts = np.array([t.mean(axis=0) for t in tris])
    return pts, np.full(len(tris), 1.0 / len(tris))


def assemble_loads(mesh: TetMesh, loads: LoadSpec, depth: int = 4) -> np.ndarray:
    """Consistent P1 load vector over free dofs.

    Body forces are integrated exactly; the traction patch is integrated
    exactly on fully covered top triangles and by a depth-``depth`` recursive
    subdivision midpoint rule on triangles cut by the patch boundary.
    """
    dofs = DofMap.from_mesh(mesh)
    f = np.zeros(dofs.n_dofs)
    spec = mesh.spec
    tol = 1e-12 * spec.diameter
    for lm, body in zip(mesh.layers, loads.body_force):
        nodal = np.zeros((lm.n_nodes, 3))
        vol = np.abs(lm.tet_volumes())
        contrib = (vol / 4.0)[:, None] * np.asarray(body, dtype=float)[None]
        for a in range(4):
            np.add.at(nodal, lm.tets[:, a], contrib)
        if lm.index == 0 and any(loads.traction):
            nodal += _traction_nodal(lm, loads, spec, tol, depth)
        f[dofs.layer_slice(lm.index)] = nodal[dofs.free_nodes[lm.index]].ravel()
    return f


def _traction_nodal(lm: LayerMesh, loads: LoadSpec, spec, tol: float, depth: int) -> np.ndarray:
    patch = loads.traction_patch or spec.footprint
    px0, px1, py0, py1 = patch
    fx0, fx1, fy0, fy1 = spec.footprint
    if px0 < fx0 - tol or px1 > fx1 + tol or py0 < fy0 - tol or py1 > fy1 + tol or px1 <= px0 or py1 <= py0:
        raise ValueError(f"traction patch {patch} is not inside the footprint {spec.footprint}")
    t = np.asarray(loads.traction, dtype=float)
    tris = lm.facets_with(FacetTag.TRACTION)
    xy = lm.nodes[tris][..., :2]
    e1, e2 = xy[:, 1] - xy[:, 0], xy[:, 2] - xy[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    inside = _inside_patch(xy, patch, tol).all(axis=1)
    lo, hi = xy.min(axis=1), xy.max(axis=1)
    overlap_x = np.minimum(hi[:, 0], px1) - np.maximum(lo[:, 0], px0)
    overlap_y = np.minimum(hi[:, 1], py1) - np.maximum(lo[:, 1], py0)
    partial = ~inside & (overlap_x > tol) & (overlap_y > tol)

    weights = np.zeros(tris.shape)  # integral of indicator * phi_a per triangle vertex
    weights[inside] = area[inside, None] / 3.0
    if partial.any():
        bary, w = _subdivision_rule(depth)
        pts = np.einsum("qa,tad->tqd", bary, xy[partial])
        hit = _inside_patch(pts, patch, 0.0)
        weights[partial] = area[partial, None] * np.einsum("tq,q,qa->ta", hit, w, bary)
    nodal = np.zeros((lm.n_nodes, 3))
    for a in range(3):
        np.add.at(nodal, tris[:, a], weights[:, a, None] * t[None])
    return nodal


def compute_element_stress(mesh: TetMesh, material: IsotropicMaterial, u, layer: int, elem=None) -> np.ndarray:
    """Constant stress tensor of element(s) ``elem`` of ``layer``; all elements if ``elem`` is None.

    ``u`` is either a :class:`DisplacementField` or an (n_nodes, 3) nodal array for the layer.
    """
    lm = mesh.layers[layer]
    nodal = u.layer(layer) if isinstance(u, DisplacementField) else np.asarray(u)
    tets = lm.tets if elem is None else lm.tets[np.atleast_1d(elem)]
    g, _ = _gradients(lm.nodes, tets)
    grad_u = np.einsum("eai,eaj->eij", nodal[tets], g)  # du_i/dx_j
    strain = 0.5 * (grad_u + np.transpose(grad_u, (0, 2, 1)))
    sigma = material.stress(strain)
    return sigma[0] if elem is not None and np.ndim(elem) == 0 else sigma


def energy_norm(K, u: np.ndarray, layer: int | None = None) -> float:
    """sqrt(u^T K u / 2), optionally restricted to one layer block."""
    A = K.matrix if isinstance(K, SparseSymmetric) else K
    u = np.asarray(u)
    if layer is not None:
        s = K.dofs.layer_slice(layer)
        A, u = A[s, s], u[s] if u.shape[0] == K.shape[0] else u
    if u.shape[0] != A.shape[0]:
        raise ValueError(f"dimension mismatch: K is {A.shape}, u has {u.shape[0]} entries")
    return float(np.sqrt(max(u @ (A @ u), 0.0) / 2.0))


def evaluate_primal_objective(K, f: np.ndarray, u: np.ndarray, j: Callable[[np.ndarray], float] | float | None = None) -> float:
    """J(u) = 1/2 u^T K u + j(u) - f^T u; ``j`` is a callable, a precomputed value, or None (g = 0)."""
    A = K.matrix if isinstance(K, SparseSymmetric) else K
    if not (A.shape[0] == f.shape[0] == u.shape[0]):
        raise ValueError(f"dimension mismatch: K {A.shape}, f {f.shape}, u {u.shape}")
    friction = 0.0 if j is None else (j(u) if callable(j) else float(j))
    return float(0.5 * u @ (A @ u) + friction - f @ u)
