"""Interface coupling operators, friction functional and multiplier projection.

Sign conventions on a horizontal interface between an upper layer k and a
lower layer k+1 (outward normals (0,0,-1) and (0,0,+1)):

* normal jump ``[v_N] = v_z(lower) - v_z(upper)``; positive means interpenetration;
* tangential jump ``[v_T] = v_xy(upper) - v_xy(lower)``.

Multipliers follow the convention where the friction bound lives in the
feasible set: ``lambda_N >= 0`` and ``|lambda_T| <= g`` at every multiplier
point, paired with the jumps through ``G = [G_N; G_T]``.  The physical
tangential stress is ``-lambda_T``.

Multiplier vectors are flat arrays ``[lambda_N (N_l), lambda_T (2 N_l, xy interleaved)]``
with interfaces stacked in order inside each block.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .assembly import DofMap
from .mesh import ContactPairing, MeshError, TetMesh, extract_contact_pairing

__all__ = [
    "ContactSpaceKind",
    "FrictionField",
    "CouplingOperators",
    "MultiplierVector",
    "assemble_coupling",
    "jump_values",
    "slip_integral",
    "friction_functional_j",
    "support_friction",
    "project_feasible",
]

# degree-2 interior rule on triangles (barycentric points, weights sum to 1)
_TRI_Q2 = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
_TRI_W2 = np.full(3, 1 / 3)


class ContactSpaceKind(str, Enum):
    """Multiplier space on the contact triangulation."""

    ELEMENTWISE_CONSTANT = "p0"
    NODAL_LINEAR = "p1"

    @classmethod
    def parse(cls, value) -> "ContactSpaceKind":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


def _basis_gram(pairing: ContactPairing, kind: ContactSpaceKind) -> sp.csr_matrix:
    """Mixed Gram matrix ``int psi_p phi_a ds`` (multiplier points x contact nodes)."""
    tri = pairing.triangles
    area = pairing.triangle_areas()
    m = pairing.n_nodes
    if kind is ContactSpaceKind.NODAL_LINEAR:
        local = (np.ones((3, 3)) + np.eye(3)) / 12.0
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        vals = (area[:, None] * local.ravel()[None]).ravel()
        return sp.coo_matrix((vals, (rows, cols)), shape=(m, m)).tocsr()
    rows = np.repeat(np.arange(tri.shape[0]), 3)
    vals = np.repeat(area / 3.0, 3)
    return sp.coo_matrix((vals, (rows, tri.ravel())), shape=(tri.shape[0], m)).tocsr()


def _point_gram(pairing: ContactPairing, kind: ContactSpaceKind) -> sp.csr_matrix:
    """Gram matrix ``int psi_p psi_q ds`` of the multiplier basis."""
    if kind is ContactSpaceKind.NODAL_LINEAR:
        return _basis_gram(pairing, kind)
    return sp.diags(pairing.triangle_areas()).tocsr()


@dataclass(frozen=True, eq=False)
class CouplingOperators:
    """Sparse jump operators for every interface plus the data needed to interpret them.

    ``G_N`` has one row per multiplier point, ``G_T`` two rows (x, y) per point.
    ``point_offsets[k]:point_offsets[k+1]`` are the points of interface ``k``.
    """

    kind: ContactSpaceKind
    G_N: sp.csr_matrix
    G_T: sp.csr_matrix
    mass: sp.csr_matrix
    pairings: tuple[ContactPairing, ...]
    node_grams: tuple[sp.csr_matrix, ...]
    point_offsets: np.ndarray
    dofs: DofMap

    @property
    def n_points(self) -> int:
        return int(self.point_offsets[-1])

    @property
    def n_multipliers(self) -> int:
        return 3 * self.n_points

    @property
    def G(self) -> sp.csr_matrix:
        return sp.vstack([self.G_N, self.G_T], format="csr")

    @property
    def point_weights(self) -> np.ndarray:
        """``int psi_p ds`` for every multiplier point."""
        return np.asarray(self.mass.sum(axis=1)).ravel()

    @property
    def block_gram(self) -> sp.csr_matrix:
        """Gram matrix on the full multiplier vector (normal block, then xy-interleaved block)."""
        return sp.block_diag([self.mass, sp.kron(self.mass, sp.eye(2))], format="csr")

    def interface_points(self, k: int) -> slice:
        return slice(int(self.point_offsets[k]), int(self.point_offsets[k + 1]))

    def interface_rows(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Row indices of interface ``k`` in ``G_N`` and ``G_T``."""
        pts = np.arange(self.point_offsets[k], self.point_offsets[k + 1])
        return pts, np.column_stack([2 * pts, 2 * pts + 1]).ravel()


@dataclass(frozen=True)
class FrictionField:
    """Friction bound per multiplier point."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if (v < 0).any() or not np.isfinite(v).all():
            raise ValueError("friction bounds must be finite and non-negative")
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, ops: CouplingOperators, bounds: Sequence[float]) -> "FrictionField":
        if len(bounds) != len(ops.pairings):
            raise ValueError(f"expected {len(ops.pairings)} friction bounds, got {len(bounds)}")
        sizes = np.diff(ops.point_offsets)
        return cls(np.repeat(np.asarray(bounds, dtype=float), sizes))

    def scaled(self, s: float) -> "FrictionField":
        return FrictionField(s * self.values)


@dataclass(frozen=True, eq=False)
class MultiplierVector:
    values: np.ndarray
    n_points: int
    kind: ContactSpaceKind | None = None

    def __post_init__(self):
        if self.values.shape != (3 * self.n_points,):
            raise ValueError(f"expected {3 * self.n_points} multiplier values, got {self.values.shape}")

    @classmethod
    def zeros(cls, ops: CouplingOperators) -> "MultiplierVector":
        return cls(np.zeros(ops.n_multipliers), ops.n_points, ops.kind)

    @property
    def normal(self) -> np.ndarray:
        return self.values[: self.n_points]

    @property
    def tangential(self) -> np.ndarray:
        return self.values[self.n_points :].reshape(-1, 2)

    def is_feasible(self, friction: FrictionField, atol: float = 0.0) -> bool:
        return bool(
            (self.normal >= -atol).all()
            and (np.linalg.norm(self.tangential, axis=1) <= friction.values + atol).all()
        )


def assemble_coupling(
    mesh: TetMesh,
    kind: ContactSpaceKind | str,
    pairings: Sequence[ContactPairing] | None = None,
    dofs: DofMap | None = None,
) -> CouplingOperators:
    """Assemble ``G_N``, ``G_T`` and the contact mass matrix over all interfaces.

    Row ``p`` of ``G_N`` applied to ``v`` equals ``int psi_p [v_N] ds``; rows
    ``2p, 2p+1`` of ``G_T`` give ``int psi_p [v_T]_{x,y} ds``.  Both integrals
    are exact because the matched meshes share one surface triangulation.
    """
    kind = ContactSpaceKind.parse(kind)
    dofs = dofs or DofMap.from_mesh(mesh)
    if pairings is None:
        pairings = [extract_contact_pairing(mesh, k) for k in range(mesh.n_interfaces)]
    if len(pairings) != mesh.n_interfaces:
        raise MeshError(f"expected {mesh.n_interfaces} pairings, got {len(pairings)}")

    n = dofs.n_dofs
    gn_blocks, gt_blocks, masses, grams, sizes = [], [], [], [], []
    for pairing in pairings:
        k = pairing.interface
        W = _basis_gram(pairing, kind)  # points x contact nodes
        up = dofs.node_dofs(k, pairing.upper_nodes)
        lo = dofs.node_dofs(k + 1, pairing.lower_nodes)

        def select(d):
            keep = d >= 0
            m = pairing.n_nodes
            return sp.coo_matrix((np.ones(keep.sum()), (np.flatnonzero(keep), d[keep])), shape=(m, n)).tocsr()

        gn_blocks.append(W @ (select(lo[:, 2]) - select(up[:, 2])))
        tx = W @ (select(up[:, 0]) - select(lo[:, 0]))
        ty = W @ (select(up[:, 1]) - select(lo[:, 1]))
        gt = sp.vstack([tx, ty]).tocsr()
        p = W.shape[0]
        perm = np.column_stack([np.arange(p), p + np.arange(p)]).ravel()  # interleave x, y
        gt_blocks.append(gt[perm])
        masses.append(_point_gram(pairing, kind))
        grams.append(_basis_gram(pairing, ContactSpaceKind.NODAL_LINEAR))
        sizes.append(p)
    if gn_blocks:
        G_N = sp.vstack(gn_blocks, format="csr")
        G_T = sp.vstack(gt_blocks, format="csr")
        mass = sp.block_diag(masses, format="csr")
    else:
        G_N, G_T, mass = sp.csr_matrix((0, n)), sp.csr_matrix((0, n)), sp.csr_matrix((0, 0))
    G_N.eliminate_zeros()
    G_T.eliminate_zeros()
    return CouplingOperators(
        kind=kind,
        G_N=G_N,
        G_T=G_T,
        mass=mass,
        pairings=tuple(pairings),
        node_grams=tuple(grams),
        point_offsets=np.concatenate([[0], np.cumsum(sizes)]).astype(int),
        dofs=dofs,
    )


def jump_values(u: np.ndarray, pairing: ContactPairing, dofs: DofMap) -> tuple[np.ndarray, np.ndarray]:
    """Nodal jumps at the paired nodes: ``[u_N]`` (m,) and ``[u_T]`` (m, 2)."""
    k = pairing.interface
    u = np.asarray(u)

    def nodal(layer, nodes):
        d = dofs.node_dofs(layer, nodes)
        vals = np.where(d >= 0, u[np.maximum(d, 0)], 0.0)
        return vals

    up = nodal(k, pairing.upper_nodes)
    lo = nodal(k + 1, pairing.lower_nodes)
    return lo[:, 2] - up[:, 2], up[:, :2] - lo[:, :2]


def _point_values_at_quadrature(values: np.ndarray, pairing: ContactPairing, kind: ContactSpaceKind) -> np.ndarray:
    """Evaluate a multiplier-space scalar field at the degree-2 quadrature points (T, 3)."""
    if kind is ContactSpaceKind.NODAL_LINEAR:
        return values[pairing.triangles] @ _TRI_Q2.T
    return np.repeat(values[:, None], 3, axis=1)


def slip_integral(slip: np.ndarray, g: np.ndarray, pairing: ContactPairing, kind: ContactSpaceKind) -> float:
    """``int g |s| ds`` for a P1 nodal slip field ``slip`` (m, 2) and bounds ``g`` per multiplier point."""
    s_q = np.einsum("qa,tad->tqd", _TRI_Q2, slip[pairing.triangles])
    g_q = _point_values_at_quadrature(np.asarray(g, dtype=float), pairing, kind)
    area = pairing.triangle_areas()
    return float(np.sum(area[:, None] * _TRI_W2[None] * g_q * np.linalg.norm(s_q, axis=2)))


def friction_functional_j(u: np.ndarray, friction: FrictionField, ops: CouplingOperators) -> float:
    """``j(u) = sum_k int g |[u_T]| ds`` by degree-2 quadrature of the interpolated slip."""
    total = 0.0
    for k, pairing in enumerate(ops.pairings):
        _, slip = jump_values(u, pairing, ops.dofs)
        total += slip_integral(slip, friction.values[ops.interface_points(k)], pairing, ops.kind)
    return total


def support_friction(u: np.ndarray, friction: FrictionField, ops: CouplingOperators) -> float:
    """Discrete friction term ``max_{|mu_T| <= g} mu_T . G_T u = sum_p g_p |(G_T u)_p|``.

    This is the friction functional the dual problem actually minimises against;
    it agrees with :func:`friction_functional_j` up to quadrature of ``|.|``.
    """
    s = (ops.G_T @ u).reshape(-1, 2)
    return float(friction.values @ np.linalg.norm(s, axis=1))


def _project(values: np.ndarray, n_points: int, g: np.ndarray) -> np.ndarray:
    out = values.copy()
    np.maximum(out[:n_points], 0.0, out=out[:n_points])
    t = out[n_points:].reshape(-1, 2)
    norm = np.linalg.norm(t, axis=1)
    over = norm > g
    t[over] *= (g[over] / norm[over])[:, None]
    # rounding can leave |t| a few ulps above g; shrink until the bound holds exactly
    for _ in range(8):
        bad = np.linalg.norm(t, axis=1) > g
        if not bad.any():
            break
        t[bad] *= 1.0 - 4.0 * np.finfo(float).eps
    return out


def project_feasible(mu, friction: FrictionField | np.ndarray):
    """Euclidean projection onto ``{mu_N >= 0, |mu_T(p)| <= g(p)}``.

    Accepts a :class:`MultiplierVector` (returns one) or a flat array.
    """
    g = friction.values if isinstance(friction, FrictionField) else np.asarray(friction, dtype=float)
    if isinstance(mu, MultiplierVector):
        return MultiplierVector(_project(mu.values, mu.n_points, g), mu.n_points, mu.kind)
    mu = np.asarray(mu, dtype=float)
    return _project(mu, mu.shape[0] // 3, g)
