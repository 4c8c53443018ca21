"""Structured tetrahedral meshes of stacked rectangular layers.

Layer 0 is the topmost layer; z decreases with the layer index.  Every layer
is a box over the same rectangular footprint, discretised by an
``nx x ny x nz`` grid of hexahedra, each split into six tetrahedra along the
main diagonal (Kuhn subdivision).  Because every cell uses the same diagonal
direction the split is conforming across cell faces, and the xy grid is shared
by all layers so interface nodes match one-to-one.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

__all__ = [
    "Layer",
    "LayerStackSpec",
    "FacetTag",
    "LayerMesh",
    "TetMesh",
    "ContactPairing",
    "MeshDiagnostics",
    "MeshError",
    "build_layer_stack",
    "extract_contact_pairing",
    "validate_mesh",
]

PAIRING_RTOL = 1e-12


class MeshError(ValueError):
    """Raised for invalid geometry requests or non-matching interfaces."""


class FacetTag(IntEnum):
    DIRICHLET = 1
    TRACTION = 2
    CONTACT_TOP = 3
    CONTACT_BOTTOM = 4


@dataclass(frozen=True)
class Layer:
    thickness: float
    material: int = 0


@dataclass(frozen=True)
class LayerStackSpec:
    """Footprint ``(x_min, x_max, y_min, y_max)`` and layers ordered top to bottom."""

    footprint: tuple[float, float, float, float]
    layers: tuple[Layer, ...]
    z_top: float

    def __post_init__(self):
        x0, x1, y0, y1 = self.footprint
        if not (x1 > x0 and y1 > y0):
            raise MeshError(f"footprint extents must be positive, got {self.footprint}")
        if len(self.layers) < 1:
            raise MeshError("at least one layer is required")
        for k, layer in enumerate(self.layers):
            if not layer.thickness > 0:
                raise MeshError(f"layer {k} has non-positive thickness {layer.thickness}")
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "footprint", tuple(float(v) for v in self.footprint))

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def diameter(self) -> float:
        x0, x1, y0, y1 = self.footprint
        return float(np.hypot(x1 - x0, y1 - y0))

    @property
    def footprint_area(self) -> float:
        x0, x1, y0, y1 = self.footprint
        return (x1 - x0) * (y1 - y0)

    def z_bounds(self, k: int) -> tuple[float, float]:
        """(z_bottom, z_top) of layer ``k``."""
        t = np.array([layer.thickness for layer in self.layers])
        top = self.z_top - t[:k].sum()
        return float(top - t[k]), float(top)


@dataclass(frozen=True, eq=False)
class LayerMesh:
    """Mesh of a single layer; node ``(ix, iy, iz)`` has index
    ``ix + (nx+1) * (iy + (ny+1) * iz)`` with ``iz = 0`` at the bottom face."""

    index: int
    nodes: np.ndarray
    tets: np.ndarray
    facets: np.ndarray
    facet_tags: np.ndarray
    shape: tuple[int, int, int]
    z_bounds: tuple[float, float]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def h_z(self) -> float:
        return (self.z_bounds[1] - self.z_bounds[0]) / self.shape[2]

    def facets_with(self, tag: FacetTag) -> np.ndarray:
        return self.facets[self.facet_tags == tag]

    @property
    def dirichlet_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.facets_with(FacetTag.DIRICHLET).ravel()] = True
        return mask

    @property
    def free_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet_mask)

    def tet_volumes(self) -> np.ndarray:
        return signed_volumes(self.nodes, self.tets)


@dataclass(frozen=True, eq=False)
class TetMesh:
    spec: LayerStackSpec
    h: float
    layers: tuple[LayerMesh, ...]
    node_offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        counts = [lm.n_nodes for lm in self.layers]
        object.__setattr__(self, "node_offsets", np.concatenate([[0], np.cumsum(counts)]))

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def n_interfaces(self) -> int:
        return len(self.layers) - 1

    @property
    def n_nodes(self) -> int:
        return int(self.node_offsets[-1])

    @property
    def n_tets(self) -> int:
        return sum(lm.tets.shape[0] for lm in self.layers)

    def global_node(self, layer: int, local) -> np.ndarray:
        return self.node_offsets[layer] + np.asarray(local)


@dataclass(frozen=True, eq=False)
class ContactPairing:
    """Matched nodes and triangles across interface ``k`` (between layers k and k+1).

    ``upper_nodes[j]`` (bottom face of layer k) and ``lower_nodes[j]`` (top face
    of layer k+1) are coincident; pairs are ordered lexicographically by (x, y).
    ``triangles`` index into the pair list and describe the shared surface mesh.
    """

    interface: int
    upper_nodes: np.ndarray
    lower_nodes: np.ndarray
    xy: np.ndarray
    triangles: np.ndarray
    upper_facets: np.ndarray
    lower_facets: np.ndarray
    z: float
    upper_normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -1.0]))
    lower_normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    @property
    def n_nodes(self) -> int:
        return self.upper_nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def triangle_areas(self) -> np.ndarray:
        p = self.xy[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])


@dataclass
class MeshDiagnostics:
    passed: bool
    min_volume: float
    max_volume: float
    volume_error: list[float]
    tag_areas: list[dict[str, float]]
    failures: list[str]


def signed_volumes(nodes: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = nodes[tets]
    d = p[:, 1:] - p[:, :1]
    return np.linalg.det(d) / 6.0


# Kuhn subdivision: one tetrahedron per axis permutation, walking from corner
# (0,0,0) to (1,1,1) one axis at a time.
_KUHN_PATHS = list(itertools.permutations(range(3)))


def _kuhn_corners() -> np.ndarray:
    out = []
    for perm in _KUHN_PATHS:
        c = np.zeros(3, dtype=int)
        verts = [c.copy()]
        for axis in perm:
            c[axis] = 1
            verts.append(c.copy())
        out.append(verts)
    return np.array(out)  # (6, 4, 3)


def _layer_mesh(k, x_edges, y_edges, z_edges, top_tag, bottom_tag) -> LayerMesh:
    nx, ny, nz = len(x_edges) - 1, len(y_edges) - 1, len(z_edges) - 1
    sx, sy = nx + 1, (nx + 1) * (ny + 1)

    zz, yy, xx = np.meshgrid(z_edges, y_edges, x_edges, indexing="ij")
    nodes = np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])

    iz, iy, ix = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    base = (ix + sx * iy + sy * iz).ravel()
    corners = _kuhn_corners()
    offsets = corners[..., 0] + sx * corners[..., 1] + sy * corners[..., 2]  # (6, 4)
    tets = (base[:, None, None] + offsets[None]).reshape(-1, 4)
    vol = signed_volumes(nodes, tets)
    flip = vol < 0
    tets[flip] = tets[flip][:, [0, 2, 1, 3]]

    def face(axis, index):
        # quad grid on the face normal to `axis`; triangles share the diagonal
        # from the low corner to the high corner, as the Kuhn tets do
        dims = [nx, ny, nz]
        strides = [1, sx, sy]
        a1, a2 = [a for a in range(3) if a != axis]
        i1, i2 = np.meshgrid(np.arange(dims[a1]), np.arange(dims[a2]), indexing="ij")
        c00 = (index * strides[axis] + i1 * strides[a1] + i2 * strides[a2]).ravel()
        c10 = c00 + strides[a1]
        c01 = c00 + strides[a2]
        c11 = c10 + strides[a2]
        return np.concatenate([np.column_stack([c00, c10, c11]), np.column_stack([c00, c01, c11])])

    groups = [
        (face(0, 0), FacetTag.DIRICHLET),
        (face(0, nx), FacetTag.DIRICHLET),
        (face(1, 0), FacetTag.DIRICHLET),
        (face(1, ny), FacetTag.DIRICHLET),
        (face(2, nz), top_tag),
        (face(2, 0), bottom_tag),
    ]
    facets = np.concatenate([g for g, _ in groups])
    tags = np.concatenate([np.full(len(g), int(t), dtype=np.int8) for g, t in groups])
    return LayerMesh(
        index=k,
        nodes=nodes,
        tets=tets,
        facets=facets,
        facet_tags=tags,
        shape=(nx, ny, nz),
        z_bounds=(float(z_edges[0]), float(z_edges[-1])),
    )


def build_layer_stack(spec: LayerStackSpec, h: float) -> TetMesh:
    """Mesh every layer of ``spec`` with target size ``h``.

    ``nx = round(Lx/h)``, ``ny = round(Ly/h)`` (at least 1) and per layer
    ``nz = max(1, round(t/h))``; the effective vertical spacing is available as
    ``LayerMesh.h_z``.
    """
    if not h > 0:
        raise MeshError(f"mesh size must be positive, got {h}")
    x0, x1, y0, y1 = spec.footprint
    nx = max(1, int(round((x1 - x0) / h)))
    ny = max(1, int(round((y1 - y0) / h)))
    x_edges = x0 + (x1 - x0) * np.arange(nx + 1) / nx
    y_edges = y0 + (y1 - y0) * np.arange(ny + 1) / ny
    n = spec.n_layers
    layers = []
    for k, layer in enumerate(spec.layers):
        zb, zt = spec.z_bounds(k)
        nz = max(1, int(round(layer.thickness / h)))
        z_edges = zb + (zt - zb) * np.arange(nz + 1) / nz
        top = FacetTag.TRACTION if k == 0 else FacetTag.CONTACT_TOP
        bottom = FacetTag.DIRICHLET if k == n - 1 else FacetTag.CONTACT_BOTTOM
        layers.append(_layer_mesh(k, x_edges, y_edges, z_edges, top, bottom))
    return TetMesh(spec=spec, h=float(h), layers=tuple(layers))


def _quantized_xy(xy: np.ndarray, origin: np.ndarray, tol: float) -> np.ndarray:
    return np.round((xy - origin) / tol).astype(np.int64)


def extract_contact_pairing(mesh: TetMesh, interface: int) -> ContactPairing:
    """Pair the bottom face of layer ``interface`` with the top face of the next layer."""
    if not 0 <= interface < mesh.n_interfaces:
        raise MeshError(
            f"interface {interface} out of range for a {mesh.n_layers}-layer mesh "
            f"(valid: 0..{mesh.n_interfaces - 1})"
        )
    upper = mesh.layers[interface]
    lower = mesh.layers[interface + 1]
    up_facets = np.flatnonzero(upper.facet_tags == FacetTag.CONTACT_BOTTOM)
    lo_facets = np.flatnonzero(lower.facet_tags == FacetTag.CONTACT_TOP)
    up_nodes = np.unique(upper.facets[up_facets])
    lo_nodes = np.unique(lower.facets[lo_facets])
    if up_nodes.size != lo_nodes.size:
        raise MeshError(
            f"interface {interface}: {up_nodes.size} upper vs {lo_nodes.size} lower nodes; "
            "non-matching meshes are not supported"
        )

    tol = PAIRING_RTOL * mesh.spec.diameter
    origin = np.array(mesh.spec.footprint[::2])
    q_up = _quantized_xy(upper.nodes[up_nodes, :2], origin, tol)
    q_lo = _quantized_xy(lower.nodes[lo_nodes, :2], origin, tol)
    order_up = np.lexsort((q_up[:, 1], q_up[:, 0]))
    order_lo = np.lexsort((q_lo[:, 1], q_lo[:, 0]))
    up_nodes, lo_nodes = up_nodes[order_up], lo_nodes[order_lo]
    gap = np.abs(upper.nodes[up_nodes, :2] - lower.nodes[lo_nodes, :2]).max()
    if gap > tol:
        raise MeshError(f"interface {interface}: unpaired contact node (offset {gap:.3e})")
    z_up = upper.nodes[up_nodes, 2]
    z_lo = lower.nodes[lo_nodes, 2]
    if np.abs(z_up - z_lo).max() > tol:
        raise MeshError(f"interface {interface}: contact faces are not coplanar")

    local_up = np.full(upper.n_nodes, -1)
    local_up[up_nodes] = np.arange(up_nodes.size)
    local_lo = np.full(lower.n_nodes, -1)
    local_lo[lo_nodes] = np.arange(lo_nodes.size)
    tri_up = local_up[upper.facets[up_facets]]
    tri_lo = local_lo[lower.facets[lo_facets]]
    key_up = np.sort(tri_up, axis=1)
    key_lo = np.sort(tri_lo, axis=1)
    o_up = np.lexsort(key_up.T[::-1])
    o_lo = np.lexsort(key_lo.T[::-1])
    if not np.array_equal(key_up[o_up], key_lo[o_lo]):
        raise MeshError(f"interface {interface}: contact triangulations do not match")

    return ContactPairing(
        interface=interface,
        upper_nodes=up_nodes,
        lower_nodes=lo_nodes,
        xy=upper.nodes[up_nodes, :2].copy(),
        triangles=tri_up[o_up],
        upper_facets=up_facets[o_up],
        lower_facets=lo_facets[o_lo],
        z=float(z_up[0]),
    )


def _boundary_faces(tets: np.ndarray) -> np.ndarray:
    faces = np.concatenate([tets[:, [0, 1, 2]], tets[:, [0, 1, 3]], tets[:, [0, 2, 3]], tets[:, [1, 2, 3]]])
    faces = np.sort(faces, axis=1)
    uniq, counts = np.unique(faces, axis=0, return_counts=True)
    return uniq[counts == 1]


def _triangle_areas(nodes: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = nodes[tris]
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def validate_mesh(mesh: TetMesh) -> MeshDiagnostics:
    """Check volumes, facet tag coverage and node uniqueness of every layer."""
    failures: list[str] = []
    vmin, vmax = np.inf, -np.inf
    vol_err, tag_areas = [], []
    valid_tags = {int(t) for t in FacetTag}
    x0, x1, y0, y1 = mesh.spec.footprint
    for lm in mesh.layers:
        k = lm.index
        vol = lm.tet_volumes()
        vmin, vmax = min(vmin, vol.min()), max(vmax, vol.max())
        if (vol <= 0).any():
            failures.append(f"layer {k}: {(vol <= 0).sum()} tetrahedra with non-positive (negative) volume")
        box = (x1 - x0) * (y1 - y0) * (lm.z_bounds[1] - lm.z_bounds[0])
        err = abs(np.abs(vol).sum() - box) / box
        vol_err.append(float(err))
        if err > 1e-10:
            failures.append(f"layer {k}: volume mismatch {err:.3e}")

        bad = ~np.isin(lm.facet_tags, list(valid_tags))
        if bad.any():
            failures.append(f"layer {k}: tag coverage: {bad.sum()} facets carry no valid tag")
        tagged = np.sort(lm.facets[~bad], axis=1)
        boundary = _boundary_faces(lm.tets)
        t_uniq, t_counts = np.unique(tagged, axis=0, return_counts=True)
        if (t_counts > 1).any():
            failures.append(f"layer {k}: tag coverage: {(t_counts > 1).sum()} facets tagged more than once")
        if t_uniq.shape != boundary.shape or not np.array_equal(t_uniq, boundary):
            failures.append(f"layer {k}: tag coverage: tagged facets do not partition the boundary")

        areas = _triangle_areas(lm.nodes, lm.facets)
        tag_areas.append({t.name: float(areas[lm.facet_tags == t].sum()) for t in FacetTag})

        _, counts = np.unique(lm.nodes, axis=0, return_counts=True)
        if (counts > 1).any():
            failures.append(f"layer {k}: {(counts > 1).sum()} duplicated nodes")
    return MeshDiagnostics(
        passed=not failures,
        min_volume=float(vmin),
        max_volume=float(vmax),
        volume_error=vol_err,
        tag_areas=tag_areas,
        failures=failures,
    )
