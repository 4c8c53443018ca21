"""Problem definition shared by the solvers and the experiment driver."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .assembly import (
    DofMap,
    IsotropicMaterial,
    LoadSpec,
    SparseSymmetric,
    assemble_loads,
    assemble_stiffness,
)
from .contact import ContactSpaceKind, CouplingOperators, FrictionField, assemble_coupling
from .mesh import Layer, LayerStackSpec, TetMesh, build_layer_stack

__all__ = ["ContactProblem", "DiscreteProblem", "discretize", "pavement_benchmark"]


@dataclass(frozen=True)
class ContactProblem:
    geometry: LayerStackSpec
    materials: tuple[IsotropicMaterial, ...]
    loads: LoadSpec
    friction: tuple[float, ...]

    def __post_init__(self):
        n = self.geometry.n_layers
        if len(self.friction) != n - 1:
            raise ValueError(f"{n} layers need {n - 1} friction bounds, got {len(self.friction)}")
        if len(self.loads.body_force) != n:
            raise ValueError(f"{n} layers need {n} body forces, got {len(self.loads.body_force)}")
        for layer in self.geometry.layers:
            if not 0 <= layer.material < len(self.materials):
                raise ValueError(f"material index {layer.material} out of range")

    def scaled(self, s: float) -> "ContactProblem":
        """Loads and friction bounds multiplied by ``s``."""
        return replace(self, loads=self.loads.scaled(s), friction=tuple(s * g for g in self.friction))


@dataclass(frozen=True, eq=False)
class DiscreteProblem:
    mesh: TetMesh
    stiffness: SparseSymmetric
    load: np.ndarray
    coupling: CouplingOperators
    friction: FrictionField
    problem: ContactProblem

    @property
    def dofs(self) -> DofMap:
        return self.stiffness.dofs

    @property
    def kind(self) -> ContactSpaceKind:
        return self.coupling.kind


def discretize(
    problem: ContactProblem,
    h: float,
    kind: ContactSpaceKind | str = ContactSpaceKind.NODAL_LINEAR,
    mesh: TetMesh | None = None,
    stiffness: SparseSymmetric | None = None,
    load: np.ndarray | None = None,
) -> DiscreteProblem:
    """Mesh, assemble and couple ``problem`` at mesh size ``h``.

    ``mesh``, ``stiffness`` and ``load`` may be passed in to reuse them across contact spaces.
    """
    mesh = mesh or build_layer_stack(problem.geometry, h)
    K = stiffness or assemble_stiffness(mesh, problem.materials)
    f = assemble_loads(mesh, problem.loads) if load is None else load
    ops = assemble_coupling(mesh, kind, dofs=K.dofs)
    friction = FrictionField.uniform(ops, problem.friction)
    return DiscreteProblem(mesh, K, f, ops, friction, problem)


def pavement_benchmark(friction: Sequence[float] = (0.2, 0.05)) -> ContactProblem:
    """Three-layer pavement model: 8 x 4 footprint, thicknesses 0.4 / 0.8 / 1.6."""
    geometry = LayerStackSpec(
        footprint=(0.0, 8.0, 0.0, 4.0),
        layers=(Layer(0.4, 0), Layer(0.8, 1), Layer(1.6, 2)),
        z_top=2.8,
    )
    materials = (
        IsotropicMaterial(5e3, 0.25),
        IsotropicMaterial(2e3, 0.25),
        IsotropicMaterial(2e2, 0.4),
    )
    loads = LoadSpec(
        body_force=((0.0, 0.0, -0.05),) * 3,
        traction=(0.0, -4.5, -22.5),
        traction_patch=(3.8, 4.4, 1.8, 2.2),
    )
    return ContactProblem(geometry, materials, loads, tuple(friction))
