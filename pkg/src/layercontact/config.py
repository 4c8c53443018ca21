"""JSON experiment configuration."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .assembly import IsotropicMaterial, LoadSpec
from .contact import ContactSpaceKind
from .mesh import Layer, LayerStackSpec
from .problem import ContactProblem, pavement_benchmark
from .solver_ldm import DEFAULT_THETA, LdmConfig
from .solver_mfem import SolverConfig

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "SOLVERS"]

SOLVERS = ("mfem", "ldm", "both")

_TOP_KEYS = {"geometry", "materials", "loads", "friction", "mesh", "contact_space", "solver", "mfem", "ldm"}


class ConfigError(ValueError):
    pass


def _check_keys(d: Any, allowed: set[str], where: str, required: set[str] = frozenset()) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(d)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")
    return d


def _vec3(v, where: str) -> tuple[float, float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 3:
        raise ConfigError(f"{where}: expected a 3-vector, got {v!r}")
    return tuple(float(c) for c in v)


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ContactProblem
    h_list: tuple[float, ...]
    contact_space: ContactSpaceKind = ContactSpaceKind.NODAL_LINEAR
    solver: str = "mfem"
    mfem: SolverConfig = field(default_factory=SolverConfig)
    ldm: LdmConfig = field(default_factory=LdmConfig)
    output_dir: Path = Path("results")

    def __post_init__(self):
        if not self.h_list:
            raise ConfigError("mesh.h_list needs at least one mesh size")
        if any(not h > 0 for h in self.h_list):
            raise ConfigError(f"mesh sizes must be positive, got {self.h_list}")
        if self.solver not in SOLVERS:
            raise ConfigError(f"solver must be one of {SOLVERS}, got {self.solver!r}")

    @classmethod
    def benchmark(cls, h_list=(0.4,), **kw) -> "ExperimentConfig":
        return cls(problem=pavement_benchmark(), h_list=tuple(h_list), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        _check_keys(d, _TOP_KEYS, "config", {"geometry", "materials", "loads", "friction", "mesh"})
        try:
            geo = _check_keys(d["geometry"], {"footprint", "layers", "z_top"}, "geometry", {"footprint", "layers", "z_top"})
            layers = []
            for i, lay in enumerate(geo["layers"]):
                _check_keys(lay, {"thickness", "material"}, f"geometry.layers[{i}]", {"thickness"})
                layers.append(Layer(float(lay["thickness"]), int(lay.get("material", i))))
            geometry = LayerStackSpec(tuple(float(c) for c in geo["footprint"]), tuple(layers), float(geo["z_top"]))

            materials = []
            for i, m in enumerate(d["materials"]):
                _check_keys(m, {"E", "nu"}, f"materials[{i}]", {"E", "nu"})
                materials.append(IsotropicMaterial(float(m["E"]), float(m["nu"])))

            ld = _check_keys(d["loads"], {"body_force", "traction"}, "loads")
            bf = ld.get("body_force", [0.0, 0.0, 0.0])
            if bf and not isinstance(bf[0], (list, tuple)):
                bf = [bf] * geometry.n_layers
            body = tuple(_vec3(b, "loads.body_force") for b in bf)
            tr = _check_keys(ld.get("traction", {}), {"vector", "patch"}, "loads.traction")
            traction = _vec3(tr.get("vector", [0.0, 0.0, 0.0]), "loads.traction.vector")
            patch = tr.get("patch")
            loads = LoadSpec(body, traction, None if patch is None else tuple(float(c) for c in patch))

            problem = ContactProblem(geometry, tuple(materials), loads, tuple(float(g) for g in d["friction"]))

            mesh = _check_keys(d["mesh"], {"h_list"}, "mesh", {"h_list"})
            mf = _check_keys(d.get("mfem", {}), {"tol", "max_iter"}, "mfem")
            lf = _check_keys(d.get("ldm", {}), {"theta", "tol", "max_outer"}, "ldm")
            defaults = SolverConfig()
            ldm_defaults = LdmConfig()
            return cls(
                problem=problem,
                h_list=tuple(float(h) for h in mesh["h_list"]),
                contact_space=ContactSpaceKind.parse(d.get("contact_space", "p1")),
                solver=str(d.get("solver", "mfem")),
                mfem=SolverConfig(tol=float(mf.get("tol", defaults.tol)), max_iter=int(mf.get("max_iter", defaults.max_iter))),
                ldm=LdmConfig(
                    theta=float(lf.get("theta", DEFAULT_THETA)),
                    tol=float(lf.get("tol", ldm_defaults.tol)),
                    max_outer=int(lf.get("max_outer", ldm_defaults.max_outer)),
                ),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        p = self.problem
        g = p.geometry
        return {
            "geometry": {
                "footprint": list(g.footprint),
                "layers": [{"thickness": lay.thickness, "material": lay.material} for lay in g.layers],
                "z_top": g.z_top,
            },
            "materials": [{"E": m.E, "nu": m.nu} for m in p.materials],
            "loads": {
                "body_force": [list(b) for b in p.loads.body_force],
                "traction": {
                    "vector": list(p.loads.traction),
                    "patch": None if p.loads.traction_patch is None else list(p.loads.traction_patch),
                },
            },
            "friction": list(p.friction),
            "mesh": {"h_list": list(self.h_list)},
            "contact_space": self.contact_space.value,
            "solver": self.solver,
            "mfem": {"tol": self.mfem.tol, "max_iter": self.mfem.max_iter},
            "ldm": {"theta": self.ldm.theta, "tol": self.ldm.tol, "max_outer": self.ldm.max_outer},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Copy with CLI overrides applied; ``None`` values are ignored."""
        kw = {k: v for k, v in kw.items() if v is not None}
        mfem, ldm = self.mfem, self.ldm
        if "tol" in kw:
            mfem = replace(mfem, tol=kw["tol"])
        if "max_iters" in kw:
            mfem = replace(mfem, max_iter=kw["max_iters"])
            ldm = replace(ldm, max_outer=kw["max_iters"])
        if "theta" in kw:
            ldm = replace(ldm, theta=kw["theta"])
        return replace(
            self,
            h_list=tuple(kw["h_list"]) if "h_list" in kw else self.h_list,
            contact_space=ContactSpaceKind.parse(kw["contact_space"]) if "contact_space" in kw else self.contact_space,
            solver=kw.get("solver", self.solver),
            mfem=mfem,
            ldm=ldm,
            output_dir=Path(kw["output_dir"]) if "output_dir" in kw else self.output_dir,
        )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(data)
