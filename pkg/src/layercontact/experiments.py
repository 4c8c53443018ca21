"""Benchmark runs, contact-space and solver comparisons, mesh-refinement study."""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .contact import ContactSpaceKind, jump_values
from .export import export_vtk, write_csv
from .mesh import build_layer_stack
from .assembly import assemble_loads, assemble_stiffness
from .problem import DiscreteProblem, discretize
from .solver_ldm import LdmResult, solve_ldm
from .solver_mfem import MfemResult, factorize, solve_mfem
from .transfer import grids_nested, interpolate_layer

__all__ = [
    "PipelineError",
    "SLIP_THRESHOLD",
    "BenchmarkRun",
    "ErrorTable",
    "SolverComparison",
    "ConvergenceReport",
    "run_benchmark",
    "layer_vector_errors",
    "compare_contact_spaces",
    "compare_solvers",
    "convergence_study",
    "fit_order",
]

log = logging.getLogger(__name__)

# |[u_T]| above this counts as slip in the stick/slip maps (length units)
SLIP_THRESHOLD = 1e-8

TABLE_NORM = "euclidean norm over all nodal displacement components of a layer"


class PipelineError(RuntimeError):
    """A run failed; ``stage`` names the step (mesh, assembly, contact, solve, export)."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage} stage failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


def _discretize(config: ExperimentConfig, h: float, kind=None, reuse: DiscreteProblem | None = None) -> DiscreteProblem:
    p = config.problem
    if reuse is not None:
        mesh, stiffness, load = reuse.mesh, reuse.stiffness, reuse.load
    else:
        with _stage("mesh"):
            mesh = build_layer_stack(p.geometry, h)
        with _stage("assembly"):
            stiffness = assemble_stiffness(mesh, p.materials)
            load = assemble_loads(mesh, p.loads)
    with _stage("contact"):
        return discretize(p, h, kind or config.contact_space, mesh=mesh, stiffness=stiffness, load=load)


def _layer_fields(dp: DiscreteProblem, u: np.ndarray) -> list[np.ndarray]:
    return [dp.dofs.nodal(u, k, lm.n_nodes) for k, lm in enumerate(dp.mesh.layers)]


def _energy(dp: DiscreteProblem, u: np.ndarray, layer: int | None = None) -> float:
    if layer is None:
        return float(u @ (dp.stiffness.matrix @ u))
    s = dp.dofs.layer_slice(layer)
    return float(u[s] @ (dp.stiffness.block(layer) @ u[s]))


def _h_tag(h: float) -> str:
    return f"h{h:.6g}".replace(".", "p")


# --------------------------------------------------------------------------- benchmark


@dataclass
class BenchmarkRun:
    h: float
    problem: DiscreteProblem = field(repr=False)
    mfem: MfemResult | None = field(default=None, repr=False)
    ldm: LdmResult | None = field(default=None, repr=False)
    files: list[Path] = field(default_factory=list)

    def report(self) -> dict:
        out = {
            "h": self.h,
            "contact_space": self.problem.kind.value,
            "dofs": int(self.problem.dofs.n_dofs),
            "multipliers": int(self.problem.coupling.n_multipliers),
        }
        if self.mfem is not None:
            out["mfem"] = self.mfem.report.as_dict()
        if self.ldm is not None:
            out["ldm"] = self.ldm.report.as_dict()
        return out


def run_benchmark(config: ExperimentConfig, write: bool = True) -> list[BenchmarkRun]:
    """Solve at every mesh size; writes per-layer VTK files and ``report.json``."""
    runs = []
    for h in config.h_list:
        dp = _discretize(config, h)
        run = BenchmarkRun(h, dp)
        with _stage("solve"):
            if config.solver in ("mfem", "both"):
                run.mfem = solve_mfem(dp, config.mfem)
                log.info("h=%g mfem: %s", h, run.mfem.report.status)
            if config.solver in ("ldm", "both"):
                run.ldm = solve_ldm(dp, config.ldm)
                log.info("h=%g ldm: %s", h, run.ldm.report.status)
        if write:
            with _stage("export"):
                out = Path(config.output_dir) / _h_tag(h)
                for name, res in (("mfem", run.mfem), ("ldm", run.ldm)):
                    if res is not None:
                        run.files += export_vtk(dp.mesh, _layer_fields(dp, res.u), out, f"{name}_layer")
                rep = out / "report.json"
                rep.write_text(json.dumps(run.report(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
                run.files.append(rep)
        runs.append(run)
    return runs


# --------------------------------------------------------------------------- contact spaces


@dataclass
class ErrorTable:
    """Per-layer differences between two solutions on the same mesh, one row per mesh size."""

    rows: list[tuple[float, tuple[float, ...], tuple[float, ...]]] = field(default_factory=list)
    n_layers: int = 3
    norm: str = TABLE_NORM

    def header(self) -> list[str]:
        k = range(1, self.n_layers + 1)
        return ["H"] + [f"abs_l{i}" for i in k] + [f"rel_l{i}" for i in k]

    def records(self) -> list[list[float]]:
        return [[h, *a, *r] for h, a, r in self.rows]

    def relative(self, h: float) -> tuple[float, ...]:
        for hh, _, r in self.rows:
            if np.isclose(hh, h):
                return r
        raise KeyError(h)

    def to_csv(self, path) -> Path:
        return write_csv(self.header(), self.records(), path)


def layer_vector_errors(dp: DiscreteProblem, u_ref: np.ndarray, u_other: np.ndarray) -> tuple[tuple, tuple]:
    """Absolute and relative (to ``u_ref``) nodal-vector differences per layer."""
    a, r = [], []
    for f0, f1 in zip(_layer_fields(dp, u_ref), _layer_fields(dp, u_other)):
        d = float(np.linalg.norm(f0 - f1))
        n0 = float(np.linalg.norm(f0))
        a.append(d)
        r.append(d / n0 if n0 > 0 else 0.0)
    return tuple(a), tuple(r)


def compare_contact_spaces(
    config: ExperimentConfig,
    h_list: Sequence[float] | None = None,
    kinds: tuple = (ContactSpaceKind.ELEMENTWISE_CONSTANT, ContactSpaceKind.NODAL_LINEAR),
) -> ErrorTable:
    """Piecewise-constant versus nodal-linear multipliers on the same mesh."""
    table = ErrorTable(n_layers=config.problem.geometry.n_layers)
    for h in h_list or config.h_list:
        d0 = _discretize(config, h, kinds[0])
        d1 = _discretize(config, h, kinds[1], reuse=d0)
        with _stage("solve"):
            factor = factorize(d0.stiffness)
            r0 = solve_mfem(d0, config.mfem, factor=factor)
            r1 = solve_mfem(d1, config.mfem, factor=factor)
        for kind, r in zip(kinds, (r0, r1)):
            if not r.report.converged:
                log.warning("h=%g %s: %s", h, ContactSpaceKind.parse(kind).value, r.report.status)
        a, rel = layer_vector_errors(d0, r0.u, r1.u)
        table.rows.append((float(h), a, rel))
    return table


# --------------------------------------------------------------------------- solvers


@dataclass
class SolverComparison:
    h: float
    layer_energy_diff: tuple[float, ...]
    total_energy_diff: float
    slip_maps: list[np.ndarray] = field(repr=False)
    overlap: tuple[float, ...]
    mfem: MfemResult = field(repr=False)
    ldm: LdmResult = field(repr=False)

    @property
    def ldm_converged(self) -> bool:
        return self.ldm.report.converged

    def report(self) -> dict:
        return {
            "h": self.h,
            "layer_energy_diff": list(self.layer_energy_diff),
            "total_energy_diff": self.total_energy_diff,
            "stick_slip_overlap": list(self.overlap),
            "slip_threshold": SLIP_THRESHOLD,
            "mfem": self.mfem.report.as_dict(),
            "ldm": self.ldm.report.as_dict(),
        }


def slip_map(dp: DiscreteProblem, u: np.ndarray, interface: int) -> tuple[np.ndarray, np.ndarray]:
    """(xy, |[u_T]|) at the free contact nodes of one interface."""
    pairing = dp.coupling.pairings[interface]
    _, jt = jump_values(u, pairing, dp.dofs)
    free = dp.dofs.node_to_free[interface][pairing.upper_nodes] >= 0
    return pairing.xy[free], np.linalg.norm(jt[free], axis=1)


def compare_solvers(config: ExperimentConfig, h: float | None = None, write: bool = True) -> SolverComparison:
    """MFEM and LDM on one mesh: energy differences and stick/slip agreement per interface."""
    h = config.h_list[0] if h is None else h
    dp = _discretize(config, h)
    with _stage("solve"):
        m = solve_mfem(dp, config.mfem)
        ld = solve_ldm(dp, config.ldm)
    if not ld.report.converged:
        log.warning("ldm did not converge (%s after %d steps)", ld.report.status, ld.report.outer_iterations)
    e = m.u - ld.u
    layers = tuple(
        float(np.sqrt(_energy(dp, e, k) / _energy(dp, m.u, k))) if _energy(dp, m.u, k) > 0 else 0.0
        for k in range(dp.mesh.n_layers)
    )
    total_ref = _energy(dp, m.u)
    total = float(np.sqrt(_energy(dp, e) / total_ref)) if total_ref > 0 else float(np.linalg.norm(e))
    maps, overlap = [], []
    for k in range(dp.mesh.n_interfaces):
        xy, s_m = slip_map(dp, m.u, k)
        _, s_l = slip_map(dp, ld.u, k)
        maps.append(np.column_stack([xy, s_m, s_l]))
        same = (s_m > SLIP_THRESHOLD) == (s_l > SLIP_THRESHOLD)
        overlap.append(float(same.mean()) if same.size else 1.0)
    cmp = SolverComparison(float(h), layers, total, maps, tuple(overlap), m, ld)
    if write:
        with _stage("export"):
            out = Path(config.output_dir) / f"solvers_{_h_tag(h)}"
            for k, mp in enumerate(maps):
                rows = [
                    [x, y, a, b, int(a > SLIP_THRESHOLD), int(b > SLIP_THRESHOLD)] for x, y, a, b in mp.tolist()
                ]
                write_csv(["x", "y", "slip_mfem", "slip_ldm", "slip_flag_mfem", "slip_flag_ldm"], rows, out / f"slip_interface_{k}.csv")
            (out / "report.json").write_text(json.dumps(cmp.report(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return cmp


# --------------------------------------------------------------------------- refinement


@dataclass
class ConvergenceReport:
    """Rows of (H, grid spacing, dof, total error, per-layer errors, runtime); the last row is the reference."""

    rows: list[tuple] = field(default_factory=list)
    order: float = float("nan")
    n_layers: int = 3

    def header(self) -> list[str]:
        return ["H", "dof", "rel_err_total"] + [f"rel_err_l{i}" for i in range(1, self.n_layers + 1)] + ["runtime_s"]

    def records(self) -> list[list]:
        return [[H, dof, tot, *lay, rt] for H, _, dof, tot, lay, rt in self.rows]

    @property
    def errors(self) -> np.ndarray:
        return np.array([r[3] for r in self.rows[:-1]])

    @property
    def sizes(self) -> np.ndarray:
        return np.array([r[0] for r in self.rows[:-1]])

    def to_csv(self, path) -> Path:
        return write_csv(self.header(), self.records(), path)


def fit_order(sizes: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(size)."""
    sizes, errors = np.asarray(sizes, float), np.asarray(errors, float)
    if sizes.size < 2 or np.any(errors <= 0):
        return float("nan")
    return float(np.polyfit(np.log(sizes), np.log(errors), 1)[0])


def _transfer(coarse: DiscreteProblem, u: np.ndarray, fine: DiscreteProblem) -> np.ndarray:
    fields = []
    for k, (cm, fm) in enumerate(zip(coarse.mesh.layers, fine.mesh.layers)):
        vals = coarse.dofs.nodal(u, k, cm.n_nodes)
        fields.append(interpolate_layer(cm, vals, fm.nodes))
    return fine.dofs.from_nodal(fields)


def convergence_study(
    config: ExperimentConfig,
    sizes: Sequence[float] | None = None,
    spacing_factor: float = 1.0,
    require_nested: bool = True,
    csv_path: str | Path | None = None,
) -> ConvergenceReport:
    """Relative energy errors against the finest size, after P1 interpolation onto its mesh.

    Mesh ``j`` is built with grid spacing ``spacing_factor * sizes[j]``; the
    fitted order is the same for any constant factor.
    """
    sizes = [float(s) for s in (sizes or config.h_list)]
    if len(sizes) < 2:
        raise ValueError("a convergence study needs at least two mesh sizes")
    if any(b >= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError(f"mesh sizes must be strictly decreasing, got {sizes}")

    solved = []
    for H in sizes:
        t0 = time.perf_counter()
        dp = _discretize(config, spacing_factor * H)
        with _stage("solve"):
            res = solve_mfem(dp, config.mfem)
        if not res.report.converged:
            log.warning("H=%g: %s", H, res.report.status)
        solved.append((H, dp, res.u, time.perf_counter() - t0))
        log.info("H=%g: %d dof, %.1f s", H, dp.dofs.n_dofs, solved[-1][3])

    _, ref, u_ref, ref_time = solved[-1]
    if require_nested:
        for H, dp, _, _ in solved[:-1]:
            if not all(grids_nested(c, f) for c, f in zip(dp.mesh.layers, ref.mesh.layers)):
                raise ValueError(f"mesh for H={H} is not nested in the reference mesh")

    n = ref.mesh.n_layers
    report = ConvergenceReport(n_layers=n)
    e_ref = [_energy(ref, u_ref, k) for k in range(n)]
    for H, dp, u, rt in solved[:-1]:
        e = _transfer(dp, u, ref) - u_ref
        lay = tuple(float(np.sqrt(_energy(ref, e, k) / e_ref[k])) if e_ref[k] > 0 else 0.0 for k in range(n))
        tot = float(np.sqrt(_energy(ref, e) / sum(e_ref)))
        report.rows.append((H, spacing_factor * H, int(dp.dofs.n_dofs), tot, lay, rt))
    report.rows.append((sizes[-1], spacing_factor * sizes[-1], int(ref.dofs.n_dofs), 0.0, (0.0,) * n, ref_time))
    report.order = fit_order(report.sizes, report.errors)
    if csv_path is not None:
        report.to_csv(csv_path)
    return report
