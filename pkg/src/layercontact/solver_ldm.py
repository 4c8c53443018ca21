"""Layer decomposition: one contact problem per layer, coupled through interface traces.

Each outer iteration solves, for every layer, a dual QP in which the layer's
bottom face is in frictional contact with the current trace of its lower
interface and its top face is tied to the trace of its upper interface.  The
traces are then corrected by the response of both neighbouring layers to the
unbalanced interface reactions, relaxed by ``theta``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import DofMap, DisplacementField
from .contact import _project
from .mesh import ContactPairing
from .problem import DiscreteProblem
from .qp import accelerated_projected_gradient, power_iteration
from .solver_mfem import CholeskyFactor, SolverConfig, factorize

__all__ = [
    "LdmConfig",
    "InterfaceNodes",
    "LayerDualQp",
    "LdmReport",
    "LdmResult",
    "interface_nodes",
    "build_layer_dual",
    "solve_ldm",
    "ldm_energy_trace",
    "select_theta",
]

# picked by select_theta on the benchmark at h=0.8 and h=0.4; larger values lock into a 2-cycle
DEFAULT_THETA = 0.05


@dataclass
class LdmConfig:
    theta: float = DEFAULT_THETA
    tol: float = 1e-7
    max_outer: int = 2000
    # tighter inner solves do not change the outer fixed point at tol=1e-7, they only cost time
    inner: SolverConfig = field(default_factory=lambda: SolverConfig(tol=1e-9, max_iter=50_000))
    # epsilon growing over this many consecutive outer steps means the relaxation diverges
    divergence_window: int = 25

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_outer < 1:
            raise ValueError(f"max_outer must be >= 1, got {self.max_outer}")


@dataclass(frozen=True, eq=False)
class InterfaceNodes:
    """Free contact nodes and multiplier rows of one interface.

    ``upper_dofs`` / ``lower_dofs`` are (m, 3) layer-local dof indices in the
    layers above and below, ``pairs`` the matching rows of the full pairing.
    ``rows_upper`` / ``rows_lower`` are the interface's rows of the global
    coupling ``[G_N; G_T]`` restricted to the columns of each layer, so the
    jump moments are ``rows_upper @ u_upper + rows_lower @ u_lower``.
    ``bounds`` holds the friction bound of each multiplier point.
    """

    interface: int
    upper_dofs: np.ndarray
    lower_dofs: np.ndarray
    pairs: np.ndarray
    rows_upper: sp.csr_matrix = field(repr=False)
    rows_lower: sp.csr_matrix = field(repr=False)
    bounds: np.ndarray = field(repr=False)
    pairing: ContactPairing = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.pairs.shape[0]

    @property
    def n_points(self) -> int:
        return self.bounds.shape[0]


def interface_nodes(problem: DiscreteProblem, k: int) -> InterfaceNodes:
    dofs, ops = problem.dofs, problem.coupling
    pairing = ops.pairings[k]
    up = dofs.node_dofs(k, pairing.upper_nodes, local=True)
    lo = dofs.node_dofs(k + 1, pairing.lower_nodes, local=True)
    if np.any((up[:, 0] < 0) != (lo[:, 0] < 0)):
        raise ValueError(f"interface {k}: Dirichlet status differs across the interface")
    keep = np.flatnonzero(up[:, 0] >= 0)
    rn, rt = ops.interface_rows(k)
    rows = sp.vstack([ops.G_N[rn], ops.G_T[rt]], format="csr")
    return InterfaceNodes(
        k,
        up[keep],
        lo[keep],
        keep,
        rows[:, dofs.layer_slice(k)].tocsr(),
        rows[:, dofs.layer_slice(k + 1)].tocsr(),
        problem.friction.values[ops.interface_points(k)].copy(),
        pairing,
    )


@dataclass(eq=False)
class LayerDualQp:
    """``min 1/2 w^T C w + w^T d`` over ``{w_N >= 0, |w_T(j)| <= g_j, w_2 free}``.

    ``w`` is ordered [w_N (m), w_T (2m, xy interleaved), w_2 (3 m_above)], where
    ``m`` counts the multiplier points of the layer's bottom interface and
    ``m_above`` the tied nodes on its top face.
    """

    layer: int
    B: sp.csr_matrix
    C: np.ndarray
    d: np.ndarray
    g: np.ndarray
    n_contact: int
    n_tied: int
    lipschitz: float

    @property
    def size(self) -> int:
        return self.d.shape[0]

    def project(self, w: np.ndarray) -> np.ndarray:
        m = self.n_contact
        if m == 0:
            return np.array(w, dtype=float)
        out = np.array(w, dtype=float)
        out[: 3 * m] = _project(out[: 3 * m], m, self.g)
        return out

    def objective(self, w: np.ndarray) -> float:
        return float(0.5 * w @ (self.C @ w) + self.d @ w)


def _constraint_rows(n_dofs: int, below: InterfaceNodes | None, above: InterfaceNodes | None) -> sp.csr_matrix:
    blocks = []
    if below is not None:
        blocks.append(below.rows_upper)
    if above is not None:
        k = 3 * above.n_nodes
        blocks.append(sp.csr_matrix((np.ones(k), (np.arange(k), above.lower_dofs.ravel())), shape=(k, n_dofs)))
    if not blocks:
        return sp.csr_matrix((0, n_dofs))
    return sp.vstack(blocks, format="csr")


def build_layer_dual(
    layer: int,
    factor: CholeskyFactor,
    load: np.ndarray,
    below: InterfaceNodes | None,
    above: InterfaceNodes | None,
    trace_below: np.ndarray | None,
    trace_above: np.ndarray | None,
    B: sp.csr_matrix | None = None,
    C: np.ndarray | None = None,
    lipschitz: float | None = None,
) -> LayerDualQp:
    """Dual QP of one layer for the current traces.

    ``B``, ``C`` and ``lipschitz`` depend only on the mesh and may be passed in
    from a previous outer iteration; ``d`` is rebuilt from the traces every time.
    """
    n = factor.shape[0]
    if load.shape != (n,):
        raise ValueError(f"layer {layer}: load has shape {load.shape}, expected ({n},)")
    for name, nodes, trace in (("below", below, trace_below), ("above", above, trace_above)):
        if nodes is not None and (trace is None or np.shape(trace) != (nodes.n_nodes, 3)):
            raise ValueError(
                f"layer {layer}: trace {name} has shape {np.shape(trace)}, expected ({nodes.n_nodes}, 3)"
            )
    if B is None:
        B = _constraint_rows(n, below, above)
    if C is None:
        X = factor.solve(B.T.toarray()) if B.shape[0] else np.zeros((n, 0))
        C = np.asarray(B @ X)
        C = 0.5 * (C + C.T)
    m = below.n_points if below is not None else 0
    m2 = above.n_nodes if above is not None else 0
    Ainv_b = factor.solve(load)
    d = -(B @ Ainv_b)
    if m:
        # the lower layer is pinned to the trace, so its share of the jump moments is fixed
        pinned = np.zeros(below.rows_lower.shape[1])
        pinned[below.lower_dofs.ravel()] = np.asarray(trace_below, dtype=float).ravel()
        d[: 3 * m] -= below.rows_lower @ pinned
    if m2:
        d[3 * m :] += np.asarray(trace_above, dtype=float).ravel()
    g = below.bounds if below is not None else np.zeros(0)
    if lipschitz is None:
        lipschitz = 1.05 * power_iteration(lambda x: C @ x, C.shape[0]) if C.shape[0] else 0.0
    L = lipschitz
    return LayerDualQp(layer, B, C, d, g, m, m2, L)


@dataclass
class LdmReport:
    status: str
    outer_iterations: int
    theta: float
    eps_history: list[float] = field(default_factory=list)
    inner_iterations: list[int] = field(default_factory=list, repr=False)
    equilibrium_residual: float = 0.0
    wall_time: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def as_dict(self) -> dict:
        return {
            "status": self.status,
            "outer_iterations": self.outer_iterations,
            "theta": self.theta,
            "final_eps": self.eps_history[-1] if self.eps_history else None,
            "inner_iterations": int(sum(self.inner_iterations)),
            "equilibrium_residual": self.equilibrium_residual,
            "wall_time": self.wall_time,
        }


@dataclass
class LdmResult:
    u: np.ndarray
    traces: list[np.ndarray]
    multipliers: list[np.ndarray]
    report: LdmReport
    interfaces: list[InterfaceNodes] = field(repr=False)

    def field(self, problem: DiscreteProblem) -> DisplacementField:
        return DisplacementField(self.u, problem.dofs, problem.mesh)


def ldm_energy_trace(report: LdmReport) -> list[float]:
    """The relative trace change per outer iteration."""
    return list(report.eps_history)


def _diverging(eps: list[float], window: int) -> bool:
    if not np.isfinite(eps[-1]):
        return True
    if len(eps) <= window:
        return False
    tail = np.asarray(eps[-window - 1 :])
    return bool(np.all(np.diff(tail) > 0.0))


def solve_ldm(
    problem: DiscreteProblem,
    config: LdmConfig | None = None,
    traces: list[np.ndarray] | None = None,
    factors: list[CholeskyFactor] | None = None,
) -> LdmResult:
    """Run the layer decomposition until the relative trace change drops below ``tol``."""
    config = config or LdmConfig()
    t0 = time.perf_counter()
    mesh, dofs = problem.mesh, problem.dofs
    n = mesh.n_layers
    if n < 2:
        raise ValueError("layer decomposition needs at least two layers")
    ifaces = [interface_nodes(problem, k) for k in range(n - 1)]
    if factors is None:
        factors = [factorize(problem.stiffness.block(k)) for k in range(n)]
    loads = [problem.load[dofs.layer_slice(k)] for k in range(n)]
    if traces is None:
        traces = [np.zeros((itf.n_nodes, 3)) for itf in ifaces]
    else:
        traces = [np.array(t, dtype=float) for t in traces]

    def below(k):
        return ifaces[k] if k < n - 1 else None

    def above(k):
        return ifaces[k - 1] if k > 0 else None

    def trace_below(k):
        return traces[k] if k < n - 1 else None

    def trace_above(k):
        return traces[k - 1] if k > 0 else None

    cache: list[tuple] = [(None, None, None)] * n
    omega: list[np.ndarray | None] = [None] * n
    report = LdmReport("max_outer_reached", 0, config.theta)
    u_layers: list[np.ndarray] = [np.zeros_like(b) for b in loads]

    for it in range(1, config.max_outer + 1):
        reactions = []
        eq_res = 0.0
        for k in range(n):
            B, C, L = cache[k]
            qp = build_layer_dual(
                k, factors[k], loads[k], below(k), above(k), trace_below(k), trace_above(k), B, C, L,
            )
            cache[k] = (qp.B, qp.C, qp.lipschitz)
            if qp.size == 0:
                w = np.zeros(0)
            elif qp.n_contact == 0:
                # only equality multipliers: the QP is an SPD linear system
                w = np.linalg.solve(qp.C, -qp.d)
                report.inner_iterations.append(0)
            else:
                res = accelerated_projected_gradient(
                    lambda x, C=qp.C: C @ x,
                    -qp.d,
                    qp.project,
                    qp.lipschitz,
                    x0=omega[k],
                    tol=config.inner.tol,
                    max_iter=config.inner.max_iter,
                    restart=config.inner.restart,
                    record_history=False,
                )
                w = res.x
                report.inner_iterations.append(res.iterations)
            omega[k] = w
            Btw = qp.B.T @ w
            u_layers[k] = factors[k].solve(loads[k] - Btw)
            A = factors[k].matrix
            bn = np.linalg.norm(loads[k])
            eq_res = max(eq_res, np.linalg.norm(A @ u_layers[k] + Btw - loads[k]) / (bn if bn > 0 else 1.0))
            reactions.append(-Btw)  # A u - b
        report.equilibrium_residual = float(eq_res)

        num = den = 0.0
        new_traces = []
        for i, itf in enumerate(ifaces):
            r = reactions[i][itf.upper_dofs] + reactions[i + 1][itf.lower_dofs]
            rhs_lo = np.zeros_like(loads[i + 1])
            rhs_lo[itf.lower_dofs.ravel()] = 0.5 * r.ravel()
            rhs_up = np.zeros_like(loads[i])
            rhs_up[itf.upper_dofs.ravel()] = 0.5 * r.ravel()
            p = factors[i + 1].solve(rhs_lo)
            q = factors[i].solve(rhs_up)
            lam = traces[i] - config.theta * (p[itf.lower_dofs] + q[itf.upper_dofs])
            num += float(np.linalg.norm(lam - traces[i]))
            den += float(np.linalg.norm(lam))
            new_traces.append(lam)
        traces = new_traces
        eps = num / den if den > 0 else (0.0 if num == 0 else np.inf)
        report.eps_history.append(float(eps))
        report.outer_iterations = it
        if eps <= config.tol:
            report.status = "converged"
            break
        if _diverging(report.eps_history, config.divergence_window):
            report.status = "diverged"
            break

    # displacements are those of the last layer solves; the traces are one relaxation ahead
    report.wall_time = time.perf_counter() - t0
    return LdmResult(np.concatenate(u_layers), traces, omega, report, ifaces)


def select_theta(
    problem: DiscreteProblem,
    candidates=(0.4, 0.2, 0.1, 0.05, 0.025),
    outer: int = 40,
) -> tuple[float, dict[float, float]]:
    """Short runs for each ``theta``; returns the one with the smallest final epsilon."""
    n = problem.mesh.n_layers
    factors = [factorize(problem.stiffness.block(k)) for k in range(n)]
    scores = {}
    for th in candidates:
        cfg = LdmConfig(theta=th, max_outer=outer, tol=1e-300)
        res = solve_ldm(problem, cfg, factors=factors)
        eps = res.report.eps_history
        scores[th] = eps[-1] if res.report.status != "diverged" and eps else np.inf
    best = min(scores, key=scores.get)
    return best, scores
