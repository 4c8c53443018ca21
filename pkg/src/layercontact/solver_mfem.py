"""Mixed method solved through its dual quadratic program.

Eliminating the displacement from

    K u + G^T lam = f,   (mu - lam)^T G u <= 0  for all feasible mu

leaves ``min 1/2 mu^T C mu - mu^T d`` over the multiplier set with
``C = G K^-1 G^T`` and ``d = G K^-1 f``; the displacement is then
``u = K^-1 (f - G^T lam)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import SparseSymmetric
from .contact import (
    ContactSpaceKind,
    CouplingOperators,
    FrictionField,
    MultiplierVector,
    jump_values,
    project_feasible,
)
from .problem import DiscreteProblem
from .qp import accelerated_projected_gradient, power_iteration

try:
    from sksparse.cholmod import CholmodNotPositiveDefiniteError, cholesky
except ImportError:  # pragma: no cover - exercised only without scikit-sparse
    cholesky = None

    class CholmodNotPositiveDefiniteError(Exception):
        pass


__all__ = [
    "NotPositiveDefinite",
    "CholeskyFactor",
    "SolverConfig",
    "KktResiduals",
    "SolveReport",
    "DualQp",
    "MfemResult",
    "factorize",
    "build_dual",
    "solve_dual",
    "recover_displacement",
    "kkt_report",
    "estimate_infsup",
    "solve_mfem",
]

# relative pivot size below which K is declared singular
_PIVOT_RTOL = 1e-12


class NotPositiveDefinite(np.linalg.LinAlgError):
    """The stiffness matrix is singular or indefinite (typically missing Dirichlet data)."""


class CholeskyFactor:
    """Sparse Cholesky factor of an SPD matrix (CHOLMOD, SuperLU as fallback)."""

    def __init__(self, matrix: sp.spmatrix):
        A = sp.csc_matrix(matrix)
        self.shape = A.shape
        self.matrix = A
        if A.shape[0] == 0:
            self._solve = lambda b: np.zeros_like(b, dtype=float)
            return
        if cholesky is not None:
            try:
                factor = cholesky(A)
            except CholmodNotPositiveDefiniteError as exc:
                raise NotPositiveDefinite(str(exc)) from exc
            pivots = factor.D()
            self._solve = factor
        else:
            lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0)
            pivots = lu.U.diagonal()
            self._solve = lu.solve
        if not np.all(np.isfinite(pivots)) or pivots.min() <= _PIVOT_RTOL * np.abs(pivots).max():
            raise NotPositiveDefinite(
                f"pivot ratio {pivots.min() / np.abs(pivots).max():.3e}: matrix is not positive definite"
            )

    def solve(self, b: np.ndarray) -> np.ndarray:
        return np.asarray(self._solve(np.asarray(b, dtype=float)))

    __call__ = solve


def factorize(K: SparseSymmetric | sp.spmatrix) -> CholeskyFactor:
    return CholeskyFactor(K.matrix if isinstance(K, SparseSymmetric) else K)


@dataclass
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 20_000
    restart: bool = True
    power_steps: int = 50
    explicit_limit: int = 3000

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")


@dataclass
class KktResiduals:
    penetration: float = 0.0
    complementarity: float = 0.0
    friction_consistency: float = 0.0
    bound_excess: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


@dataclass
class SolveReport:
    status: str
    iterations: int
    projected_gradient_norm: float
    dual_objective: float
    residuals: KktResiduals = field(default_factory=KktResiduals)
    wall_time: float = 0.0
    lipschitz: float = 0.0
    objective_history: list[float] = field(default_factory=list, repr=False)
    restarts: list[int] = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def as_dict(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "projected_gradient_norm": self.projected_gradient_norm,
            "dual_objective": self.dual_objective,
            "residuals": self.residuals.as_dict(),
            "wall_time": self.wall_time,
            "lipschitz": self.lipschitz,
            "restarts": len(self.restarts),
        }


@dataclass(eq=False)
class DualQp:
    """``min 1/2 mu^T C mu - mu^T d`` over the multiplier set."""

    factor: CholeskyFactor
    G: sp.csr_matrix
    d: np.ndarray
    friction: FrictionField
    n_points: int
    lipschitz: float
    C: np.ndarray | None = None
    kind: ContactSpaceKind | None = None

    @property
    def size(self) -> int:
        return self.d.shape[0]

    def apply(self, mu: np.ndarray) -> np.ndarray:
        if self.C is not None:
            return self.C @ mu
        return self.G @ self.factor.solve(self.G.T @ mu)

    def objective(self, mu: np.ndarray) -> float:
        return float(0.5 * mu @ self.apply(mu) - self.d @ mu)

    def project(self, mu: np.ndarray) -> np.ndarray:
        return project_feasible(mu, self.friction)


def build_dual(
    factor: CholeskyFactor,
    coupling: CouplingOperators | sp.spmatrix,
    f: np.ndarray,
    friction: FrictionField,
    config: SolverConfig | None = None,
) -> DualQp:
    """Form ``d = G K^-1 f``, the Schur operator and a safeguarded ``lambda_max(C)``."""
    config = config or SolverConfig()
    if isinstance(coupling, CouplingOperators):
        G, kind = coupling.G, coupling.kind
    else:
        G, kind = sp.csr_matrix(coupling), None
    if G.shape[1] != factor.shape[0] or f.shape[0] != factor.shape[0]:
        raise ValueError(f"dimension mismatch: G {G.shape}, K {factor.shape}, f {f.shape}")
    n_points = G.shape[0] // 3
    d = G @ factor.solve(f)
    C = None
    if G.shape[0] <= config.explicit_limit:
        X = factor.solve(G.T.toarray()) if G.shape[0] else np.zeros((G.shape[1], 0))
        C = np.asarray(G @ X)
        C = 0.5 * (C + C.T)
    qp = DualQp(factor, G, d, friction, n_points, 0.0, C, kind)
    qp.lipschitz = 1.05 * power_iteration(qp.apply, qp.size, config.power_steps)
    return qp


def solve_dual(
    qp: DualQp, config: SolverConfig | None = None, x0: np.ndarray | None = None
) -> tuple[MultiplierVector, SolveReport]:
    """Accelerated projected gradient on the dual; the returned iterate is exactly feasible."""
    config = config or SolverConfig()
    res = accelerated_projected_gradient(
        qp.apply,
        qp.d,
        qp.project,
        qp.lipschitz,
        x0=x0,
        tol=config.tol,
        max_iter=config.max_iter,
        restart=config.restart,
    )
    lam = MultiplierVector(res.x, qp.n_points, qp.kind)
    report = SolveReport(
        status="converged" if res.converged else "max_iter_reached",
        iterations=res.iterations,
        projected_gradient_norm=res.pg_norm,
        dual_objective=res.objective,
        wall_time=res.wall_time,
        lipschitz=res.lipschitz,
        objective_history=res.history,
        restarts=res.restarts,
    )
    return lam, report


def recover_displacement(factor: CholeskyFactor, f: np.ndarray, G: sp.spmatrix, lam) -> np.ndarray:
    """``u = K^-1 (f - G^T lam)``."""
    values = lam.values if isinstance(lam, MultiplierVector) else np.asarray(lam)
    return factor.solve(f - G.T @ values)


def kkt_report(u: np.ndarray, lam, coupling: CouplingOperators, friction: FrictionField) -> KktResiduals:
    """Measured violation of the discrete contact and friction conditions.

    Jumps are taken as normalised moments ``(G u)_p / int psi_p ds``, the
    quantities the discrete inequality constrains.
    """
    values = lam.values if isinstance(lam, MultiplierVector) else np.asarray(lam)
    n = coupling.n_points
    if n == 0:
        return KktResiduals()
    lam_n, lam_t = values[:n], values[n:].reshape(-1, 2)
    w = coupling.point_weights
    gn = coupling.G_N @ u
    gt = (coupling.G_T @ u).reshape(-1, 2)
    jump_n = gn / w
    jump_t = gt / w[:, None]
    g = friction.values
    return KktResiduals(
        penetration=float(max(0.0, jump_n.max())),
        complementarity=float(abs(lam_n @ gn)),
        friction_consistency=float(np.sum(np.abs(g * np.linalg.norm(jump_t, axis=1) - np.sum(lam_t * jump_t, axis=1)))),
        bound_excess=float(max(0.0, (np.linalg.norm(lam_t, axis=1) - g).max())),
    )


def estimate_infsup(
    factor: CholeskyFactor,
    G: sp.spmatrix,
    gram: sp.spmatrix | np.ndarray,
    dense_limit: int = 1500,
    rtol: float = 1e-10,
    max_iter: int = 200,
) -> float:
    """``sqrt(lambda_min(C, M))`` for the Schur complement ``C`` against the multiplier Gram ``M``.

    Returns 0 when ``C`` is singular on the multiplier space (relative to its
    largest eigenvalue), which signals a failed inf-sup condition.
    """
    G = sp.csr_matrix(G)
    n = G.shape[0]
    if n == 0 or G.nnz == 0:
        return 0.0
    M = gram.toarray() if sp.issparse(gram) else np.asarray(gram)
    if n <= dense_limit:
        C = np.asarray(G @ factor.solve(G.T.toarray()))
        C = 0.5 * (C + C.T)
        ev = sla.eigh(C, M, eigvals_only=True)
        lo, hi = ev[0], ev[-1]
        return 0.0 if lo <= rtol * hi else float(np.sqrt(lo))

    apply = lambda x: G @ factor.solve(G.T @ x)  # noqa: E731
    Ms = sp.csr_matrix(gram)
    op = spla.LinearOperator((n, n), matvec=apply, dtype=float)
    x = np.random.default_rng(0).standard_normal(n)
    x /= np.sqrt(x @ (Ms @ x))
    est = np.inf
    for _ in range(max_iter):
        y, info = spla.cg(op, Ms @ x, rtol=1e-10, maxiter=5 * n)
        nrm = np.sqrt(y @ (Ms @ y))
        if not np.isfinite(nrm) or nrm == 0.0:
            return 0.0
        new = 1.0 / nrm
        x = y / nrm
        if abs(new - est) <= 1e-8 * new:
            est = new
            break
        est = new
    hi = power_iteration(lambda v: sla.solve(M, apply(v)) if n <= 4000 else apply(v), n)
    return 0.0 if est <= rtol * hi else float(np.sqrt(est))


@dataclass
class MfemResult:
    u: np.ndarray
    multipliers: MultiplierVector
    report: SolveReport
    factor: CholeskyFactor = field(repr=False)
    qp: DualQp = field(repr=False)

    @property
    def equilibrium_residual(self) -> float:
        return float(np.linalg.norm(self.qp.factor.matrix @ self.u + self.qp.G.T @ self.multipliers.values))


def solve_mfem(
    problem: DiscreteProblem,
    config: SolverConfig | None = None,
    factor: CholeskyFactor | None = None,
    x0: np.ndarray | None = None,
    progress: Callable[[str], None] | None = None,
) -> MfemResult:
    """Factorize, build the dual, solve it and recover the displacement."""
    config = config or SolverConfig()
    t0 = time.perf_counter()
    factor = factor or factorize(problem.stiffness)
    qp = build_dual(factor, problem.coupling, problem.load, problem.friction, config)
    if progress:
        progress(f"dual QP: {qp.size} multipliers, {'explicit' if qp.C is not None else 'implicit'} Schur")
    lam, report = solve_dual(qp, config, x0=x0)
    u = recover_displacement(factor, problem.load, qp.G, lam)
    report.residuals = kkt_report(u, lam, problem.coupling, problem.friction)
    report.wall_time = time.perf_counter() - t0
    return MfemResult(u, lam, report, factor, qp)
