import itertools
import time

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.optimize as sopt
import scipy.sparse as sp

from layercontact.assembly import IsotropicMaterial, element_stiffness
from layercontact.contact import FrictionField, MultiplierVector
from layercontact.mesh import Layer, LayerStackSpec, build_layer_stack
from layercontact.problem import discretize
from layercontact.solver_mfem import (
    CholeskyFactor,
    NotPositiveDefinite,
    SolverConfig,
    build_dual,
    estimate_infsup,
    factorize,
    kkt_report,
    recover_displacement,
    solve_dual,
    solve_mfem,
)

from conftest import two_layer_problem

TIGHT = SolverConfig(tol=1e-13, max_iter=200_000)


def energy_error(K, u, ref):
    e = u - ref
    return float(np.sqrt(e @ (K @ e) / (ref @ (K @ ref))))


def moment_objective(dp, u):
    """Primal objective with the friction term in moment form, the exact dual of the QP."""
    K, f = dp.stiffness.matrix, dp.load
    gt = (dp.coupling.G_T @ u).reshape(-1, 2)
    return 0.5 * u @ (K @ u) - f @ u + dp.friction.values @ np.linalg.norm(gt, axis=1)


def test_factor_solves_identity(rng):
    f = CholeskyFactor(sp.identity(7, format="csc"))
    b = rng.standard_normal(7)
    np.testing.assert_array_equal(f.solve(b), b)
    assert f(b).shape == (7,)


def test_free_floating_layer_is_rejected():
    mesh = build_layer_stack(LayerStackSpec((0, 1, 0, 1), (Layer(1.0),), 1.0), 1.0)
    lm = mesh.layers[0]
    mat = IsotropicMaterial(1.0, 0.3)
    n = 3 * lm.n_nodes
    K = np.zeros((n, n))
    for tet in lm.tets:
        idx = (3 * tet[:, None] + np.arange(3)).ravel()
        K[np.ix_(idx, idx)] += element_stiffness(lm.nodes[tet], mat)
    with pytest.raises(NotPositiveDefinite):
        factorize(sp.csc_matrix(K))


def test_explicit_and_implicit_schur_agree(small_problem, rng):
    factor = factorize(small_problem.stiffness)
    args = (factor, small_problem.coupling, small_problem.load, small_problem.friction)
    explicit = build_dual(*args, SolverConfig(explicit_limit=10**6))
    implicit = build_dual(*args, SolverConfig(explicit_limit=0))
    assert explicit.C is not None and implicit.C is None
    for _ in range(5):
        mu = rng.standard_normal(explicit.size)
        a, b = explicit.apply(mu), implicit.apply(mu)
        assert np.linalg.norm(a - b) <= 1e-10 * np.linalg.norm(a)
    np.testing.assert_allclose(explicit.d, implicit.d, rtol=1e-12)


def test_lipschitz_estimate_within_five_percent(small_problem):
    qp = build_dual(factorize(small_problem.stiffness), small_problem.coupling, small_problem.load, small_problem.friction)
    lam_max = np.linalg.eigvalsh(qp.C)[-1]
    assert lam_max <= qp.lipschitz <= 1.05 * lam_max * (1 + 1e-12)
    assert qp.lipschitz >= 0.95 * 1.05 * lam_max


def test_zero_load_gives_zero_solution():
    dp = discretize(two_layer_problem(traction=(0, 0, 0), body=(0, 0, 0)), 0.5, "p1")
    res = solve_mfem(dp)
    assert res.report.converged and res.report.iterations == 0
    assert np.all(res.u == 0) and np.all(res.multipliers.values == 0)


def test_tensile_load_separates_layers():
    dp = discretize(two_layer_problem(traction=(0, 0, 5.0), body=(0, 0, 0)), 0.4, "p1")
    res = solve_mfem(dp, TIGHT)
    assert res.report.converged
    lam = res.multipliers
    # the top layer is pulled away, so no interface point carries pressure
    assert np.abs(lam.normal).max() <= 1e-10 * max(1.0, np.abs(dp.load).max())
    assert np.all(lam.normal >= 0)


def test_solution_is_feasible_and_balanced(small_problem):
    res = solve_mfem(small_problem)
    lam = res.multipliers
    assert res.report.converged
    assert np.all(lam.normal >= 0)
    assert np.all(np.linalg.norm(lam.tangential, axis=1) <= small_problem.friction.values)
    assert res.report.residuals.bound_excess == 0.0
    rel = np.linalg.norm(small_problem.stiffness.matrix @ res.u + small_problem.coupling.G.T @ lam.values - small_problem.load)
    assert rel <= 1e-9 * np.linalg.norm(small_problem.load)


def test_positive_homogeneity():
    # loads large enough that |d| >= 1 at every scale, where the stopping rule is relative
    base = two_layer_problem().scaled(1e3)
    cfg = SolverConfig(tol=1e-12, max_iter=200_000)
    ref = solve_mfem(discretize(base, 0.4, "p1"), cfg)
    assert np.linalg.norm(ref.qp.d) >= 2.0
    for s in (0.5, 3.0):
        res = solve_mfem(discretize(base.scaled(s), 0.4, "p1"), cfg)
        assert np.linalg.norm(res.u - s * ref.u) <= 1e-9 * np.linalg.norm(s * ref.u)
        lam, lam_ref = res.multipliers.values, s * ref.multipliers.values
        assert np.linalg.norm(lam - lam_ref) <= 1e-9 * np.linalg.norm(lam_ref)


def test_dual_objective_monotone_between_restarts(small_problem):
    qp = build_dual(factorize(small_problem.stiffness), small_problem.coupling, small_problem.load, small_problem.friction)
    _, rep = solve_dual(qp, SolverConfig(tol=1e-12, max_iter=50_000))
    h = np.asarray(rep.objective_history)
    assert h.size > 10
    scale = np.abs(h).max()
    assert np.all(np.diff(h) <= 1e-12 * scale)


def test_strong_duality(small_problem):
    res = solve_mfem(small_problem, TIGHT)
    K_inv_f = res.factor.solve(small_problem.load)
    primal = moment_objective(small_problem, res.u)
    assert primal == pytest.approx(-res.report.dual_objective - 0.5 * small_problem.load @ K_inv_f, rel=1e-9)


def test_kkt_report_flags_violations(small_problem):
    res = solve_mfem(small_problem)
    bad = MultiplierVector(res.multipliers.values * 3.0, small_problem.coupling.n_points)
    r = kkt_report(res.u, bad, small_problem.coupling, small_problem.friction)
    assert r.bound_excess > 0
    assert recover_displacement(res.factor, small_problem.load, small_problem.coupling.G, res.multipliers).shape == res.u.shape


def test_cvxpy_socp_oracle(small_problem):
    cp = pytest.importorskip("cvxpy")
    dp = small_problem
    K, f = dp.stiffness.matrix.toarray(), dp.load
    Lk = np.linalg.cholesky(K)
    u = cp.Variable(K.shape[0])
    gt = dp.coupling.G_T.toarray()
    slips = [cp.norm(gt[2 * p : 2 * p + 2] @ u) for p in range(dp.coupling.n_points)]
    obj = 0.5 * cp.sum_squares(Lk.T @ u) - f @ u + cp.sum(cp.hstack([g * s for g, s in zip(dp.friction.values, slips)]))
    prob = cp.Problem(cp.Minimize(obj), [dp.coupling.G_N.toarray() @ u <= 0])
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-14, tol_gap_rel=1e-14, tol_feas=1e-14)
    ref = u.value
    res = solve_mfem(dp, TIGHT)
    assert energy_error(K, res.u, ref) <= 1e-6
    # the problem mixes stick, slip and separation or it would not test much
    slip = np.linalg.norm(res.multipliers.tangential, axis=1)
    assert np.any(slip >= dp.friction.values * (1 - 1e-9)) and np.any(slip < 0.5 * dp.friction.values)


def enumeration_problem():
    p = two_layer_problem(
        friction=0.0,
        traction=(0.0, 0.0, 8.0),
        body=(0.0, 0.0, -2.0),
        footprint=(0.0, 1.5, 0.0, 1.0),
        thickness=(1.0, 1.0),
        patch=(0.0, 0.75, 0.0, 1.0),
    )
    return discretize(p, 0.5, "p1")


def enumerate_active_sets(K, f, GN):
    """Frictionless reference: try every active set and keep the KKT-consistent one."""
    n = GN.shape[0]
    scale = np.abs(f).max()
    found = []
    for r in range(n + 1):
        for active in itertools.combinations(range(n), r):
            A = GN[list(active)]
            if r:
                Z = sla.null_space(A)
                u = Z @ np.linalg.solve(Z.T @ K @ Z, Z.T @ f)
            else:
                u = np.linalg.solve(K, f)
            if np.any(GN @ u > 1e-12 * np.abs(u).max()):
                continue
            resid = f - K @ u
            if r:
                lam, rnorm = sopt.nnls(A.T, resid)
            else:
                rnorm = np.linalg.norm(resid)
            if rnorm <= 1e-10 * scale:
                found.append(u)
    return found


def test_active_set_enumeration_oracle():
    t0 = time.perf_counter()
    dp = enumeration_problem()
    assert dp.dofs.n_dofs <= 300 and dp.coupling.n_points <= 12
    K, f = dp.stiffness.matrix.toarray(), dp.load
    found = enumerate_active_sets(K, f, dp.coupling.G_N.toarray())
    assert found
    ref = found[0]
    for other in found[1:]:
        assert energy_error(K, other, ref) <= 1e-9
    res = solve_mfem(dp, TIGHT)
    assert energy_error(K, res.u, ref) <= 1e-6
    assert time.perf_counter() - t0 < 10.0


def interior_rows(dp):
    """Rows of ``[G_N; G_T]`` belonging to P1 points whose node is not clamped."""
    ops, n = dp.coupling, dp.coupling.n_points
    pts = np.concatenate(
        [
            ops.point_offsets[k] + np.flatnonzero(dp.dofs.node_to_free[k][p.upper_nodes] >= 0)
            for k, p in enumerate(ops.pairings)
        ]
    )
    return np.concatenate([pts, n + 2 * pts, n + 2 * pts + 1])


def test_infsup_positive_for_matched_p1_on_free_nodes():
    dp = discretize(two_layer_problem(), 0.5, "p1")
    rows = interior_rows(dp)
    G = dp.coupling.G[rows]
    M = dp.coupling.block_gram[rows][:, rows]
    assert estimate_infsup(factorize(dp.stiffness), G, M) > 0


@pytest.mark.parametrize("kind", ["p0", "p1"])
def test_infsup_zero_when_points_touch_clamped_edges(kind):
    # jumps vanish on the clamped rim, so points there add rows without new jump unknowns
    dp = discretize(two_layer_problem(), 0.5, kind)
    assert dp.coupling.n_points > dp.dofs.node_to_free[0][dp.coupling.pairings[0].upper_nodes].max() + 1
    assert estimate_infsup(factorize(dp.stiffness), dp.coupling.G, dp.coupling.block_gram) == 0.0


def test_infsup_of_zero_coupling(small_problem):
    G = sp.csr_matrix(small_problem.coupling.G.shape)
    assert estimate_infsup(factorize(small_problem.stiffness), G, small_problem.coupling.block_gram) == 0.0


def test_infsup_detects_redundant_multipliers(small_problem):
    G = small_problem.coupling.G
    doubled = sp.vstack([G, G], format="csr")
    gram = sp.block_diag([small_problem.coupling.block_gram] * 2, format="csr")
    assert estimate_infsup(factorize(small_problem.stiffness), doubled, gram) == 0.0


def test_infsup_iterative_path_matches_dense():
    dp = discretize(two_layer_problem(), 0.5, "p1")
    factor = factorize(dp.stiffness)
    rows = interior_rows(dp)
    G, M = dp.coupling.G[rows], dp.coupling.block_gram[rows][:, rows]
    dense = estimate_infsup(factor, G, M)
    iterative = estimate_infsup(factor, G, M, dense_limit=0)
    assert iterative == pytest.approx(dense, rel=1e-3)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iter=0)


def test_dimension_mismatch(small_problem):
    factor = factorize(small_problem.stiffness)
    with pytest.raises(ValueError):
        build_dual(factor, small_problem.coupling, small_problem.load[:-1], small_problem.friction)


def test_friction_scaling_changes_slip(small_problem):
    factor = factorize(small_problem.stiffness)
    loose = build_dual(factor, small_problem.coupling, small_problem.load, small_problem.friction.scaled(0.0))
    lam, _ = solve_dual(loose)
    assert np.all(lam.tangential == 0)
    assert isinstance(FrictionField(np.zeros(3)), FrictionField)
