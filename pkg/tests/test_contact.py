import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from layercontact.contact import (
    ContactSpaceKind,
    FrictionField,
    MultiplierVector,
    assemble_coupling,
    friction_functional_j,
    jump_values,
    project_feasible,
    support_friction,
)
from layercontact.problem import discretize, pavement_benchmark


@pytest.fixture(scope="module", params=["p0", "p1"])
def ops(request):
    return discretize(pavement_benchmark(), 0.8, request.param).coupling


def _uniform_jump_field(ops, jump):
    """Displacement with the lower layer shifted by ``jump`` relative to the upper one.

    Dirichlet nodes stay at zero, so only interior interface nodes see the jump.
    """
    dofs = ops.dofs
    u = np.zeros(dofs.n_dofs)
    s = dofs.layer_slice(1)
    u[s] = np.tile(jump, dofs.free_nodes[1].size)
    return u


def test_shapes(ops):
    n = ops.n_points
    n_per = 11 * 6 if ops.kind is ContactSpaceKind.NODAL_LINEAR else 2 * 10 * 5
    assert n == 2 * n_per
    assert ops.G_N.shape == (n, ops.dofs.n_dofs)
    assert ops.G_T.shape == (2 * n, ops.dofs.n_dofs)
    assert ops.G.shape == (3 * n, ops.dofs.n_dofs)
    assert ops.block_gram.shape == (3 * n, 3 * n)


def test_point_weights_cover_interface(ops):
    for k in range(2):
        assert ops.point_weights[ops.interface_points(k)].sum() == pytest.approx(32.0)


def test_normal_jump_moments(ops):
    """G_N u equals int psi_p [u_N] for a field whose nodal jump is known."""
    u = _uniform_jump_field(ops, np.array([0.0, 0.0, 1.0]))
    gn = ops.G_N @ u
    for k, pairing in enumerate(ops.pairings):
        jn, jt = jump_values(u, pairing, ops.dofs)
        assert np.all(jt == 0)
        # [u_N] = u_z(lower) - u_z(upper): interface 0 has the shifted layer below, interface 1 above
        expected = 1.0 if k == 0 else -1.0
        interior = ops.dofs.node_to_free[k][pairing.upper_nodes] >= 0
        assert np.all(jn[interior] == expected)
        assert np.all(jn[~interior] == 0)
        assert gn[ops.interface_points(k)].sum() == pytest.approx(expected * _interior_area(ops, k), rel=1e-12)


def _interior_area(ops, k):
    p = ops.pairings[k]
    interior = (ops.dofs.node_to_free[k][p.upper_nodes] >= 0).astype(float)
    return float(p.triangle_areas() @ interior[p.triangles].mean(axis=1))


def test_tangential_sign(ops):
    u = _uniform_jump_field(ops, np.array([1.0, -2.0, 0.0]))
    gt = (ops.G_T @ u).reshape(-1, 2)
    # [u_T] = upper - lower, so interface 0 sees minus the shift
    pts = ops.interface_points(0)
    assert np.all(gt[pts, 0] <= 1e-15) and np.all(gt[pts, 1] >= -1e-15)


def test_friction_functionals(ops):
    fr = FrictionField.uniform(ops, (0.2, 0.05))
    u = _uniform_jump_field(ops, np.array([3.0, 4.0, 0.0]))
    j = friction_functional_j(u, fr, ops)
    s = support_friction(u, fr, ops)
    assert j > 0 and s > 0
    assert support_friction(np.zeros_like(u), fr, ops) == 0.0


def test_zero_friction_field_validation(ops):
    with pytest.raises(ValueError):
        FrictionField(np.array([-1.0]))
    with pytest.raises(ValueError):
        FrictionField.uniform(ops, (0.2,))


def _random_case(rng, n):
    g = rng.random(n) * rng.choice([0.0, 1.0, 10.0])
    mu = rng.standard_normal(3 * n) * rng.choice([0.1, 1.0, 100.0])
    return mu, g


def test_projection_idempotent_and_nonexpansive(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 20))
        mu, g = _random_case(rng, n)
        nu, _ = _random_case(rng, n)
        p = project_feasible(mu, g)
        np.testing.assert_array_equal(project_feasible(p, g), p)
        q = project_feasible(nu, g)
        assert np.linalg.norm(p - q) <= np.linalg.norm(mu - nu) * (1 + 1e-12) + 1e-15
        mv = MultiplierVector(p, n)
        assert mv.is_feasible(FrictionField(g))
        assert np.all(mv.normal >= 0)
        assert np.all(np.linalg.norm(mv.tangential, axis=1) <= g)


def test_projection_variational_inequality(rng):
    """(mu - P mu) . (nu - P mu) <= 0 for every feasible nu."""
    for _ in range(200):
        n = int(rng.integers(1, 8))
        mu, g = _random_case(rng, n)
        p = project_feasible(mu, g)
        nu = project_feasible(rng.standard_normal(3 * n) * 5, g)
        assert (mu - p) @ (nu - p) <= 1e-10 * (1 + np.abs(mu).max() ** 2)


@settings(max_examples=200, deadline=None)
@given(
    mu=arrays(np.float64, 12, elements=st.floats(-1e3, 1e3)),
    g=arrays(np.float64, 4, elements=st.floats(0, 1e2)),
)
def test_projection_properties_hypothesis(mu, g):
    p = project_feasible(mu, g)
    np.testing.assert_array_equal(project_feasible(p, g), p)
    assert np.all(p[:4] >= 0)
    assert np.all(np.linalg.norm(p[4:].reshape(-1, 2), axis=1) <= g)


def test_multiplier_vector_wrapper(ops):
    lam = MultiplierVector.zeros(ops)
    assert lam.values.shape == (ops.n_multipliers,)
    fr = FrictionField.uniform(ops, (0.2, 0.05))
    out = project_feasible(MultiplierVector(np.ones(ops.n_multipliers), ops.n_points, ops.kind), fr)
    assert isinstance(out, MultiplierVector)
    assert out.is_feasible(fr)


def test_space_kind_parse():
    assert ContactSpaceKind.parse("p0") is ContactSpaceKind.ELEMENTWISE_CONSTANT
    assert ContactSpaceKind.parse(ContactSpaceKind.NODAL_LINEAR) is ContactSpaceKind.NODAL_LINEAR
    with pytest.raises(ValueError):
        ContactSpaceKind.parse("p2")


def test_assemble_coupling_default_pairings():
    from layercontact.mesh import build_layer_stack

    mesh = build_layer_stack(pavement_benchmark().geometry, 0.8)
    ops = assemble_coupling(mesh, "p1")
    assert len(ops.pairings) == 2
