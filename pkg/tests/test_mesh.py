import numpy as np
import pytest

from layercontact.mesh import (
    FacetTag,
    Layer,
    LayerStackSpec,
    MeshError,
    build_layer_stack,
    extract_contact_pairing,
    signed_volumes,
    validate_mesh,
)
from layercontact.problem import pavement_benchmark


def unit_cube():
    return build_layer_stack(LayerStackSpec((0, 1, 0, 1), (Layer(1.0),), 1.0), 1.0)


def test_unit_cube_is_six_positive_tets():
    mesh = unit_cube()
    lm = mesh.layers[0]
    assert lm.n_nodes == 8 and lm.tets.shape == (6, 4)
    assert np.all(signed_volumes(lm.nodes, lm.tets) > 0)
    assert lm.tet_volumes().sum() == pytest.approx(1.0, abs=1e-14)


def test_benchmark_counts_at_h04():
    mesh = build_layer_stack(pavement_benchmark().geometry, 0.4)
    assert mesh.n_tets == 20 * 10 * (1 + 2 + 4) * 6
    assert [lm.n_nodes for lm in mesh.layers] == [21 * 11 * 2, 21 * 11 * 3, 21 * 11 * 5]
    diag = validate_mesh(mesh)
    assert diag.passed, diag.failures
    assert diag.tag_areas[0]["TRACTION"] == pytest.approx(32.0)


@pytest.mark.parametrize("h", [0.8, 0.5, 0.25])
def test_validate_volume_and_tags(h):
    diag = validate_mesh(build_layer_stack(pavement_benchmark().geometry, h))
    assert diag.passed, diag.failures
    assert max(diag.volume_error) < 1e-10
    assert diag.min_volume > 0


def test_pairing_matches_coordinates():
    mesh = build_layer_stack(pavement_benchmark().geometry, 0.4)
    for k in range(mesh.n_interfaces):
        p = extract_contact_pairing(mesh, k)
        up = mesh.layers[k].nodes[p.upper_nodes]
        lo = mesh.layers[k + 1].nodes[p.lower_nodes]
        np.testing.assert_allclose(up, lo, rtol=0, atol=1e-12)
        assert p.n_nodes == 21 * 11
        assert p.triangle_areas().sum() == pytest.approx(32.0)


def test_pairing_rejects_bad_interface():
    mesh = build_layer_stack(pavement_benchmark().geometry, 0.8)
    with pytest.raises(MeshError):
        extract_contact_pairing(mesh, 2)
    with pytest.raises(MeshError):
        extract_contact_pairing(mesh, -1)


def test_boundary_tags():
    mesh = build_layer_stack(pavement_benchmark().geometry, 0.8)
    top, mid, bottom = mesh.layers
    assert top.facets_with(FacetTag.TRACTION).size > 0
    assert top.facets_with(FacetTag.CONTACT_TOP).size == 0
    assert bottom.facets_with(FacetTag.CONTACT_BOTTOM).size == 0
    assert mid.facets_with(FacetTag.CONTACT_TOP).size == mid.facets_with(FacetTag.CONTACT_BOTTOM).size
    # bottom face of the last layer is clamped
    z = bottom.nodes[bottom.facets_with(FacetTag.DIRICHLET)][..., 2]
    assert np.any(np.all(np.isclose(z, 0.0), axis=1))


@pytest.mark.parametrize(
    "bad",
    [
        dict(footprint=(0, 0, 0, 1), layers=(Layer(1.0),), z_top=1.0),
        dict(footprint=(0, 1, 0, 1), layers=(), z_top=1.0),
        dict(footprint=(0, 1, 0, 1), layers=(Layer(-1.0),), z_top=1.0),
    ],
)
def test_invalid_geometry(bad):
    with pytest.raises(MeshError):
        LayerStackSpec(**bad)


def test_nonpositive_h():
    with pytest.raises(MeshError):
        build_layer_stack(pavement_benchmark().geometry, 0.0)
