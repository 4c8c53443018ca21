import numpy as np
import pytest

from layercontact.assembly import IsotropicMaterial, LoadSpec
from layercontact.mesh import Layer, LayerStackSpec
from layercontact.problem import ContactProblem, discretize, pavement_benchmark


def two_layer_problem(
    friction=0.5,
    traction=(1.0, 0.5, -10.0),
    body=(0.0, 0.0, -1.0),
    footprint=(0.0, 2.0, 0.0, 2.0),
    thickness=(0.4, 0.8),
    patch=(0.6, 1.4, 0.6, 1.4),
) -> ContactProblem:
    geo = LayerStackSpec(footprint, (Layer(thickness[0], 0), Layer(thickness[1], 1)), z_top=sum(thickness))
    mats = (IsotropicMaterial(1000.0, 0.3), IsotropicMaterial(100.0, 0.3))
    loads = LoadSpec((tuple(body), tuple(body)), tuple(traction), patch)
    return ContactProblem(geo, mats, loads, (friction,))


@pytest.fixture(scope="session")
def small_problem():
    """Two layers, 192 displacement dofs, 36 nodal multiplier points, partial slip."""
    return discretize(two_layer_problem(), 0.4, "p1")


@pytest.fixture(scope="session")
def coarse_benchmark():
    return discretize(pavement_benchmark(), 0.8, "p1")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, printed at the end of the run whatever the capture mode
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
