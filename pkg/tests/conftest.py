import warnings

import numpy as np
import pytest

from plapflow.geometry import ConformalMetric
from plapflow.meshes import flat_torus, genus2, icosphere


@pytest.fixture(autouse=True)
def _quiet_solver_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", module="plapflow")
        yield


@pytest.fixture(scope="session")
def ico2():
    return icosphere(2)


@pytest.fixture(scope="session")
def ico3():
    return icosphere(3)


@pytest.fixture(scope="session")
def torus16():
    return flat_torus(16, 16)


@pytest.fixture(scope="session")
def g2():
    return genus2()


@pytest.fixture(scope="session")
def shipped_meshes(ico2, torus16, g2):
    return {"icosphere": ico2, "torus": torus16, "genus2": g2}


def random_metric(mesh, seed, amplitude=0.3):
    rng = np.random.default_rng(seed)
    return ConformalMetric(mesh, amplitude * rng.standard_normal(mesh.vertex_count))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
