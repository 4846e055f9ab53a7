import numpy as np
import pytest

from mslab.manifold import PointSet, sphere, torus


@pytest.fixture
def s2():
    return sphere(2)


@pytest.fixture
def t2():
    return torus(2)


@pytest.fixture
def octahedron(s2):
    e = np.eye(3)
    return PointSet(s2, np.vstack([e, -e]), "octahedron")


def brute_sphere_mesh(n_theta, n_phi):
    """Equiangular mesh of S^2 used as an independent brute-force oracle."""
    th = np.linspace(0.0, np.pi, n_theta)
    ph = np.linspace(0.0, 2.0 * np.pi, n_phi, endpoint=False)
    T, Ph = np.meshgrid(th, ph, indexing="ij")
    return np.column_stack([(np.sin(T) * np.cos(Ph)).ravel(), (np.sin(T) * np.sin(Ph)).ravel(), np.cos(T).ravel()])


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
