import math

import numpy as np
import pytest

from plapflow.errors import DegenerateFace, InvalidP, NonManifold, ShapeMismatch
from plapflow.geometry import (
    ConformalMetric,
    average_scalar_curvature,
    build_mesh,
    dirichlet_p_energy,
    gauss_bonnet_average,
    integrate,
    laplace0,
    min_gauss_curvature,
    p_energy_gradient,
    p_mass,
    scalar_curvature,
)
from plapflow.meshes import flat_torus, icosphere, icosphere_embedding, torus_coordinates

from conftest import random_metric


def _unit_icosahedron():
    _, faces = icosphere_embedding(0)
    edges = {tuple(sorted((f[a], f[b]))) for f in faces for a, b in ((0, 1), (1, 2), (2, 0))}
    return build_mesh(faces, [(i, j, 1.0) for i, j in edges])


class TestBuildMesh:
    def test_icosahedron_unit_lengths(self):
        m = _unit_icosahedron()
        assert m.euler_characteristic == 2
        assert m.angle_defects.sum() == pytest.approx(4 * math.pi, rel=1e-12)

    def test_periodic_grid_counts(self):
        m = flat_torus(4, 4, 1.0, 1.0)
        assert (m.vertex_count, m.edge_count, m.face_count) == (16, 48, 32)
        assert m.euler_characteristic == 0

    def test_degenerate_face(self):
        faces = [(0, 1, 2), (0, 2, 1)]
        with pytest.raises(DegenerateFace):
            build_mesh(faces, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 3.0)])

    def test_open_surface_rejected(self):
        with pytest.raises(NonManifold):
            build_mesh([(0, 1, 2)], [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])

    def test_cotan_weights_sum_cancels_on_constants(self, ico3):
        assert np.abs(ico3.stiffness @ np.ones(ico3.vertex_count)).max() < 1e-12


class TestLaplace:
    def test_constant_is_harmonic(self, ico3):
        assert np.abs(laplace0(ico3, np.full(ico3.vertex_count, 3.7))).max() < 1e-12

    def test_linear_coordinate_on_flat_grid(self):
        nx = ny = 8
        m = flat_torus(nx, ny, 1.0, 1.0)
        x, _ = torus_coordinates(nx, ny, 1.0, 1.0)
        lap = laplace0(m, x)
        # the periodic seam breaks linearity, so only interior columns are checked
        col = np.rint(x * nx).astype(int)
        interior = (col > 0) & (col < nx - 1)
        assert np.abs(lap[interior]).max() <= 1e-10

    def test_negative_semidefinite(self, shipped_meshes):
        rng = np.random.default_rng(0)
        for m in shipped_meshes.values():
            for _ in range(100):
                f = rng.standard_normal(m.vertex_count)
                assert -f @ (m.vertex_areas * laplace0(m, f)) >= -1e-12

    def test_shape_mismatch(self, ico3):
        with pytest.raises(ShapeMismatch):
            laplace0(ico3, np.zeros(3))


class TestCurvature:
    def test_round_sphere_value(self, ico3):
        R = scalar_curvature(ConformalMetric(ico3))
        assert np.all(np.abs(R - 2.0) <= 0.1)

    def test_constant_shift(self, ico3):
        g = random_metric(ico3, 1)
        c = 0.37
        np.testing.assert_allclose(scalar_curvature(g.shifted(c)),
                                   math.exp(-2 * c) * scalar_curvature(g), rtol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gauss_bonnet(self, shipped_meshes, seed):
        for m in shipped_meshes.values():
            g = random_metric(m, seed, amplitude=0.5)
            total = integrate(g, scalar_curvature(g))
            assert abs(total - 4 * math.pi * m.euler_characteristic) <= 1e-10 * (
                1 + 4 * math.pi * abs(m.euler_characteristic))

    def test_average_curvature(self, ico3, torus16):
        g = ConformalMetric(ico3)
        assert integrate(g, np.ones(ico3.vertex_count)) == pytest.approx(g.area, rel=1e-15)
        assert average_scalar_curvature(g) == pytest.approx(8 * math.pi / g.area, rel=1e-10)
        assert average_scalar_curvature(g) == pytest.approx(gauss_bonnet_average(g), rel=1e-10)
        assert average_scalar_curvature(ConformalMetric(torus16)) == 0.0

    def test_min_gauss_curvature(self, ico3, torus16):
        g = ConformalMetric(ico3)
        assert min_gauss_curvature(g) == pytest.approx(1.0, rel=0.05)
        assert abs(min_gauss_curvature(ConformalMetric(torus16))) <= 1e-10
        assert min_gauss_curvature(g.shifted(0.2)) == pytest.approx(
            math.exp(-0.4) * min_gauss_curvature(g), rel=1e-12)


class TestEnergyAndMass:
    def test_constant_has_zero_energy(self, ico3):
        g = random_metric(ico3, 2)
        assert dirichlet_p_energy(g, np.full(ico3.vertex_count, 2.0), 3.0) == pytest.approx(0.0, abs=1e-20)

    def test_cotan_form_at_p2(self, ico3):
        g = ConformalMetric(ico3)
        f = np.random.default_rng(3).standard_normal(ico3.vertex_count)
        i, j = ico3.edges.T
        cotan = np.sum(ico3.cotan_weights * (f[i] - f[j]) ** 2)
        assert dirichlet_p_energy(g, f, 2.0) == pytest.approx(cotan, rel=1e-12)

    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_conformal_shift_scaling(self, torus16, p):
        g = random_metric(torus16, 4)
        f = np.random.default_rng(5).standard_normal(torus16.vertex_count)
        c = -0.3
        assert dirichlet_p_energy(g.shifted(c), f, p) == pytest.approx(
            math.exp((2 - p) * c) * dirichlet_p_energy(g, f, p), rel=1e-13)
        assert p_mass(g.shifted(c), f, p) == pytest.approx(math.exp(2 * c) * p_mass(g, f, p), rel=1e-13)

    def test_mass_of_one_is_area(self, g2):
        g = random_metric(g2, 6)
        assert p_mass(g, np.ones(g2.vertex_count), 2.5) == pytest.approx(g.area, rel=1e-14)

    def test_unit_weight_mass(self, ico2):
        # u chosen so every vertex has unit measure; f lives on two vertices
        g = ConformalMetric(ico2, -0.5 * np.log(ico2.vertex_areas))
        f = np.zeros(ico2.vertex_count)
        f[:2] = (1.0, 2.0)
        assert p_mass(g, f, 3.0) == pytest.approx(9.0, rel=1e-14)

    def test_invalid_p(self, ico3):
        with pytest.raises(InvalidP):
            p_mass(ConformalMetric(ico3), np.ones(ico3.vertex_count), 1.0)

    @pytest.mark.parametrize("p", [1.5, 2.0, 3.5])
    def test_gradient_matches_finite_differences(self, ico2, p):
        g = random_metric(ico2, 7)
        rng = np.random.default_rng(8)
        f = rng.standard_normal(ico2.vertex_count)
        d = rng.standard_normal(ico2.vertex_count)
        h = 1e-6
        fd = (dirichlet_p_energy(g, f + h * d, p, 1e-3) - dirichlet_p_energy(g, f - h * d, p, 1e-3)) / (2 * h)
        energy, grad = p_energy_gradient(g, f, p, 1e-3)
        assert energy == pytest.approx(dirichlet_p_energy(g, f, p, 1e-3), rel=1e-14)
        assert grad @ d == pytest.approx(fd, rel=1e-6)
