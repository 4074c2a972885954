import math

import numpy as np
import pytest

from plapflow.errors import ConstantInput, InvalidP, MeshMismatch, NotRecentered
from plapflow.geometry import ConformalMetric, p_mass
from plapflow.meshes import flat_torus, icosphere, torus_coordinates
from plapflow.peigen import (
    EigenConfig,
    el_residual,
    linear_first_eigen,
    median_constraint,
    rayleigh,
    recenter,
    recenter_weights,
    solve_candidates,
    solve_first_eigen,
    transport_test_function,
)

from conftest import random_metric


class TestRecenter:
    def test_two_vertices_p4(self):
        # (s - 1)^3 + (s + 2)^3 = 0  ->  s = -1/2
        assert recenter_weights(np.array([-1.0, 2.0]), np.ones(2), 4.0) == pytest.approx(-0.5, abs=1e-15)

    def test_p2_is_mean_shift(self, ico3):
        g = random_metric(ico3, 0)
        f = np.random.default_rng(1).standard_normal(ico3.vertex_count)
        s0, shifted = recenter(g, f, 2.0)
        mu = g.vertex_measure
        assert s0 == pytest.approx(-np.dot(f, mu) / mu.sum(), rel=1e-12, abs=1e-15)
        np.testing.assert_allclose(shifted, f + s0)

    @pytest.mark.parametrize("p", [1.3, 2.0, 4.5])
    def test_odd_field_needs_no_shift(self, p):
        f = np.array([-3.0, -1.0, 0.5, -0.5, 1.0, 3.0])
        w = np.array([0.2, 0.7, 0.4, 0.4, 0.7, 0.2])
        assert abs(recenter_weights(f, w, p)) <= 1e-14

    def test_constant_input(self):
        with pytest.raises(ConstantInput):
            recenter_weights(np.full(5, 2.0), np.ones(5), 3.0)

    @pytest.mark.parametrize("p", [1.2, 1.7, 2.0, 3.0, 5.0])
    def test_sign_change_at_root(self, p):
        rng = np.random.default_rng(int(10 * p))
        f = rng.standard_normal(50)
        w = rng.uniform(0.1, 1.0, 50)
        s0 = recenter_weights(f, w, p)
        delta = 1e-9 * np.ptp(f)

        def F(s):
            g = f + s
            return np.dot(np.sign(g) * np.abs(g) ** (p - 1), w)

        assert F(s0 - delta) <= 0 <= F(s0 + delta)


class TestRayleigh:
    def test_sine_on_torus(self):
        m = flat_torus(64, 64)
        x, _ = torus_coordinates(64, 64)
        g = ConformalMetric(m)
        assert rayleigh(g, np.sin(x), 2.0) == pytest.approx(1.0, rel=0.02)

    @pytest.mark.parametrize("p", [1.5, 3.0])
    def test_scale_invariance(self, ico2, p):
        g = random_metric(ico2, 2)
        _, f = recenter(g, np.random.default_rng(3).standard_normal(ico2.vertex_count), p)
        base = rayleigh(g, f, p)
        for c in (-2.5, 0.1, 7.0):
            assert rayleigh(g, c * f, p) == pytest.approx(base, rel=1e-12)

    def test_requires_recentered_input(self, ico2):
        g = ConformalMetric(ico2)
        f = np.random.default_rng(4).standard_normal(ico2.vertex_count) + 1.0
        with pytest.raises(NotRecentered):
            rayleigh(g, f, 3.0)

    def test_constant_input(self, ico2):
        with pytest.raises(ConstantInput):
            rayleigh(ConformalMetric(ico2), np.zeros(ico2.vertex_count), 2.0)

    def test_oracle_eigenfunction(self, ico3):
        g = ConformalMetric(ico3)
        lam, f = linear_first_eigen(g)
        assert rayleigh(g, f, 2.0) == pytest.approx(lam, rel=1e-10)


class TestLinearOracle:
    def test_round_sphere(self):
        lam, _ = linear_first_eigen(ConformalMetric(icosphere(4)))
        assert lam == pytest.approx(2.0, rel=0.02)

    def test_flat_torus(self):
        lam, _ = linear_first_eigen(ConformalMetric(flat_torus(64, 64)))
        assert lam == pytest.approx(1.0, rel=0.02)

    def test_oracle_residual(self, torus16):
        g = random_metric(torus16, 5)
        lam, f = linear_first_eigen(g)
        assert el_residual(g, f, lam, 2.0) <= 1e-8


class TestResidual:
    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_random_field_is_not_critical(self, ico2, p):
        g = random_metric(ico2, 6)
        _, f = recenter(g, np.random.default_rng(7).standard_normal(ico2.vertex_count), p)
        f = f / p_mass(g, f, p) ** (1 / p)
        assert el_residual(g, f, rayleigh(g, f, p), p) > 0

    @pytest.mark.parametrize("p", [1.5, 3.0])
    def test_sign_flip(self, ico2, p):
        g = random_metric(ico2, 8)
        f = np.random.default_rng(9).standard_normal(ico2.vertex_count)
        assert el_residual(g, -f, 1.3, p) == pytest.approx(el_residual(g, f, 1.3, p), rel=1e-14)


class TestTransport:
    def test_identity_up_to_normalization(self, ico2):
        g = random_metric(ico2, 10)
        _, f = recenter(g, np.random.default_rng(11).standard_normal(ico2.vertex_count), 3.0)
        out = transport_test_function(g, g, f, 3.0)
        np.testing.assert_allclose(out, f / p_mass(g, f, 3.0) ** (1 / 3), rtol=1e-13)

    def test_p2_multiplier(self, ico2):
        g1, g2 = random_metric(ico2, 12), random_metric(ico2, 13)
        f = np.random.default_rng(14).standard_normal(ico2.vertex_count)
        out = transport_test_function(g1, g2, f, 2.0)
        ratio = out / f
        expected = np.exp(2 * (g1.u - g2.u))
        np.testing.assert_allclose(ratio / ratio[0], expected / expected[0], rtol=1e-12)
        assert p_mass(g2, out, 2.0) == pytest.approx(1.0, rel=1e-13)

    @pytest.mark.parametrize("seed", range(5))
    def test_constraint_preserved(self, ico2, seed):
        g1, g2 = random_metric(ico2, 100 + seed), random_metric(ico2, 200 + seed)
        _, f = recenter(g1, np.random.default_rng(seed).standard_normal(ico2.vertex_count), 3.0)
        out = transport_test_function(g1, g2, f, 3.0)
        assert abs(np.dot(np.abs(out) * out, g2.vertex_measure)) <= 1e-12

    def test_mesh_mismatch(self, ico2, torus16):
        with pytest.raises(MeshMismatch):
            transport_test_function(ConformalMetric(ico2), ConformalMetric(torus16),
                                    np.ones(ico2.vertex_count), 2.0)


class TestSolver:
    def test_matches_linear_oracle(self, ico3):
        g = ConformalMetric(ico3)
        sol = solve_first_eigen(g, EigenConfig(p=2.0, restarts=2))
        lam, _ = linear_first_eigen(g)
        assert sol.converged
        assert sol.lam == pytest.approx(lam, rel=1e-6)

    @pytest.mark.parametrize("p", [1.5, 2.5, 3.0])
    def test_solution_invariants(self, torus16, p):
        g = random_metric(torus16, 15, amplitude=0.2)
        sol = solve_first_eigen(g, EigenConfig(p=p, restarts=3))
        assert sol.converged
        assert p_mass(g, sol.f, p) == pytest.approx(1.0, abs=1e-10)
        assert abs(median_constraint(g, sol.f, p)) <= 1e-10 * g.area ** ((p - 1) / p)
        assert sol.lam == pytest.approx(rayleigh(g, sol.f, p), rel=1e-12)
        assert sol.el_residual < EigenConfig().tol_residual

    @pytest.mark.parametrize("p", [1.5, 3.0])
    def test_homothety(self, ico2, p):
        g = random_metric(ico2, 16, amplitude=0.1)
        cfg = EigenConfig(p=p, restarts=2)
        lam = solve_first_eigen(g, cfg).lam
        for c in (0.25, 4.0):
            scaled = solve_first_eigen(g.shifted(0.5 * math.log(c)), cfg).lam
            assert scaled == pytest.approx(c ** (-p / 2) * lam, rel=1e-6)

    def test_seeded_restarts_are_deterministic(self, ico2):
        g = random_metric(ico2, 17)
        cfg = EigenConfig(p=2.5, restarts=3, rng_seed=4)
        a = [s.lam for s in solve_candidates(g, cfg)]
        b = [s.lam for s in solve_candidates(g, cfg)]
        assert a == b

    def test_best_candidate_is_lowest(self, ico2):
        g = random_metric(ico2, 18)
        cfg = EigenConfig(p=1.5, restarts=4)
        cands = solve_candidates(g, cfg)
        best = solve_first_eigen(g, cfg)
        assert best.lam == min(c.lam for c in cands if c.converged)
        assert best.restarts == 4

    def test_warm_start(self, torus16):
        g = random_metric(torus16, 19)
        cold = solve_first_eigen(g, EigenConfig(p=3.0, restarts=2))
        warm = solve_first_eigen(g, EigenConfig(p=3.0), initial=cold.f)
        assert warm.lam == pytest.approx(cold.lam, rel=1e-8)
        assert warm.iterations < cold.iterations

    def test_config_validation(self):
        with pytest.raises(InvalidP):
            EigenConfig(p=0.9)
        with pytest.raises(ValueError):
            EigenConfig(p=2.0, eps_schedule=(1e-2, 1e-3))
        with pytest.raises(ValueError):
            EigenConfig(p=2.0, restarts=0)
