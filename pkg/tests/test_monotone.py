import math

import numpy as np
import pytest

from plapflow.errors import (
    BadParams,
    BranchMismatch,
    NegativeEps,
    NotConverged,
    PastBlowup,
    PinchingViolated,
    WrongSign,
)
from plapflow.flow import FlowSpec, chow_knopf_bounds, run
from plapflow.geometry import ConformalMetric
from plapflow.meshes import icosphere
from plapflow.monotone import (
    BoundParams,
    QuantitySeries,
    assert_monotone,
    check_comparison,
    check_continuity,
    check_curvature_bounds,
    conformal_rate,
    continuity_bounds,
    decreasing_quantity,
    estimate_C,
    increasing_quantity,
    predicted_rate,
    rate_lower_bound,
    unnormalized_quantity,
)
from plapflow.peigen import EigenConfig, solve_first_eigen

from conftest import random_metric


def params(chi, p, r=-1.0, C=1.0, rho0=None, sigma0=None):
    rho0 = r - 1.0 if rho0 is None else rho0
    sigma0 = r + 0.5 if sigma0 is None else sigma0
    return BoundParams(rho0=rho0, sigma0=sigma0, C=C, r=r, a=max(0.5, 2 / p**2), n=2, p=p, chi=chi)


class TestEstimateC:
    def test_constant_curvature(self):
        assert estimate_C(np.full(10, -2.0), -2.0) == 0.0

    def test_negative_average(self):
        assert estimate_C(np.array([-4.0, -2.5, -1.0]), -2.0) == 2.0

    def test_zero_average(self):
        assert estimate_C(np.array([-1.0, 0.5, 3.0]), 0.0) == 3.0

    def test_positive_average(self):
        assert estimate_C(np.array([-0.5, 1.0, 4.0]), 1.0) == 3.0

    @pytest.mark.parametrize("seed", range(3))
    def test_bounds_hold_at_start(self, shipped_meshes, seed):
        for m in shipped_meshes.values():
            g = random_metric(m, seed)
            R, r = g.scalar_curvature, g.average_scalar_curvature
            if m.euler_characteristic == 0:
                r = 0.0
            lo, hi = chow_knopf_bounds(0.0, r, estimate_C(R, r))
            assert lo - 1e-12 <= R.min() and R.max() <= hi + 1e-12


class TestNormalizedQuantities:
    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_negative_branch_at_start(self, p):
        par = params(-2, p)
        q = increasing_quantity(2.5, 0.0, par)
        if p >= 2:
            assert q == pytest.approx(2.5)

    def test_flat_increasing(self):
        assert increasing_quantity(3.0, 0.5, params(0, 2.0, r=0.0, C=2.0)) == pytest.approx(6.0)

    def test_flat_decreasing_small_p(self):
        q = decreasing_quantity(4.0, 1.0, params(0, 1.5, r=0.0, C=1.0))
        assert q == pytest.approx(4 * 2 ** -0.25 * math.exp(-1), rel=1e-12)
        assert q == pytest.approx(1.2374, abs=1e-4)

    def test_flat_decreasing_at_start(self):
        assert decreasing_quantity(4.0, 0.0, params(0, 2.5, r=0.0)) == pytest.approx(math.log(4.0))

    def test_positive_branch_at_start(self):
        par = params(2, 2.0, r=1.5, C=0.6, rho0=1.0, sigma0=2.0)
        assert increasing_quantity(2.0, 0.0, par) == pytest.approx(math.log(2.0) + 0.6 / 1.5)

    def test_zero_C_collapses_to_log(self):
        par = params(-2, 2.5, C=0.0)
        t = np.linspace(0, 3, 7)
        np.testing.assert_allclose(decreasing_quantity(np.full(7, 3.0), t, par), math.log(3.0))

    def test_branch_mismatch(self):
        with pytest.raises(BranchMismatch):
            increasing_quantity(1.0, 0.0, params(-2, 2.0, r=0.0))
        with pytest.raises(BranchMismatch):
            decreasing_quantity(1.0, 0.0, params(2, 2.0, r=-1.0))

    def test_nonpositive_lambda(self):
        with pytest.raises(BadParams):
            increasing_quantity(0.0, 0.0, params(-2, 2.0))

    def test_regime_selected_by_p(self):
        # at p = 2 the p >= 2 formula applies, at p just below 2 the other one
        par2, par_lo = params(0, 2.0, r=0.0, C=1.0), params(0, 2.0 - 1e-12, r=0.0, C=1.0)
        assert increasing_quantity(1.0, 1.0, par2) == pytest.approx(2.0)
        assert increasing_quantity(1.0, 1.0, par_lo) == pytest.approx(2.0, rel=1e-9)


class TestUnnormalizedQuantities:
    def test_ricci_increasing_example(self):
        par = BoundParams(rho0=2.0, sigma0=2.0, C=0.0, r=2.0, a=0.5, n=2, p=2.0, chi=2)
        assert unnormalized_quantity(5.0, 0.25, par, "ricci_increasing") == pytest.approx(1.25)

    def test_yamabe_branches_coincide_at_constant_curvature(self):
        par = BoundParams(rho0=2.0, sigma0=2.0, C=0.0, r=2.0, a=0.5, n=2, p=3.0, chi=2)
        t = np.linspace(0, 0.4, 5)
        lam = np.linspace(1, 2, 5)
        np.testing.assert_allclose(unnormalized_quantity(lam, t, par, "yamabe_increasing"),
                                   unnormalized_quantity(lam, t, par, "yamabe_decreasing"))

    @pytest.mark.parametrize("which", ["ricci_increasing", "ricci_decreasing",
                                       "yamabe_increasing", "yamabe_decreasing"])
    def test_at_start(self, which):
        par = BoundParams(rho0=1.0, sigma0=3.0, C=0.0, r=2.0, a=0.5, n=2, p=2.5, chi=2)
        q = unnormalized_quantity(2.0, 0.0, par, which)
        assert q > 0 and q / 2.0 == pytest.approx(unnormalized_quantity(1.0, 0.0, par, which))

    def test_past_blowup(self):
        par = BoundParams(rho0=2.0, sigma0=2.0, C=0.0, r=2.0, a=0.5, n=2, p=2.0, chi=2)
        with pytest.raises(PastBlowup):
            unnormalized_quantity(1.0, 0.6, par, "yamabe_increasing")

    def test_unknown_name(self):
        par = BoundParams(rho0=2.0, sigma0=2.0, C=0.0, r=2.0, a=0.5, n=2, p=2.0, chi=2)
        with pytest.raises(BadParams):
            unnormalized_quantity(1.0, 0.0, par, "entropy")


class TestAssertMonotone:
    def _series(self, q, direction="increasing", tol=1e-6):
        t = np.arange(len(q), dtype=float)
        return QuantitySeries("q", direction, t, np.ones(len(q)), np.asarray(q, dtype=float), tol)

    def test_pass(self):
        assert assert_monotone(self._series([1, 2, 3], tol=0.0)).passed

    def test_fail_reports_worst_step(self):
        rep = assert_monotone(self._series([1, 0.5, 3]))
        assert not rep.passed
        assert rep.index == 1
        assert rep.worst_violation == pytest.approx(0.5)
        assert rep.t_at_worst == 1.0

    def test_within_slack(self):
        assert assert_monotone(self._series([1, 1 - 1e-9, 3])).passed

    def test_decreasing(self):
        assert assert_monotone(self._series([3, 2, 2, 1], "decreasing", 0.0)).passed
        assert not assert_monotone(self._series([3, 2, 2.5], "decreasing")).passed

    def test_report_serializes(self):
        d = assert_monotone(self._series([1, 2])).to_dict()
        assert {"name", "direction", "pass", "worst_violation", "t_at_worst", "tol"} <= set(d)


class TestComparison:
    def test_fixed_point(self):
        rep = check_comparison(1.7, 1.7, -1.0, -1.0, 2.0)
        assert rep["ratio"] == 1.0 and rep["threshold"] == 1.0 and rep["pass"]
        assert rep["margin"] == 0.0

    def test_threshold_p2(self):
        assert check_comparison(1.0, 1.0, -2.0, -1.0, 2.0)["threshold"] == pytest.approx(0.5)

    def test_threshold_p4_equal_curvature(self):
        assert check_comparison(1.0, 1.0, -1.3, -1.3, 4.0)["threshold"] == pytest.approx(1.0)

    def test_failure_below_threshold(self):
        assert not check_comparison(1.0, 0.4, -2.0, -1.0, 2.0)["pass"]

    def test_small_p_needs_C(self):
        with pytest.raises(BadParams):
            check_comparison(1.0, 1.0, -2.0, -1.0, 1.5)
        assert "threshold" in check_comparison(1.0, 1.0, -2.0, -1.0, 1.5, C=0.5)

    def test_wrong_sign(self):
        with pytest.raises(WrongSign):
            check_comparison(1.0, 1.0, 0.5, -1.0, 2.0)


class TestContinuity:
    def test_bounds(self):
        assert continuity_bounds(0.0, 2, 3.0) == (1.0, 1.0)
        lo, hi = continuity_bounds(0.1, 2, 2.0)
        assert lo == pytest.approx(0.751315, abs=1e-6) and hi == pytest.approx(1.331, abs=1e-12)
        assert continuity_bounds(0.1, 2, 4.0) == pytest.approx((1.1**-4, 1.1**4))
        with pytest.raises(NegativeEps):
            continuity_bounds(-0.1)

    def test_check(self, ico2):
        g = random_metric(ico2, 3, amplitude=0.1)
        cfg = EigenConfig(p=2.5, restarts=2)
        rep = check_continuity(g, 0.1, 2.5, lambda m: solve_first_eigen(m, cfg),
                               rng=np.random.default_rng(0))
        assert rep["pass"]
        assert rep["lo"] <= rep["ratio"] <= rep["hi"]


@pytest.fixture(scope="module")
def sphere_solution():
    g = ConformalMetric(icosphere(2))
    return g, {p: solve_first_eigen(g, EigenConfig(p=p, restarts=2)) for p in (2.0, 3.0)}


class TestRates:
    def test_zero_rate_at_constant_curvature(self, sphere_solution):
        g, sols = sphere_solution
        R = g.scalar_curvature
        # pin the curvature to its mean so the identity is exact
        for p, sol in sols.items():
            rate = conformal_rate(g, sol.f, sol.lam, 0.5 * (R - R.mean()), p)
            assert abs(rate) <= 1e-6 * sol.lam

    def test_flat_torus_rate_vanishes(self, torus16):
        g = ConformalMetric(torus16)
        sol = solve_first_eigen(g, EigenConfig(p=2.5, restarts=1))
        for kind in ("normalized_ricci", "unnormalized_ricci", "yamabe_2d"):
            assert predicted_rate(g, sol, kind, 2.5) == 0.0

    @pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
    def test_normalized_forms_agree(self, ico2, p):
        g = random_metric(ico2, 5, amplitude=0.3)
        sol = solve_first_eigen(g, EigenConfig(p=p, restarts=1))
        R, r = g.scalar_curvature, g.average_scalar_curvature
        a = predicted_rate(g, sol, "normalized_ricci", p)
        b = predicted_rate(g, sol, "general_conformal", p, phi=0.5 * (R - r))
        assert a == pytest.approx(b, rel=1e-10, abs=1e-12)

    def test_lower_bound_equality_at_p2(self, sphere_solution):
        g, sols = sphere_solution
        sol = sols[2.0]
        bound = rate_lower_bound(g, sol, 2.0)
        expected = sol.lam * float(np.dot(sol.f**2 * g.scalar_curvature, g.vertex_measure))
        assert bound == pytest.approx(expected, rel=1e-12)
        assert predicted_rate(g, sol, "unnormalized_ricci", 2.0) == pytest.approx(bound, rel=1e-12)

    def test_lower_bound_below_rate(self, sphere_solution):
        g, sols = sphere_solution
        sol = sols[3.0]
        bound = rate_lower_bound(g, sol, 3.0)
        assert bound > 0
        assert predicted_rate(g, sol, "unnormalized_ricci", 3.0) >= bound

    def test_lower_bound_vanishes_at_pinching_level(self, sphere_solution):
        g, sols = sphere_solution
        sol = sols[3.0]
        R = g.scalar_curvature
        # shrink the metric uniformly so R is constant up to mesh noise
        eps = float(R.mean()) / 3.0
        assert abs(rate_lower_bound(g, sol, 3.0, eps)) <= 0.05 * sol.lam * R.mean()

    def test_pinching_violated(self, g2):
        g = ConformalMetric(g2)
        sol = solve_first_eigen(g, EigenConfig(p=3.0, restarts=1))
        with pytest.raises(PinchingViolated):
            rate_lower_bound(g, sol, 3.0, 0.0)

    def test_unconverged_rejected(self, sphere_solution):
        g, sols = sphere_solution
        from dataclasses import replace
        with pytest.raises(NotConverged):
            predicted_rate(g, replace(sols[2.0], converged=False), "normalized_ricci", 2.0)


def test_curvature_bounds_along_genus2(g2):
    g = random_metric(g2, 11, amplitude=0.3)
    traj = run(g, FlowSpec("normalized_ricci", dt=0.01, t_end=2.0, sample_stride=20))
    rep = check_curvature_bounds(traj, BoundParams.from_metric(g, 2.0))
    assert rep["pass"]
