"""Acceptance suite: the thirteen numerical criteria with their tolerances and time budgets.

Each ``criterion_N`` returns a :class:`CriterionResult`; :func:`verify_suite`
runs the set for a level and prints one line per criterion.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .experiment import smooth_random_field
from .flow import FlowSpec, FlowState, blowup_estimate, run, step
from .geometry import ConformalMetric, integrate, min_gauss_curvature
from .meshes import flat_torus, genus2, icosphere, torus_coordinates
from .monotone import (
    BoundParams,
    QuantitySeries,
    assert_monotone,
    check_comparison,
    check_continuity,
    check_curvature_bounds,
    conformal_rate,
    decreasing_quantity,
    increasing_quantity,
    predicted_rate,
    unnormalized_quantity,
)
from .peigen import EigenConfig, linear_first_eigen, recenter_weights, solve_first_eigen

__all__ = ["CriterionResult", "CRITERIA", "FAST", "FULL", "verify_suite"]


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: str
    budget: float
    seconds: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return (f"[{flag}] criterion {self.number:2d}: {self.title}: {self.measured} "
                f"({self.seconds:.1f}s / budget {self.budget:.0f}s)")

    def to_dict(self):
        return {
            "criterion": self.number,
            "title": self.title,
            "pass": self.passed,
            "measured": self.measured,
            "seconds": self.seconds,
            "budget": self.budget,
            "details": self.details,
        }


def _timed(number, title, budget):
    def deco(fn):
        def wrapper():
            t0 = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ok, measured, details = fn()
            dt = time.perf_counter() - t0
            within = dt < budget
            if not within:
                measured += f"; over time budget"
            return CriterionResult(number, title, bool(ok and within), measured, budget, dt, details)

        wrapper.number = number
        wrapper.title = title
        wrapper.__name__ = fn.__name__
        wrapper.__doc__ = fn.__doc__
        return wrapper

    return deco


def _perturbed(mesh, amplitude, seed):
    return ConformalMetric(mesh, smooth_random_field(mesh, amplitude, seed))


# --------------------------------------------------------------------------


@_timed(1, "homothety scaling lambda(c g) = c^(-p/2) lambda(g)", 30)
def criterion_1():
    meshes = {"icosphere-3": icosphere(3), "torus-24": flat_torus(24, 24), "genus2": genus2()}
    worst = 0.0
    rows = []
    for name, mesh in meshes.items():
        g = _perturbed(mesh, 0.1, 7)
        for p in (1.5, 2.0, 3.0):
            cfg = EigenConfig(p=p, restarts=2, rng_seed=11)
            lam = solve_first_eigen(g, cfg).lam
            for c in (0.25, 4.0):
                lam_c = solve_first_eigen(g.shifted(0.5 * math.log(c)), cfg).lam
                err = abs(lam_c / (c ** (-p / 2) * lam) - 1)
                worst = max(worst, err)
                rows.append({"mesh": name, "p": p, "c": c, "rel_error": err})
    return worst <= 1e-6, f"max rel error {worst:.2e} (tol 1e-6)", {"cases": rows}


@_timed(2, "p=2 nonlinear solver matches the linear oracle", 30)
def criterion_2():
    meshes = {"icosphere-3": icosphere(3), "torus-32": flat_torus(32, 32), "genus2": genus2()}
    worst, rows = 0.0, []
    for name, mesh in meshes.items():
        g = ConformalMetric(mesh)
        lam_lin, _ = linear_first_eigen(g)
        lam = solve_first_eigen(g, EigenConfig(p=2.0, restarts=2)).lam
        err = abs(lam / lam_lin - 1)
        worst = max(worst, err)
        rows.append({"mesh": name, "nonlinear": lam, "linear": lam_lin, "rel_error": err})
    return worst <= 1e-6, f"max rel error {worst:.2e} (tol 1e-6)", {"cases": rows}


@_timed(3, "analytic spectra of the round sphere and flat torus", 60)
def criterion_3():
    lam_s = solve_first_eigen(ConformalMetric(icosphere(4)), EigenConfig(p=2.0, restarts=1)).lam
    lam_t = solve_first_eigen(ConformalMetric(flat_torus(64, 64)), EigenConfig(p=2.0, restarts=1)).lam
    ok = 1.96 <= lam_s <= 2.04 and 0.98 <= lam_t <= 1.02
    return ok, f"sphere {lam_s:.6f} in [1.96, 2.04], torus {lam_t:.6f} in [0.98, 1.02]", \
        {"sphere": lam_s, "torus": lam_t}


@_timed(4, "discrete Gauss-Bonnet on random metrics", 10)
def criterion_4():
    rng = np.random.default_rng(4)
    meshes = [icosphere(2), flat_torus(12, 12), genus2(), flat_torus(5, 7, 2.0, 3.0)]
    worst = 0.0
    for k in range(100):
        mesh = meshes[k % len(meshes)]
        u = rng.uniform(-1, 1) * rng.standard_normal(mesh.vertex_count)
        g = ConformalMetric(mesh, u)
        target = 4 * math.pi * mesh.euler_characteristic
        worst = max(worst, abs(integrate(g, g.scalar_curvature) - target) / (1 + abs(target)))
    return worst <= 1e-10, f"max scaled error {worst:.2e} (tol 1e-10)", {}


@_timed(5, "constant curvature is a fixed point of the normalized flow", 10)
def criterion_5():
    g = ConformalMetric(icosphere(3))
    spec = FlowSpec("normalized_ricci", dt=0.01, t_end=1.0)
    state = FlowState.initial(g)
    area_err = 0.0
    for _ in range(100):
        state = step(state, spec)
        area_err = max(area_err, abs(state.area - state.area0) / state.area0)
    du = float(np.max(np.abs(state.u - g.u)))
    ok = du <= 1e-6 and area_err <= 1e-14
    return ok, f"max|u(t)-u(0)| {du:.2e} (tol 1e-6), area error after projection {area_err:.1e}", {}


@_timed(6, "unnormalized flow on the sphere follows R0/(1 - R0 t)", 10)
def criterion_6():
    g = ConformalMetric(icosphere(3))
    R0 = float(g.scalar_curvature.mean())
    T = blowup_estimate(g, "unnormalized_ricci", 2.0)
    traj = run(g, FlowSpec("unnormalized_ricci", dt=0.005, t_end=T, blowup_safety=0.8))
    worst = 0.0
    for s in traj.samples:
        exact = R0 / (1 - R0 * s.t)
        worst = max(worst, float(np.max(np.abs(s.R / exact - 1))))
    return worst <= 1e-3, f"max rel deviation {worst:.2e} up to t={traj.t_stop:.4f} (tol 1e-3)", {}


@_timed(7, "eigenvalue rate formula vs finite differences", 180)
def criterion_7():
    mesh = flat_torus(16, 16)
    x, y = torus_coordinates(16, 16)
    g = ConformalMetric(mesh, 0.2 * np.sin(x) * np.cos(y) + 0.1 * np.cos(2 * y))
    worst_fd, worst_forms, rows = 0.0, 0.0, []
    for p in (2.0, 3.0):
        traj = run(g, FlowSpec("normalized_ricci", dt=0.005, t_end=0.5, sample_stride=2),
                   EigenConfig(p=p, restarts=4))
        t, lam = traj.times, traj.lambdas
        for i in range(1, len(t) - 1):
            s, e = traj.samples[i], traj.eigen[i]
            rate = predicted_rate(s.metric, e, "normalized_ricci", p)
            other = conformal_rate(s.metric, e.f, e.lam, 0.5 * (s.R - s.r), p)
            fd = (lam[i + 1] - lam[i - 1]) / (t[i + 1] - t[i - 1])
            worst_fd = max(worst_fd, abs(rate - fd) / abs(fd))
            worst_forms = max(worst_forms, abs(rate - other) / abs(rate))
            rows.append({"p": p, "t": float(t[i]), "rate": rate, "fd": fd})
    ok = worst_fd <= 0.05 and worst_forms <= 1e-10
    return ok, f"max rel |rate - FD| {worst_fd:.2e} (tol 5e-2), forms agree to {worst_forms:.1e}", \
        {"samples": rows}


def _monotone_run(metric, p, t_end, dt, stride, restarts=4, tol=1e-6):
    traj = run(metric, FlowSpec("normalized_ricci", dt=dt, t_end=t_end, sample_stride=stride),
               EigenConfig(p=p, restarts=restarts))
    params = BoundParams.from_metric(metric, p)
    t, lam = traj.times, traj.lambdas
    inc = assert_monotone(QuantitySeries("increasing", "increasing", t, lam,
                                         increasing_quantity(lam, t, params), tol))
    dec = assert_monotone(QuantitySeries("decreasing", "decreasing", t, lam,
                                         decreasing_quantity(lam, t, params), tol))
    bounds = check_curvature_bounds(traj, params)
    return traj, params, inc, dec, bounds


@_timed(8, "increasing and decreasing quantities along the normalized flow", 600)
def criterion_8():
    cases = {
        "genus2": (_perturbed(genus2(), 0.3, 1), 5.0, 0.01, 10),
        "torus": (_perturbed(flat_torus(16, 16), 0.3, 2), 3.0, 0.01, 10),
        "icosphere": (_perturbed(icosphere(3), 0.3, 3), 2.0, 0.01, 10),
    }
    rows, ok = [], True
    for name, (g, t_end, dt, stride) in cases.items():
        for p in (1.5, 2.5):
            traj, params, inc, dec, bounds = _monotone_run(g, p, t_end, dt, stride)
            good = inc.passed and dec.passed and bounds["pass"]
            ok = ok and good
            rows.append({"surface": name, "p": p, "increasing": inc.to_dict(),
                         "decreasing": dec.to_dict(), "bounds": bounds["pass"],
                         "converged": all(e.converged for e in traj.eigen)})
    bad = [f"{r['surface']}/p={r['p']}" for r in rows
           if not (r["increasing"]["pass"] and r["decreasing"]["pass"] and r["bounds"])]
    msg = f"{len(rows) - len(bad)}/{len(rows)} runs pass" + (f" (failing: {', '.join(bad)})" if bad else "")
    return ok, msg, {"runs": rows}


@_timed(9, "eigenvalue comparison with the constant-curvature limit", 600)
def criterion_9():
    g = _perturbed(genus2(), 0.3, 1)
    rows, ok = [], True
    traj = run(g, FlowSpec("normalized_ricci", dt=0.01, t_end=6.0, sample_stride=600))
    final = traj.samples[-1]
    r = final.r
    spread = float(np.max(np.abs(final.R - r)))
    converged_flow = spread < 0.01 * abs(r)
    kappa_bar = min_gauss_curvature(final.metric)
    kappa_gb = 2 * math.pi * g.mesh.euler_characteristic / g.area
    kappa_ok = abs(kappa_bar / kappa_gb - 1) <= 0.01
    kappa_g = min_gauss_curvature(g)
    for p in (2.0, 3.0):
        cfg = EigenConfig(p=p, restarts=8)
        lam_g = solve_first_eigen(g, cfg).lam
        lam_bar = solve_first_eigen(final.metric, cfg).lam
        rep = check_comparison(lam_g, lam_bar, kappa_g, kappa_bar, p)
        ok = ok and rep["pass"]
        rows.append(rep)
    ok = ok and converged_flow and kappa_ok
    msg = (f"|R-r| {spread:.1e} < {0.01 * abs(r):.1e}; ratios "
           + ", ".join(f"p={c['p']:g}: {c['ratio']:.4f} >= {c['threshold']:.4f}" for c in rows)
           + f"; kappa_bar {kappa_bar:.5f} vs {kappa_gb:.5f}")
    return ok, msg, {"cases": rows, "kappa_bar": kappa_bar, "kappa_gauss_bonnet": kappa_gb}


@_timed(10, "continuity sandwich under conformal perturbation", 120)
def criterion_10():
    rng = np.random.default_rng(10)
    meshes = [genus2(), icosphere(2)]
    rows, ok = [], True
    for p in (1.5, 2.0, 3.0):
        cfg = EigenConfig(p=p, restarts=4)

        def solver(m):
            return solve_first_eigen(m, cfg)

        for k in range(10):
            mesh = meshes[k % 2]
            g = ConformalMetric(mesh, smooth_random_field(mesh, 0.2, int(rng.integers(1 << 30))))
            rep = check_continuity(g, 0.1, p, solver, rng=rng)
            ok = ok and rep["pass"]
            rows.append(rep)
    inside = sum(r["pass"] for r in rows)
    spread = (min(r["ratio"] for r in rows), max(r["ratio"] for r in rows))
    return ok, f"{inside}/{len(rows)} ratios inside bounds (range {spread[0]:.3f}..{spread[1]:.3f})", \
        {"cases": rows}


@_timed(11, "Yamabe quantities on the round sphere", 180)
def criterion_11():
    g = ConformalMetric(icosphere(3))
    rows, ok = [], True
    for p in (1.5, 3.0):
        T = blowup_estimate(g, "yamabe_2d", p)
        traj = run(g, FlowSpec("yamabe_2d", dt=0.01, t_end=T, blowup_safety=0.8, sample_stride=4),
                   EigenConfig(p=p, restarts=4))
        params = BoundParams.from_metric(g, p)
        t, lam = traj.times, traj.lambdas
        for which in ("yamabe_increasing", "yamabe_decreasing"):
            direction = which.split("_")[1]
            q = unnormalized_quantity(lam, t, params, which)
            rep = assert_monotone(QuantitySeries(which, direction, t, lam, q, 1e-6))
            ok = ok and rep.passed
            rows.append({"p": p, **rep.to_dict()})
        strictly = bool(np.all(np.diff(lam) > 0))
        ok = ok and strictly
        rows.append({"p": p, "lambda_strictly_increasing": strictly, "t_stop": traj.t_stop})
    n_pass = sum(1 for r in rows if r.get("pass", r.get("lambda_strictly_increasing")))
    return ok, f"{n_pass}/{len(rows)} checks pass up to 0.8 x blow-up", {"checks": rows}


@_timed(12, "recentering root and uniqueness", 10)
def criterion_12():
    rng = np.random.default_rng(12)
    worst_res, unique = 0.0, True
    for _ in range(1000):
        n = int(rng.integers(2, 200))
        f = rng.standard_normal(n) * rng.uniform(0.1, 10)
        w = rng.uniform(0.01, 1.0, n)
        p = float(rng.uniform(1.05, 6.0))
        s0 = recenter_weights(f, w, p)
        g = f + s0
        scale = float(np.dot(np.abs(g) ** (p - 1), w))
        res = abs(float(np.dot(np.sign(g) * np.abs(g) ** (p - 1), w))) / scale
        worst_res = max(worst_res, res)
        delta = 1e-9 * np.ptp(f)
        below = float(np.dot(np.sign(g - delta) * np.abs(g - delta) ** (p - 1), w))
        above = float(np.dot(np.sign(g + delta) * np.abs(g + delta) ** (p - 1), w))
        unique = unique and below <= 0 <= above
    ok = worst_res <= 1e-10 and unique
    return ok, f"max scaled |F'(s0)| {worst_res:.1e} (tol 1e-10), sign change confirmed: {unique}", {}


@_timed(13, "curvature bound sandwiches along the genus-2 flow", 120)
def criterion_13():
    g = _perturbed(genus2(), 0.3, 1)
    traj = run(g, FlowSpec("normalized_ricci", dt=0.01, t_end=5.0, sample_stride=5))
    params = BoundParams.from_metric(g, 2.0)
    rep = check_curvature_bounds(traj, params)
    worst_sharp = min(s["R_min"] - s["sharp_lower"] for s in rep["samples"])
    worst_lo = min(s["R_min"] - s["lo"] for s in rep["samples"])
    worst_hi = min(s["hi"] - s["R_max"] for s in rep["samples"])
    msg = (f"min margins: sharp {worst_sharp:.3e}, lower {worst_lo:.3e}, upper {worst_hi:.3e} "
           f"(slack {rep['slack']:.3e})")
    return rep["pass"], msg, {"samples": rep["samples"]}


CRITERIA = {fn.number: fn for fn in (
    criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
    criterion_8, criterion_9, criterion_10, criterion_11, criterion_12, criterion_13,
)}
FAST = (1, 2, 3, 4, 5, 6, 7, 12)
FULL = tuple(range(1, 14))


def verify_suite(level="fast", echo=print, only=None):
    """Run the criteria for ``level`` (``fast`` or ``full``) and return the results.

    ``echo`` receives one line per criterion as it finishes.
    """
    if level not in ("fast", "full"):
        raise ValueError("level must be 'fast' or 'full'")
    numbers = only or (FAST if level == "fast" else FULL)
    results = []
    for n in numbers:
        res = CRITERIA[n]()
        results.append(res)
        if echo:
            echo(res.line)
    return results
