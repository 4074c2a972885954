"""Monotone eigenvalue quantities, eigenvalue rate formulas and their checkers.

Quantities along the normalized Ricci flow are keyed on the sign of the Euler
characteristic and on the regime ``p >= 2`` versus ``1 < p < 2``.  Branches
written with ``ln lam`` are returned in that logarithmic form.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (
    BadParams,
    BranchMismatch,
    NegativeEps,
    NotConverged,
    PastBlowup,
    PinchingViolated,
    ShapeMismatch,
    WrongSign,
)
from .flow import chow_knopf_bounds, sharp_lower_bound
from .geometry import check_p, face_energy_density

__all__ = [
    "BoundParams",
    "QuantitySeries",
    "MonotoneReport",
    "estimate_C",
    "increasing_quantity",
    "decreasing_quantity",
    "unnormalized_quantity",
    "UNNORMALIZED_QUANTITIES",
    "predicted_rate",
    "conformal_rate",
    "rate_lower_bound",
    "assert_monotone",
    "check_comparison",
    "continuity_bounds",
    "check_continuity",
    "check_curvature_bounds",
]


@dataclass(frozen=True)
class BoundParams:
    """Initial-curvature data entering the closed-form quantities.

    ``rho0``/``sigma0`` are the min/max of ``R(0)``, ``r`` its average, ``C``
    the exponential-sandwich constant and ``a = max(1/n, n/p^2)``.
    """

    rho0: float
    sigma0: float
    C: float
    r: float
    a: float
    n: int
    p: float
    chi: int

    def __post_init__(self):
        check_p(self.p)
        if self.C < 0:
            raise BadParams("C must be non-negative")
        span = 1e-12 * max(1.0, abs(self.rho0), abs(self.sigma0))
        if not (self.rho0 - span <= self.r <= self.sigma0 + span):
            raise BadParams("need rho0 <= r <= sigma0")
        if self.a < 1.0 / self.n - 1e-15:
            raise BadParams("a must be at least 1/n")

    @classmethod
    def from_metric(cls, metric, p, n=2, C=None):
        R = metric.scalar_curvature
        r = metric.average_scalar_curvature
        return cls(
            rho0=float(R.min()),
            sigma0=float(R.max()),
            C=estimate_C(R, r) if C is None else float(C),
            r=float(r),
            a=max(1.0 / n, n / p**2),
            n=int(n),
            p=float(p),
            chi=int(metric.mesh.euler_characteristic),
        )

    def to_dict(self):
        return asdict(self)


def estimate_C(R0, r):
    """Smallest ``C`` for which the exponential curvature sandwich holds at ``t = 0``."""
    R0 = np.asarray(R0, dtype=np.float64)
    if R0.ndim != 1 or R0.size == 0:
        raise ShapeMismatch("R0 must be a non-empty per-vertex field")
    if r < 0:
        return float(np.max(np.abs(R0 - r)))
    if r == 0:
        return max(float(np.max(np.abs(R0))), 1e-12)
    return max(-float(R0.min()), float(R0.max()) - r, 1e-12)


def _branch_sign(params):
    s = int(np.sign(params.chi))
    if s < 0 and not params.r < 0:
        raise BranchMismatch("negative Euler characteristic needs r < 0")
    if s > 0 and not params.r > 0:
        raise BranchMismatch("positive Euler characteristic needs r > 0")
    return s


def _check_lam(lam):
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam <= 0):
        raise BadParams("eigenvalue must be positive")
    return lam


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def increasing_quantity(lam, t, params):
    """Quantity nondecreasing in ``t`` along the normalized Ricci flow."""
    lam = _check_lam(lam)
    t = np.asarray(t, dtype=np.float64)
    p, C, r, rho0 = params.p, params.C, params.r, params.rho0
    s = _branch_sign(params)
    if s < 0:
        ert = np.exp(r * t)
        bracket = rho0 / r - (rho0 / r) * ert + ert
        if p >= 2:
            q = lam * bracket ** (p / 2)
        else:
            q = lam * bracket * np.exp((1 - p / 2) * (C / r) * ert)
    elif s == 0:
        if p >= 2:
            q = lam * (1 + C * t) ** (p / 2)
        else:
            q = lam * (1 + C * t) * np.exp((1 - p / 2) * C * t)
    else:
        ert = np.exp(r * t)
        if p >= 2:
            q = np.log(lam) + (p / 2) * ((C / r) * ert + r * t)
        else:
            q = np.log(lam) + (2 - p / 2) * (C / r) * ert + r * t
    return _out(q)


def decreasing_quantity(lam, t, params):
    """Quantity nonincreasing in ``t`` along the normalized Ricci flow."""
    lam = _check_lam(lam)
    t = np.asarray(t, dtype=np.float64)
    p, C, r, rho0 = params.p, params.C, params.r, params.rho0
    s = _branch_sign(params)
    if s < 0:
        ert = np.exp(r * t)
        if p >= 2:
            q = np.log(lam) - (p / 2) * (C / r) * ert
        else:
            bracket = rho0 / r - (rho0 / r) * ert + ert
            q = lam * bracket ** (p / 2 - 1) * np.exp(-(C / r) * ert)
    elif s == 0:
        if p >= 2:
            q = np.log(lam) - (p / 2) * C * t
        else:
            q = lam * (1 + C * t) ** (p / 2 - 1) * np.exp(-C * t)
    else:
        ert = np.exp(r * t)
        if p >= 2:
            q = np.log(lam) - (p / 2) * (C / r) * ert
        else:
            q = np.log(lam) - (2 - p / 2) * (C / r) * ert - (1 - p / 2) * r * t
    return _out(q)


UNNORMALIZED_QUANTITIES = {
    "ricci_increasing": "increasing",
    "ricci_decreasing": "decreasing",
    "yamabe_increasing": "increasing",
    "yamabe_decreasing": "decreasing",
}


def _positive_factor(x, what):
    if np.any(x <= 0):
        raise PastBlowup(f"{what} is not positive: t is past the blow-up time")
    return x


def unnormalized_quantity(lam, t, params, which):
    """Quantities along the unnormalized Ricci and Yamabe flows.

    ``which`` is one of

    * ``ricci_increasing``: ``lam (1/rho0 - 2 a t)^(1/(2a))`` (needs ``rho0 > 0``)
    * ``ricci_decreasing``: ``lam (1/sigma0 - (2n/p^2) t)^(p^2/(2n))``
    * ``yamabe_increasing``: ``lam (1-rho0 t)^(n/2) (1-sigma0 t)^((p-n)/2)`` for
      ``p < n``, ``lam (1-rho0 t)^(p/2)`` otherwise
    * ``yamabe_decreasing``: ``lam (1-rho0 t)^((p-n)/2) (1-sigma0 t)^(n/2)`` for
      ``p < n``, ``lam (1-sigma0 t)^(p/2)`` otherwise
    """
    lam = _check_lam(lam)
    t = np.asarray(t, dtype=np.float64)
    p, n, a, rho0, sigma0 = params.p, params.n, params.a, params.rho0, params.sigma0
    if which == "ricci_increasing":
        if not rho0 > 0:
            raise BranchMismatch("needs rho0 > 0")
        q = lam * _positive_factor(1 / rho0 - 2 * a * t, "1/rho0 - 2at") ** (1 / (2 * a))
    elif which == "ricci_decreasing":
        if not sigma0 > 0:
            raise BranchMismatch("needs sigma0 > 0")
        k = 2 * n / p**2
        q = lam * _positive_factor(1 / sigma0 - k * t, "1/sigma0 - (2n/p^2)t") ** (1 / k)
    elif which in ("yamabe_increasing", "yamabe_decreasing"):
        if not rho0 > 0:
            raise BranchMismatch("needs positive initial curvature")
        lo = _positive_factor(1 - rho0 * t, "1 - rho0 t")
        hi = _positive_factor(1 - sigma0 * t, "1 - sigma0 t")
        if which == "yamabe_increasing":
            q = lam * (lo ** (n / 2) * hi ** ((p - n) / 2) if p < n else lo ** (p / 2))
        else:
            q = lam * (lo ** ((p - n) / 2) * hi ** (n / 2) if p < n else hi ** (p / 2))
    else:
        raise BadParams(f"unknown quantity {which!r}; expected one of {sorted(UNNORMALIZED_QUANTITIES)}")
    return _out(q)


# --------------------------------------------------------------------------
# rate formulas


def _face_mean(mesh, x):
    return x[mesh.faces].mean(axis=1)


def _integrals(metric, f, p, field):
    """``(int |f|^p field dmu, int |df|^p field dmu)`` at vertex / face quadrature."""
    mesh = metric.mesh
    vert = float(np.dot(np.abs(f) ** p * field, metric.vertex_measure))
    face = float(np.dot(face_energy_density(metric, f, p), _face_mean(mesh, field)))
    return vert, face


def _solution_parts(metric, sol, p):
    if not sol.converged:
        raise NotConverged("rate formulas need a converged eigensolution")
    return np.asarray(sol.f, dtype=np.float64), float(sol.lam), check_p(p)


def conformal_rate(metric, f, lam, phi, p):
    """``d lam/dt`` under ``du/dt = -phi``: ``2 lam int|f|^p phi + (p-2) int|df|^p phi``."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (metric.mesh.vertex_count,):
        raise ShapeMismatch("phi must be a per-vertex field")
    vert, face = _integrals(metric, f, p, phi)
    return 2 * lam * vert + (p - 2) * face


def predicted_rate(metric, sol, flow_kind, p, phi=None, cross_check=True):
    """Instantaneous ``d lam/dt`` of the first p-eigenvalue along a conformal flow.

    For ``normalized_ricci`` the surface formula
    ``lam int|f|^p R + (p/2 - 1) int|df|^p R - (p/2) r lam`` is used and, with
    ``cross_check``, compared with the general conformal formula at
    ``phi = (R - r)/2`` (they agree to rounding).  ``unnormalized_ricci`` and
    ``yamabe_2d`` use ``phi = R/2``; ``general_conformal`` needs ``phi``.
    """
    f, lam, p = _solution_parts(metric, sol, p)
    R = metric.scalar_curvature
    r = metric.average_scalar_curvature
    if flow_kind == "normalized_ricci":
        vert, face = _integrals(metric, f, p, R)
        rate = lam * vert + (p / 2 - 1) * face - (p / 2) * r * lam
        if cross_check:
            other = conformal_rate(metric, f, lam, 0.5 * (R - r), p)
            scale = abs(lam) * (abs(r) + float(np.max(np.abs(R)))) + abs(rate)
            if abs(other - rate) > 1e-10 * scale:
                raise AssertionError(f"rate forms disagree: {rate!r} vs {other!r}")
        return float(rate)
    if flow_kind in ("unnormalized_ricci", "yamabe_2d"):
        return float(conformal_rate(metric, f, lam, 0.5 * R, p))
    if flow_kind == "general_conformal":
        if phi is None:
            raise BadParams("general_conformal rate needs phi")
        return float(conformal_rate(metric, f, lam, phi, p))
    raise BadParams(f"unknown flow kind {flow_kind!r}")


def rate_lower_bound(metric, sol, p, eps_pinch=0.0):
    """``lam int |f|^p (R - p eps) dmu``, a lower bound for the unnormalized rate.

    Valid when ``(1/2 - 1/p) R >= -eps_pinch`` at every vertex.
    """
    f, lam, p = _solution_parts(metric, sol, p)
    if eps_pinch < 0:
        raise NegativeEps("eps_pinch must be non-negative")
    R = metric.scalar_curvature
    pinch = (0.5 - 1.0 / p) * R
    if np.any(pinch < -eps_pinch):
        raise PinchingViolated(
            f"(1/2 - 1/p) R >= -eps fails: min {float(pinch.min()):.6g} < {-eps_pinch:.6g}"
        )
    vert, _ = _integrals(metric, f, p, R - p * eps_pinch)
    return float(lam * vert)


# --------------------------------------------------------------------------
# checkers


@dataclass
class QuantitySeries:
    name: str
    direction: str
    t: np.ndarray
    lam: np.ndarray
    q: np.ndarray
    tol: float = 1e-6

    def __post_init__(self):
        if self.direction not in ("increasing", "decreasing"):
            raise BadParams("direction must be 'increasing' or 'decreasing'")
        self.t = np.asarray(self.t, dtype=np.float64)
        self.lam = np.asarray(self.lam, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        if not (self.t.shape == self.lam.shape == self.q.shape):
            raise ShapeMismatch("t, lam and q must have equal lengths")
        if np.any(np.diff(self.t) <= 0):
            raise BadParams("sample times must be strictly increasing")
        if not np.all(np.isfinite(self.q)):
            raise BadParams("quantity values must be finite")


@dataclass
class MonotoneReport:
    name: str
    direction: str
    passed: bool
    worst_violation: float
    t_at_worst: float
    index: int
    tol: float
    status: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.status:
            self.status = "pass" if self.passed else "fail"

    def to_dict(self):
        d = {
            "name": self.name,
            "direction": self.direction,
            "pass": self.passed,
            "status": self.status,
            "worst_violation": self.worst_violation,
            "t_at_worst": self.t_at_worst,
            "index": self.index,
            "tol": self.tol,
        }
        d.update(self.extra)
        return d

    def to_json(self):
        return json.dumps(self.to_dict())


def assert_monotone(series, tol=None):
    """Check consecutive samples: ``sign * (q[i+1] - q[i]) >= -tol * max(1, |q[i]|)``.

    Returns a report (never raises on failure).  ``worst_violation`` is the
    largest raw backward step (0 when there is none) and ``index`` the sample
    where it lands.
    """
    tol = series.tol if tol is None else float(tol)
    q = series.q
    if q.size < 2:
        raise BadParams("need at least two samples")
    sign = 1.0 if series.direction == "increasing" else -1.0
    step = sign * np.diff(q)
    slack = tol * np.maximum(1.0, np.abs(q[:-1]))
    passed = bool(np.all(step >= -slack))
    k = int(np.argmin(step))
    worst = max(0.0, float(-step[k]))
    if not passed:
        k = int(np.argmin(step + slack))
        worst = float(-step[k])
    return MonotoneReport(
        name=series.name,
        direction=series.direction,
        passed=passed,
        worst_violation=worst,
        t_at_worst=float(series.t[k + 1]),
        index=k + 1,
        tol=tol,
    )


def check_comparison(lambda_g, lambda_bar, kappa_g, kappa_bar, p, C=None, slack=2e-2):
    """Eigenvalue ratio against the constant-curvature limit on a surface with ``chi < 0``.

    For ``p >= 2`` the lower threshold is ``(kappa_bar/kappa_g)^(p/2)``; for
    ``1 < p < 2`` it is ``exp[(1 - p/2) C/r] kappa_bar/kappa_g`` with
    ``r = 2 kappa_bar``.  When ``C`` is given the upper estimates
    ``exp(-(p/2) C/r)`` (``p >= 2``) or ``e^{-C/r} (kappa_bar/kappa_g)^(p/2-1)``
    (``1 < p < 2``) are reported and checked as well.
    """
    p = check_p(p)
    if not (kappa_g < 0 and kappa_bar < 0):
        raise WrongSign("comparison needs negative curvature minima")
    ratio = lambda_bar / lambda_g
    k = kappa_bar / kappa_g
    r = 2 * kappa_bar
    if p >= 2:
        threshold = k ** (p / 2)
    else:
        if C is None:
            raise BadParams("1 < p < 2 needs the constant C")
        threshold = math.exp((1 - p / 2) * C / r) * k
    upper = None
    if C is not None:
        upper = math.exp(-(p / 2) * C / r) if p >= 2 else math.exp(-C / r) * k ** (p / 2 - 1)
    passed = ratio >= threshold * (1 - slack)
    if upper is not None:
        passed = passed and ratio <= upper * (1 + slack)
    return {
        "ratio": ratio,
        "threshold": threshold,
        "upper": upper,
        "margin": ratio - threshold,
        "slack": slack,
        "p": p,
        "pass": bool(passed),
    }


def continuity_bounds(eps, n=2, p=2.0):
    """``((1+eps)^-(n+p/2), (1+eps)^(n+p/2))``."""
    if eps < 0:
        raise NegativeEps("eps must be non-negative")
    e = n + p / 2
    return (1 + eps) ** (-e), (1 + eps) ** e


def check_continuity(metric, eps, p, solver, rng=None, w=None, slack=1e-3):
    """Compare eigenvalues of ``metric`` and a perturbation with ``|w| <= ln(1+eps)/2``.

    ``solver(metric) -> EigenSolution``.  ``w`` defaults to a uniform random
    field at the largest admissible amplitude.
    """
    lo, hi = continuity_bounds(eps, 2, p)
    amp = 0.5 * math.log1p(eps)
    if w is None:
        rng = np.random.default_rng(rng)
        w = rng.uniform(-amp, amp, metric.mesh.vertex_count)
    w = np.asarray(w, dtype=np.float64)
    if np.max(np.abs(w)) > amp * (1 + 1e-12):
        raise BadParams("perturbation exceeds ln(1+eps)/2")
    s1 = solver(metric)
    s2 = solver(metric.with_u(metric.u + w))
    ratio = s1.lam / s2.lam
    return {
        "eps": eps,
        "p": p,
        "ratio": ratio,
        "lo": lo,
        "hi": hi,
        "lambda_1": s1.lam,
        "lambda_2": s2.lam,
        "pass": bool(lo * (1 - slack) <= ratio <= hi * (1 + slack)),
    }


def check_curvature_bounds(trajectory, params, slack=None):
    """Check the exponential sandwich and (for ``r < 0``) the sharp lower bound per sample.

    ``slack`` defaults to ``1e-2 |r|``.  Returns a dict with per-sample margins
    and an overall ``pass``.
    """
    r, C, rho0 = params.r, params.C, params.rho0
    if params.chi == 0:
        r = 0.0
    slack = 1e-2 * abs(r) if slack is None else float(slack)
    rows = []
    ok = True
    for s in trajectory.samples:
        lo, hi = chow_knopf_bounds(s.t, r, C)
        row = {"t": s.t, "R_min": s.R_min, "R_max": s.R_max, "lo": lo, "hi": hi,
               "sandwich": bool(s.R_min >= lo - slack and s.R_max <= hi + slack)}
        if r < 0 and rho0 < 0:
            sharp = sharp_lower_bound(s.t, r, rho0)
            row["sharp_lower"] = sharp
            row["sharp"] = bool(s.R_min >= sharp - slack)
        ok = ok and row["sandwich"] and row.get("sharp", True)
        rows.append(row)
    return {"pass": bool(ok), "slack": slack, "samples": rows}
