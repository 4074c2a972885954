"""Conformal curvature flows on surfaces and the closed-form curvature bounds.

On a surface every flow considered here is a scalar PDE for the conformal
exponent ``u`` (``g = e^{2u} g0``):

========================  ====================
kind                      ``du/dt``
========================  ====================
``normalized_ricci``      ``(r - R) / 2``
``unnormalized_ricci``    ``-R / 2``
``yamabe_2d``             ``-R / 2``
``general_conformal``     ``-phi``
========================  ====================

``u`` is integrated with classical RK4.  Substeps are halved until both
``max|du/dt| h <= 0.1`` and ``h`` sits inside the RK4 stability interval of the
linearized curvature operator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import (
    BadParams,
    BlowupDetected,
    BranchMismatch,
    DenominatorVanishes,
    MissingLambda,
    NegativeC,
    PastBlowup,
    StepUnderflow,
)
from .geometry import ConformalMetric, gauss_bonnet_average
from .peigen import best_candidate, solve_candidates, transport_test_function

__all__ = [
    "FLOW_KINDS",
    "FlowSpec",
    "FlowState",
    "Trajectory",
    "flow_rhs",
    "step",
    "run",
    "blowup_estimate",
    "normalize_map",
    "power_bound",
    "sharp_lower_bound",
    "chow_knopf_bounds",
]

FLOW_KINDS = ("normalized_ricci", "unnormalized_ricci", "yamabe_2d", "general_conformal")
NORMALIZED_KINDS = ("normalized_ricci",)
BLOWUP_CURVATURE = 1e6
MIN_SUBSTEP = 1e-12
# real-axis RK4 stability limit is ~2.785; keep a margin
RK4_STABILITY = 2.5


@dataclass(frozen=True)
class FlowSpec:
    kind: str
    dt: float
    t_end: float
    blowup_safety: float = 0.8
    sample_stride: int = 1
    area_projection: bool = True
    phi: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in FLOW_KINDS:
            raise BadParams(f"unknown flow kind {self.kind!r}; expected one of {FLOW_KINDS}")
        if not self.dt > 0 or not self.t_end > 0:
            raise BadParams("dt and t_end must be positive")
        if not 0 < self.blowup_safety < 1:
            raise BadParams("blowup_safety must lie in (0, 1)")
        if int(self.sample_stride) != self.sample_stride or self.sample_stride < 1:
            raise BadParams("sample_stride must be a positive integer")
        if self.kind == "general_conformal" and self.phi is None:
            raise BadParams("general_conformal flow needs a phi supplier")

    @property
    def normalized(self):
        return self.kind in NORMALIZED_KINDS

    def to_dict(self):
        return {
            "kind": self.kind,
            "dt": self.dt,
            "t_end": self.t_end,
            "blowup_safety": self.blowup_safety,
            "sample_stride": self.sample_stride,
            "area_projection": self.area_projection,
        }


@dataclass(frozen=True)
class FlowState:
    """Time, metric and cached curvature; ``int_r`` is the running integral of ``r``."""

    t: float
    metric: ConformalMetric
    R: np.ndarray
    r: float
    int_r: float = 0.0
    area0: float = 0.0
    drift: float = 0.0

    @classmethod
    def initial(cls, metric, t=0.0):
        return cls.at(metric, t, int_r=0.0, area0=metric.area)

    @classmethod
    def at(cls, metric, t, int_r=0.0, area0=None, drift=0.0):
        return cls(
            t=float(t),
            metric=metric,
            R=metric.scalar_curvature,
            r=metric.average_scalar_curvature,
            int_r=float(int_r),
            area0=metric.area if area0 is None else float(area0),
            drift=float(drift),
        )

    @property
    def u(self):
        return self.metric.u

    @property
    def area(self):
        return self.metric.area

    @property
    def R_min(self):
        return float(self.R.min())

    @property
    def R_max(self):
        return float(self.R.max())

    @property
    def r_gauss_bonnet(self):
        return gauss_bonnet_average(self.metric)


@dataclass
class Trajectory:
    spec: FlowSpec
    samples: list
    eigen: list
    steps: int = 0
    t_stop: float = 0.0
    stopped_early: bool = False
    max_drift: float = 0.0

    @property
    def mesh(self):
        return self.samples[0].metric.mesh

    @property
    def times(self):
        return np.array([s.t for s in self.samples])

    @property
    def lambdas(self):
        return np.array([np.nan if e is None else e.lam for e in self.eigen])

    def __len__(self):
        return len(self.samples)


def flow_rhs(spec, metric, t=0.0):
    """``(du/dt, R, r)`` for ``metric`` under ``spec.kind``."""
    R = metric.scalar_curvature
    r = metric.average_scalar_curvature
    if spec.kind == "normalized_ricci":
        du = 0.5 * (r - R)
    elif spec.kind in ("unnormalized_ricci", "yamabe_2d"):
        du = -0.5 * R
    else:
        phi = np.asarray(spec.phi(FlowState.at(metric, t)), dtype=np.float64)
        if phi.shape != R.shape:
            raise BadParams("phi supplier returned a field of the wrong shape")
        du = -phi
    return du, R, r


def _stiffness_radius(metric, R):
    """Gershgorin bound on the spectral radius of the linearized curvature operator."""
    mesh = metric.mesh
    K = mesh.stiffness
    return float(np.max(np.exp(-2 * metric.u) * 2 * K.diagonal() / mesh.vertex_areas + np.abs(R)))


def _rk4(spec, metric, t, h, k1):
    mesh = metric.mesh
    u = metric.u
    k2, _, r2 = flow_rhs(spec, ConformalMetric(mesh, u + 0.5 * h * k1), t + 0.5 * h)
    k3, _, r3 = flow_rhs(spec, ConformalMetric(mesh, u + 0.5 * h * k2), t + 0.5 * h)
    k4, _, r4 = flow_rhs(spec, ConformalMetric(mesh, u + h * k3), t + h)
    return u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), (r2, r3, r4)


def step(state, spec, dt=None):
    """Advance ``state`` by ``dt`` (default ``spec.dt``) with adaptive RK4 substeps.

    For the normalized flow with ``area_projection`` a constant is added to
    ``u`` after the step so the area returns to ``state.area0``; the relative
    area error before that correction is stored as ``drift``.

    Raises
    ------
    BlowupDetected
        ``max|R|`` exceeds 1e6.
    StepUnderflow
        A substep had to be halved below 1e-12.
    """
    dt = spec.dt if dt is None else float(dt)
    metric, t, int_r = state.metric, state.t, state.int_r
    t_target = t + dt
    mesh = metric.mesh
    while t < t_target:
        h = t_target - t
        k1, R, r = flow_rhs(spec, metric, t)
        limit = min(0.1 / max(np.max(np.abs(k1)), 1e-300),
                    RK4_STABILITY / _stiffness_radius(metric, R))
        while h > limit:
            h *= 0.5
            if h < MIN_SUBSTEP:
                raise StepUnderflow(f"substep fell below {MIN_SUBSTEP} at t={t:.6g}")
        u_new, (r2, r3, r4) = _rk4(spec, metric, t, h, k1)
        int_r += (h / 6.0) * (r + 2 * r2 + 2 * r3 + r4)
        metric = ConformalMetric(mesh, u_new)
        t = t_target if t_target - (t + h) <= 1e-14 * max(1.0, abs(t_target)) else t + h
        if not np.all(np.isfinite(u_new)) or np.max(np.abs(metric.scalar_curvature)) > BLOWUP_CURVATURE:
            raise BlowupDetected(f"curvature exceeded {BLOWUP_CURVATURE:g} at t={t:.6g}")
    drift = 0.0
    if spec.normalized and spec.area_projection:
        drift = abs(metric.area - state.area0) / state.area0
        metric = metric.shifted(0.5 * math.log(state.area0 / metric.area))
    return FlowState.at(metric, t, int_r=int_r, area0=state.area0, drift=drift)


def blowup_estimate(metric, kind, p=2.0, n=2):
    """Closed-form finite-time bound for the unnormalized flows, or ``inf``.

    Unnormalized Ricci with ``rho0 = min R(0) > 0``: ``1/(2 a rho0)``,
    ``a = max(1/n, n/p^2)``.  Yamabe: ``1/sigma0`` (``sigma0 = max R(0)``),
    the range on which both curvature bounds are finite.
    """
    R = metric.scalar_curvature
    rho0, sigma0 = float(R.min()), float(R.max())
    if kind == "unnormalized_ricci" and rho0 > 0:
        a = max(1.0 / n, n / p**2)
        return 1.0 / (2 * a * rho0)
    if kind == "yamabe_2d" and sigma0 > 0:
        return 1.0 / sigma0
    return math.inf


def _sample_indices(n_steps, stride):
    idx = list(range(0, n_steps + 1, stride))
    if idx[-1] != n_steps:
        idx.append(n_steps)
    return idx


def run(metric0, spec, eigen_config=None, p=None, eigen_tracks=None, progress=None,
        refine=True):
    """Integrate a flow, sampling every ``spec.sample_stride`` steps.

    Parameters
    ----------
    metric0 : ConformalMetric
    spec : FlowSpec
    eigen_config : EigenConfig, optional
        When given, the first p-eigenvalue is solved at every sample.  The
        first sample uses the random restarts; later samples warm-start from
        the transported eigenfunctions of the previous sample.
    p : float, optional
        Exponent used for the blow-up estimate (defaults to ``eigen_config.p``
        or 2).
    eigen_tracks : int, optional
        Number of distinct local minimizers carried along as warm starts
        (default ``min(4, restarts)``).  Following several branches keeps
        the sampled value on the lowest one when the branches cross.
    progress : callable, optional
        Called as ``progress(state, eigensolution)`` for each new sample,
        with the forward-pass eigenvalue.
    refine : bool
        After the forward pass, transport each sample's eigenfunction back to
        the previous sample and keep it if it gives a lower eigenvalue.

    Returns
    -------
    Trajectory
        ``t_end`` is clamped to ``blowup_safety`` times the closed-form
        blow-up estimate when one applies (``stopped_early`` is then set).
    """
    if p is None:
        p = eigen_config.p if eigen_config is not None else 2.0
    t_end = spec.t_end
    T_est = blowup_estimate(metric0, spec.kind, p)
    stopped_early = False
    if t_end > spec.blowup_safety * T_est:
        t_end = spec.blowup_safety * T_est
        stopped_early = True
    n_steps = max(1, int(math.ceil(t_end / spec.dt - 1e-9)))
    times = np.minimum(np.arange(n_steps + 1) * spec.dt, t_end)
    sample_at = set(_sample_indices(n_steps, spec.sample_stride))

    tracker = None
    if eigen_config is not None:
        tracker = _EigenTracker(eigen_config, eigen_tracks)

    state = FlowState.initial(metric0)
    samples, eigen = [state], [tracker.first(state.metric) if tracker else None]
    if progress:
        progress(state, eigen[-1])
    max_drift = 0.0
    for k in range(1, n_steps + 1):
        state = step(state, spec, dt=times[k] - times[k - 1])
        max_drift = max(max_drift, state.drift)
        if k in sample_at:
            samples.append(state)
            eigen.append(tracker.next(state.metric) if tracker else None)
            if progress:
                progress(state, eigen[-1])
    if tracker is not None and refine and len(samples) > 1:
        tracker.refine_backward(samples, eigen)
    return Trajectory(spec=spec, samples=samples, eigen=eigen, steps=n_steps, t_stop=t_end,
                      stopped_early=stopped_early, max_drift=max_drift)


class _EigenTracker:
    """Carries several local minimizers of the Rayleigh quotient along a flow."""

    def __init__(self, config, tracks):
        self.config = config
        self.tracks = min(4, config.restarts) if tracks is None else max(1, int(tracks))
        self.metric = None
        self.fields = []

    def _keep(self, metric, sols):
        distinct = []
        for s in sorted(sols, key=lambda s: s.lam):
            if all(abs(s.lam - k.lam) > 1e-7 * k.lam for k in distinct):
                distinct.append(s)
        self.metric = metric
        self.fields = [s.f for s in distinct[: self.tracks]]

    def first(self, metric):
        sols = solve_candidates(metric, self.config)
        self._keep(metric, sols)
        return best_candidate(sols, warn=False)

    def next(self, metric):
        p = self.config.p
        cfg = replace(self.config, warm_restarts=0)
        sols = []
        for k, f in enumerate(self.fields):
            start = transport_test_function(self.metric, metric, f, p)
            (sol,) = solve_candidates(metric, cfg, initial=start)
            sol.restart_index = k
            sols.append(sol)
        self._keep(metric, sols)
        return best_candidate(sols, warn=False)

    def refine_backward(self, samples, eigen):
        """Carry lower minimizers found late in the run back to earlier samples.

        A track can drop into a lower local minimum after the first sample;
        transporting it backwards and re-solving keeps the series consistent.
        Returns the number of samples whose eigenvalue was lowered.
        """
        p = self.config.p
        cfg = replace(self.config, warm_restarts=0)
        lowered = 0
        for i in range(len(samples) - 2, -1, -1):
            start = transport_test_function(samples[i + 1].metric, samples[i].metric, eigen[i + 1].f, p)
            (sol,) = solve_candidates(samples[i].metric, cfg, initial=start)
            old = eigen[i]
            if sol.lam < old.lam * (1.0 - 1e-9) and (sol.converged or not old.converged):
                sol.restart_index = -1
                sol.candidates = list(old.candidates) + [sol.lam]
                eigen[i] = sol
                lowered += 1
        return lowered


def normalize_map(trajectory, p):
    """Rescaling of an unnormalized trajectory to the normalized time scale.

    Returns
    -------
    c, t_tilde, lam_tilde : ndarray
        ``c = exp(int_0^t r)``, ``t_tilde = int_0^t c`` and
        ``lam_tilde = c^(-p/2) lam``, all by the trapezoid rule on the samples.
    """
    if any(e is None for e in trajectory.eigen):
        raise MissingLambda("trajectory has samples without eigenvalues")
    t = trajectory.times
    r = np.array([s.r for s in trajectory.samples])
    int_r = np.concatenate([[0.0], np.cumsum(0.5 * (r[1:] + r[:-1]) * np.diff(t))])
    c = np.exp(int_r)
    t_tilde = np.concatenate([[0.0], np.cumsum(0.5 * (c[1:] + c[:-1]) * np.diff(t))])
    return c, t_tilde, c ** (-p / 2.0) * trajectory.lambdas


# --------------------------------------------------------------------------
# closed-form bounds


def power_bound(t, x0, k):
    """Solution ``1 / (1/x0 - k t)`` of ``x' = k x^2``, ``x(0) = x0``."""
    if x0 == 0:
        raise BadParams("x0 must be nonzero")
    den = 1.0 / x0 - k * np.asarray(t, dtype=np.float64)
    # the solution exists while the denominator keeps the sign of 1/x0
    if np.any(den * x0 <= 0):
        raise PastBlowup(f"t reaches the blow-up time 1/(k x0) = {1.0 / (k * x0):.6g}")
    out = 1.0 / den
    return float(out) if np.ndim(out) == 0 else out


def sharp_lower_bound(t, r, rho0):
    """Lower curvature bound ``r / (1 - (1 - r/rho0) e^{rt})`` for the normalized flow, ``r < 0``."""
    if not r < 0:
        raise BranchMismatch("the sharp lower bound needs r < 0")
    if rho0 == 0:
        raise DenominatorVanishes("rho0 must be nonzero")
    den = 1.0 - (1.0 - r / rho0) * np.exp(r * np.asarray(t, dtype=np.float64))
    if np.any(den <= 0):
        raise DenominatorVanishes("denominator 1 - (1 - r/rho0) e^{rt} is not positive")
    out = r / den
    return float(out) if np.ndim(out) == 0 else out


def chow_knopf_bounds(t, r, C):
    """Exponential curvature sandwich ``(lo, hi)`` for the normalized flow, branch by ``sign(r)``."""
    if C < 0:
        raise NegativeC("C must be non-negative")
    t = np.asarray(t, dtype=np.float64)
    if r < 0:
        e = C * np.exp(r * t)
        lo, hi = r - e, r + e
    elif r == 0:
        lo, hi = -C / (1.0 + C * t), C + 0.0 * t
    else:
        e = C * np.exp(r * t)
        lo, hi = -e, r + e
    if np.ndim(lo) == 0:
        return float(lo), float(hi)
    return lo, hi
