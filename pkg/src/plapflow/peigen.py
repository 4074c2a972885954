"""First eigenvalue of the p-Laplacian on a conformal metric.

The first eigenvalue is the minimum over non-constant ``f`` of

    Q(f) = E_p(f) / min_s M_p(f + s),

where ``E_p`` is the discrete p-Dirichlet energy and ``M_p`` the p-mass.  The
inner minimum is attained at the unique shift ``s0`` with
``sum |f+s0|^(p-2) (f+s0) mu = 0`` (the median constraint), so minimizing ``Q``
over all of R^V is the same as minimizing the Rayleigh quotient under the
constraint.  ``Q`` is invariant under shifts and scalings of ``f``.

The nonlinear solver runs a preconditioned L-BFGS descent on ``Q`` with an
Armijo backtracking line search; the preconditioner is the (conformally
invariant) cotan stiffness matrix plus a small mass shift.  For ``p < 2`` the
energy is regularized by ``eps`` and ``eps`` is annealed down a schedule.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

from .errors import (
    ConstantInput,
    MeshMismatch,
    NotConvergedWarning,
    NotRecentered,
    SolverBreakdown,
)
from .geometry import (
    ConformalMetric,
    _field,
    check_p,
    dirichlet_p_energy,
    p_energy_gradient,
    p_mass,
)

__all__ = [
    "EigenConfig",
    "EigenSolution",
    "recenter",
    "recenter_weights",
    "median_constraint",
    "rayleigh",
    "solve_first_eigen",
    "solve_candidates",
    "best_candidate",
    "linear_first_eigen",
    "el_residual",
    "transport_test_function",
]


@dataclass(frozen=True)
class EigenConfig:
    p: float = 2.0
    tol_lambda: float = 1e-8
    tol_residual: float = 1e-6
    max_iters: int = 5000
    restarts: int = 8
    eps_schedule: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
    rng_seed: int = 0
    # random restarts added to a warm-started solve
    warm_restarts: int = 0
    history: int = 12

    def __post_init__(self):
        check_p(self.p)
        if not (self.tol_lambda > 0 and self.tol_residual > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1 or self.restarts < 1:
            raise ValueError("max_iters and restarts must be >= 1")
        eps = tuple(float(e) for e in self.eps_schedule)
        if any(b >= a for a, b in zip(eps, eps[1:])) or not eps or eps[-1] > 1e-8:
            raise ValueError("eps_schedule must decrease strictly to <= 1e-8")
        object.__setattr__(self, "eps_schedule", eps)


@dataclass
class EigenSolution:
    lam: float
    f: np.ndarray
    s0_residual: float
    el_residual: float
    iterations: int
    converged: bool
    p: float
    restart_index: int = 0
    seed: int = 0
    restarts: int = 1
    final_eps: float = 0.0
    candidates: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "lambda": self.lam,
            "p": self.p,
            "converged": self.converged,
            "el_residual": self.el_residual,
            "s0_residual": self.s0_residual,
            "iterations": self.iterations,
            "restart_index": self.restart_index,
            "seed": self.seed,
            "restarts": self.restarts,
            "final_eps": self.final_eps,
        }


# --------------------------------------------------------------------------
# median constraint


def _dF(g, w, p):
    """``sum |g|^(p-2) g w`` (F'(s)/p evaluated at the shifted field ``g``)."""
    return float(np.dot(np.sign(g) * np.abs(g) ** (p - 1.0), w))


def _recenter_core(f, w, p, polish=True):
    lo, hi = -float(f.max()), -float(f.min())
    if not hi > lo:
        raise ConstantInput("recentering needs a non-constant field")
    # F'(lo) <= 0 <= F'(hi): f + lo <= 0 everywhere and f + hi >= 0 everywhere
    while True:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if _dF(f + mid, w, p) < 0.0:
            lo = mid
        else:
            hi = mid
    s = lo if abs(_dF(f + lo, w, p)) <= abs(_dF(f + hi, w, p)) else hi
    if polish and p >= 2.0:
        for _ in range(3):
            g = f + s
            d2 = (p - 1.0) * float(np.dot(np.abs(g) ** (p - 2.0), w))
            if d2 <= 0:
                break
            step = _dF(g, w, p) / d2
            s_new = s - step
            if abs(_dF(f + s_new, w, p)) < abs(_dF(g, w, p)):
                s = s_new
            else:
                break
    return s


def recenter_weights(f, w, p):
    """Root ``s0`` of ``sum_i |f_i + s|^(p-2) (f_i + s) w_i`` for positive weights ``w``.

    Bisection on ``[-max f, -min f]`` down to adjacent floats, then a Newton
    polish when ``p >= 2``.
    """
    f = np.asarray(f, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    return _recenter_core(f, w, check_p(p))


def recenter(metric, f, p):
    """Return ``(s0, f + s0)`` satisfying the median constraint on ``metric``."""
    f = _field(metric.mesh, f)
    s0 = recenter_weights(f, metric.vertex_measure, p)
    return s0, f + s0


def median_constraint(metric, f, p):
    """``int |f|^(p-2) f dmu``."""
    return _dF(_field(metric.mesh, f), metric.vertex_measure, check_p(p))


def _recenter_tolerance(metric, f, p):
    # relative slack plus the change of the constraint when every value moves
    # by a few ulps of max|f|; for p near 1 and values near zero the latter
    # dominates and is the best any shift can reach in floating point
    a = np.abs(f)
    delta = 4.0 * np.finfo(np.float64).eps * float(a.max())
    rounding = (a + delta) ** (p - 1.0) - np.maximum(a - delta, 0.0) ** (p - 1.0)
    mu = metric.vertex_measure
    return 1e-8 * float(np.dot(a ** (p - 1.0), mu)) + float(np.dot(rounding, mu))


def rayleigh(metric, f, p):
    """``E_p(f) / M_p(f)`` for a recentered, non-constant ``f``."""
    p = check_p(p)
    f = _field(metric.mesh, f)
    if np.ptp(f) == 0:
        raise ConstantInput("Rayleigh quotient of a constant field")
    if abs(median_constraint(metric, f, p)) > _recenter_tolerance(metric, f, p):
        raise NotRecentered("field violates the median constraint; call recenter first")
    return dirichlet_p_energy(metric, f, p) / p_mass(metric, f, p)


def el_residual(metric, f, lam, p):
    """Weighted norm of ``(1/(p mu)) dE/df - lam |f|^(p-2) f``."""
    p = check_p(p)
    f = _field(metric.mesh, f)
    mu = metric.vertex_measure
    _, grad = p_energy_gradient(metric, f, p)
    r = grad / (p * mu) - lam * np.sign(f) * np.abs(f) ** (p - 1.0)
    return float(np.sqrt(np.dot(r * r, mu)))


def transport_test_function(metric_from, metric_to, f, p):
    """Carry an admissible field to another metric in the same conformal class.

    Multiplies by ``(det g_from / det g_to)^(1/(2(p-1))) = exp(2 (u_from - u_to)/(p-1))``,
    which preserves the median constraint exactly, then p-normalizes on ``metric_to``.
    """
    p = check_p(p)
    if metric_from.mesh is not metric_to.mesh and (
        metric_from.mesh.vertex_count != metric_to.mesh.vertex_count
        or not np.array_equal(metric_from.mesh.faces, metric_to.mesh.faces)
    ):
        raise MeshMismatch("metrics live on different meshes")
    f = _field(metric_from.mesh, f)
    h = f * np.exp(2.0 * (metric_from.u - metric_to.u) / (p - 1.0))
    return h / p_mass(metric_to, h, p) ** (1.0 / p)


# --------------------------------------------------------------------------
# p = 2 oracle


def linear_first_eigen(metric, tol=1e-13, max_iter=2000, seed=0, block=4):
    """First nonzero eigenpair of ``-Delta_g`` by inverse power iteration.

    Solves ``K X = D_mu X`` repeatedly (cotan stiffness ``K``, lumped measure
    ``D_mu``) on a small block of vectors kept mu-orthogonal to constants,
    with a Rayleigh-Ritz step so nearly degenerate eigenvalues do not stall
    the iteration.  Stops once the eigenvalue settles to ``tol`` and the
    residual ``|K f / mu - lam f|_mu`` is below ``1e3 tol lam``.  Returns
    ``(lam, f)`` with ``f`` mean-zero and ``sum f^2 mu = 1``.
    """
    mesh = metric.mesh
    mu = metric.vertex_measure
    K = mesh.stiffness
    V = mesh.vertex_count
    shift = 1e-9 * float(K.diagonal().max() / mu.max())
    lu = None
    for _ in range(5):
        try:
            lu = splu((K + shift * sparse.diags(mu)).tocsc())
            break
        except RuntimeError:
            shift *= 10.0
    if lu is None:
        raise SolverBreakdown("could not factor the shifted stiffness matrix")

    sqrt_mu = np.sqrt(mu)
    ones = sqrt_mu / math.sqrt(mu.sum())

    def orthonormal(X):
        # mu-orthonormal basis orthogonal to constants (via the sqrt(mu) scaling)
        Y = sqrt_mu[:, None] * X
        Y -= np.outer(ones, ones @ Y)
        Q, _ = np.linalg.qr(Y)
        return Q / sqrt_mu[:, None]

    k = max(1, min(int(block), V - 1))
    rng = np.random.default_rng(seed)
    X = orthonormal(rng.standard_normal((V, k)))
    lam_old = np.inf
    lam, f = np.inf, X[:, 0]
    for _ in range(max_iter):
        X = orthonormal(lu.solve(mu[:, None] * X))
        theta, C = eigh(X.T @ (K @ X))
        X = X @ C
        lam, f = float(theta[0]), X[:, 0]
        res = K @ f / mu - lam * f
        res_norm = math.sqrt(float(np.dot(res * res, mu)))
        if abs(lam - lam_old) <= tol * lam and res_norm <= 1e3 * tol * lam:
            break
        lam_old = lam
    f = f - np.dot(f, mu) / mu.sum()
    f = f / math.sqrt(np.dot(f * f, mu))
    return float(f @ (K @ f)), f


# --------------------------------------------------------------------------
# nonlinear solver


class _Objective:
    """``log E(f) - log m(f)`` and its gradient (log keeps the scale uniform)."""

    def __init__(self, metric, p, eps):
        self.metric = metric
        self.p = p
        self.eps = eps
        self.mu = metric.vertex_measure
        self.s = 0.0
        self.nfev = 0

    def _shift(self, f):
        p, mu = self.p, self.mu
        lo, hi = -float(f.max()), -float(f.min())
        if not hi > lo:
            raise ConstantInput("iterate became constant")
        s = min(max(self.s, lo), hi)
        width = 1e-3 * (hi - lo)
        a, b = max(lo, s - width), min(hi, s + width)
        if _dF(f + a, mu, p) > 0:
            a = lo
        if _dF(f + b, mu, p) < 0:
            b = hi
        if a == b:
            return a
        self.s = brentq(lambda t: _dF(f + t, mu, p), a, b, xtol=1e-15 * (hi - lo), rtol=1e-15)
        return self.s

    def __call__(self, f):
        self.nfev += 1
        p = self.p
        s = self._shift(f)
        g = f + s
        m = float(np.dot(np.abs(g) ** p, self.mu))
        E, dE = p_energy_gradient(self.metric, f, p, self.eps)
        dm = p * np.sign(g) * np.abs(g) ** (p - 1.0) * self.mu
        return math.log(E) - math.log(m), dE / E - dm / m, E / m


def _lbfgs(obj, x, precond, max_iters, tol_lambda, history, stall=20, accept=None):
    """Preconditioned L-BFGS with Armijo backtracking.

    Returns ``(x, Q, iterations, stalled)``; ``stalled`` means Q changed by
    less than ``tol_lambda`` relative over ``stall`` iterations (and
    ``accept(x)`` held), or the line search hit rounding level.
    """
    val, grad, Q = obj(x)
    S, Y = [], []
    q_hist = [Q]
    it = 0
    for it in range(1, max_iters + 1):
        # two-loop recursion with H0 = gamma * precond
        q = grad.copy()
        alphas = []
        for s, y in zip(reversed(S), reversed(Y)):
            a = np.dot(s, q) / np.dot(y, s)
            alphas.append(a)
            q -= a * y
        r = precond(q)
        if S:
            s, y = S[-1], Y[-1]
            r *= np.dot(s, y) / np.dot(y, precond(y))
        else:
            r *= 1e-2 * np.linalg.norm(x) / max(np.linalg.norm(r), 1e-300)
        for (s, y), a in zip(zip(S, Y), reversed(alphas)):
            b = np.dot(y, r) / np.dot(y, s)
            r += (a - b) * s
        d = -r
        slope = float(np.dot(grad, d))
        if slope >= 0:
            S.clear()
            Y.clear()
            d = -precond(grad)
            d *= 1e-2 * np.linalg.norm(x) / max(np.linalg.norm(d), 1e-300)
            slope = float(np.dot(grad, d))
            if slope >= 0:
                return x, Q, it, True
        step = 1.0
        while True:
            x_new = x + step * d
            try:
                v_new, g_new, Q_new = obj(x_new)
                ok = v_new <= val + 1e-4 * step * slope
                if not ok and v_new <= val + 1e-14 * max(1.0, abs(val)):
                    # approximate Wolfe: the value change is at rounding level,
                    # so judge the step by the directional derivative instead
                    ok = abs(float(np.dot(g_new, d))) <= 0.9 * abs(slope)
            except ConstantInput:
                ok = False
            if ok:
                break
            step *= 0.5
            if step < 1e-20:
                return x, Q, it, True
        s_vec, y_vec = x_new - x, g_new - grad
        if np.dot(s_vec, y_vec) > 1e-300:
            S.append(s_vec)
            Y.append(y_vec)
            if len(S) > history:
                S.pop(0)
                Y.pop(0)
        x, val, grad, Q = x_new, v_new, g_new, Q_new
        q_hist.append(Q)
        if len(q_hist) > stall and abs(q_hist[-1 - stall] - Q) <= tol_lambda * Q:
            if accept is None or (it % 10 == 0 and accept(x)):
                return x, Q, it, True
        # keep the iterate well scaled (Q is scale invariant; memory pairs rescale)
        nrm = np.linalg.norm(x)
        if not 0.5 < nrm / np.sqrt(len(x)) < 2.0:
            c = np.sqrt(len(x)) / nrm
            x *= c
            grad /= c
            S = [c * s for s in S]
            Y = [y / c for y in Y]
    return x, Q, it, False


def _preconditioner(metric):
    K = metric.mesh.stiffness
    mu = metric.vertex_measure
    # small mass shift makes K invertible; 1e-4 of the typical diagonal ratio
    shift = 1e-4 * float(np.mean(K.diagonal() / mu))
    lu = splu((K + shift * sparse.diags(mu)).tocsc())
    return lu.solve


def _finalize(metric, f, p):
    _, g = recenter(metric, f, p)
    g = g / p_mass(metric, g, p) ** (1.0 / p)
    # a second pass removes the drift introduced by the normalization rounding
    _, g = recenter(metric, g, p)
    return g / p_mass(metric, g, p) ** (1.0 / p)


def _solve_from(metric, x0, config, precond):
    p = config.p
    schedule = config.eps_schedule if p < 2.0 else (0.0,)
    x = np.array(x0, dtype=np.float64)
    x *= np.sqrt(len(x)) / np.linalg.norm(x)
    iters = 0
    stalled = False
    for k, eps in enumerate(schedule):
        last = k == len(schedule) - 1
        tol = config.tol_lambda * (1e-3 if last else 1e2)
        obj = _Objective(metric, p, eps)
        accept = None
        if last:
            def accept(y):
                g = _finalize(metric, y, p)
                lam = dirichlet_p_energy(metric, g, p)
                return el_residual(metric, g, lam, p) < 0.1 * config.tol_residual
        x, _, n, stalled = _lbfgs(obj, x, precond, config.max_iters - iters, tol, config.history,
                         accept=accept)
        iters += n
        if iters >= config.max_iters:
            break
    f = _finalize(metric, x, p)
    lam = dirichlet_p_energy(metric, f, p) / p_mass(metric, f, p)
    return f, lam, iters, schedule[-1], stalled


def solve_candidates(metric, config=None, initial=None):
    """Run the descent from every start and return one EigenSolution per start.

    Starts are the warm start ``initial`` (if given) followed by random
    fields seeded with ``(config.rng_seed, k)``; with a warm start only
    ``config.warm_restarts`` random fields are added.
    """
    config = config or EigenConfig()
    p = config.p
    V = metric.mesh.vertex_count
    starts = []
    if initial is not None:
        initial = _field(metric.mesh, initial)
        if np.ptp(initial) == 0:
            raise ConstantInput("warm start is constant")
        starts.append(initial)
        n_random = config.warm_restarts
    else:
        n_random = config.restarts
    for k in range(n_random):
        starts.append(np.random.default_rng([config.rng_seed, k]).standard_normal(V))

    precond = _preconditioner(metric)
    out = []
    for idx, x0 in enumerate(starts):
        f, lam, iters, eps, stalled = _solve_from(metric, x0, config, precond)
        res = el_residual(metric, f, lam, p)
        out.append(EigenSolution(
            lam=lam,
            f=f,
            s0_residual=abs(median_constraint(metric, f, p)),
            el_residual=res,
            iterations=iters,
            converged=bool(stalled and res < config.tol_residual),
            p=p,
            restart_index=idx,
            seed=config.rng_seed,
            restarts=len(starts),
            final_eps=eps,
        ))
    return out


def best_candidate(candidates, warn=True):
    """Lowest converged candidate (ties go to the lowest restart index), else the lowest overall."""
    pool = [c for c in candidates if c.converged] or list(candidates)
    best = min(pool, key=lambda c: (c.lam, c.restart_index))
    best.candidates = [c.lam for c in candidates]
    best.restarts = len(candidates)
    if warn and not best.converged:
        warnings.warn(
            f"p-eigen solve did not converge (el_residual={best.el_residual:.3g})",
            NotConvergedWarning, stacklevel=3,
        )
    return best


def solve_first_eigen(metric, config=None, initial=None):
    """First p-eigenpair by multi-start preconditioned descent.

    Parameters
    ----------
    metric : ConformalMetric
    config : EigenConfig
    initial : array, optional
        Warm start (e.g. a transported eigenfunction).  When given, only
        ``config.warm_restarts`` random starts are added to it.

    Returns
    -------
    EigenSolution
        The lowest converged candidate; if none converged, the lowest
        candidate with ``converged=False`` (a NotConvergedWarning is issued).
    """
    return best_candidate(solve_candidates(metric, config, initial))
