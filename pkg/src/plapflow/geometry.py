"""Intrinsic triangle meshes, conformal metrics and the discrete operators on them.

A :class:`TriangleMesh` is defined by connectivity and edge lengths only, so flat
tori and hyperbolic surfaces need no embedding.  A :class:`ConformalMetric` is a
mesh together with a per-vertex exponent ``u`` describing ``g = exp(2u) g0``.

Quadrature conventions
----------------------
* vertex measure ``mu_i = exp(2 u_i) * A0_i`` with ``A0_i`` a third of the
  incident background face areas;
* on each face the conformal factor uses the mean exponent of its corners;
* scalar curvature ``R = exp(-2u) (R0 - 2 lap0 u)`` with ``R0 = 2 delta / A0``
  built from angle defects, which makes discrete Gauss-Bonnet exact.
"""
from __future__ import annotations

import math
import warnings
from functools import cached_property

import numpy as np
from scipy import sparse

from .errors import (
    DegenerateFace,
    InconsistentOrientation,
    InvalidP,
    MeshError,
    MeshQualityWarning,
    NonManifold,
    ShapeMismatch,
)

__all__ = [
    "TriangleMesh",
    "ConformalMetric",
    "build_mesh",
    "laplace0",
    "scalar_curvature",
    "integrate",
    "average_scalar_curvature",
    "gauss_bonnet_average",
    "dirichlet_p_energy",
    "p_energy_gradient",
    "face_energy_density",
    "p_mass",
    "min_gauss_curvature",
    "check_p",
]


def check_p(p):
    if not np.isfinite(p) or p <= 1.0:
        raise InvalidP(f"p must be > 1, got {p}")
    return float(p)


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _heron(a, b, c):
    """Numerically stable triangle area (Kahan's ordering)."""
    s = np.sort(np.stack([a, b, c], axis=-1), axis=-1)[..., ::-1]
    a, b, c = s[..., 0], s[..., 1], s[..., 2]
    prod = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c))
    return 0.25 * np.sqrt(np.maximum(prod, 0.0))


class TriangleMesh:
    """Closed, consistently oriented intrinsic triangle mesh.

    Use :func:`build_mesh` to construct one; the constructor assumes validated
    input.  All arrays are read-only.

    Attributes
    ----------
    faces : (F, 3) int array
    edges : (E, 2) int array, ``edges[:, 0] < edges[:, 1]``
    edge_lengths : (E,) float array aligned with ``edges``
    face_edge_lengths : (F, 3) lengths of the edge opposite each corner
    face_areas, cot : (F,), (F, 3) background areas and cotangent of each corner
    vertex_areas : (V,) barycentric vertex areas ``A0``
    angle_defects : (V,) ``2 pi - sum of corner angles``
    cotan_weights : (E,) ``w_ij = (cot a + cot b) / 2``
    euler_characteristic : int
    """

    def __init__(self, vertex_count, faces, edges, edge_lengths, face_edge_index):
        self.vertex_count = int(vertex_count)
        self.faces = _frozen(np.asarray(faces, dtype=np.int64))
        self.edges = _frozen(np.asarray(edges, dtype=np.int64))
        self.edge_lengths = _frozen(np.asarray(edge_lengths, dtype=np.float64))
        # face_edge_index[f, k] is the edge opposite corner k
        self.face_edge_index = _frozen(np.asarray(face_edge_index, dtype=np.int64))
        self.face_edge_lengths = _frozen(self.edge_lengths[self.face_edge_index])

        la, lb, lc = self.face_edge_lengths.T
        area = _heron(la, lb, lc)
        self.face_areas = _frozen(area)
        l2 = self.face_edge_lengths**2
        # cot of corner k = (sum of squares of adjacent sides - opposite^2) / (4A)
        cot = (l2.sum(axis=1, keepdims=True) - 2.0 * l2) / (4.0 * area[:, None])
        self.cot = _frozen(cot)
        cosang = (l2.sum(axis=1, keepdims=True) - 2.0 * l2) / (
            2.0 * np.prod(self.face_edge_lengths, axis=1, keepdims=True)
            / self.face_edge_lengths
        )
        self.corner_angles = _frozen(np.arccos(np.clip(cosang, -1.0, 1.0)))

        V = self.vertex_count
        self.vertex_areas = _frozen(
            np.bincount(self.faces.ravel(), weights=np.repeat(area / 3.0, 3), minlength=V)
        )
        angle_sum = np.bincount(
            self.faces.ravel(), weights=self.corner_angles.ravel(), minlength=V
        )
        self.angle_defects = _frozen(2.0 * math.pi - angle_sum)
        self.cotan_weights = _frozen(
            0.5 * np.bincount(self.face_edge_index.ravel(), weights=cot.ravel(),
                              minlength=len(self.edges))
        )
        self.euler_characteristic = V - len(self.edges) + len(self.faces)

        i, j = self.edges.T
        w = self.cotan_weights
        W = sparse.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(V, V),
        ).tocsr()
        # stiffness K: f^T K f = sum_edges w_ij (f_i - f_j)^2
        self.stiffness = (sparse.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()
        self.background_curvature = _frozen(2.0 * self.angle_defects / self.vertex_areas)

    @property
    def face_count(self):
        return len(self.faces)

    @property
    def edge_count(self):
        return len(self.edges)

    @property
    def is_delaunay(self):
        return bool(np.all(self.cotan_weights >= -1e-12))

    def edge_length_map(self):
        return {(int(a), int(b)): float(L) for (a, b), L in zip(self.edges, self.edge_lengths)}

    def scaled(self, factor):
        """Same connectivity with every length multiplied by ``factor``."""
        return TriangleMesh(self.vertex_count, self.faces, self.edges,
                            self.edge_lengths * float(factor), self.face_edge_index)

    def __repr__(self):
        return (f"TriangleMesh(V={self.vertex_count}, E={self.edge_count}, "
                f"F={self.face_count}, chi={self.euler_characteristic})")


def _edge_length_table(edge_lengths):
    if isinstance(edge_lengths, dict):
        items = edge_lengths.items()
        table = {}
        for (a, b), L in items:
            table[(min(int(a), int(b)), max(int(a), int(b)))] = float(L)
        return table
    arr = np.asarray(edge_lengths, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise MeshError("edge_lengths must be a mapping or rows of (i, j, length)")
    table = {}
    for a, b, L in arr:
        key = (min(int(a), int(b)), max(int(a), int(b)))
        table[key] = float(L)
    return table


def _check_vertex_links(faces, V):
    """Each vertex star must be a single fan of triangles (a disc)."""
    nxt = {}
    count = np.zeros(V, dtype=np.int64)
    for f in faces:
        for k in range(3):
            v, a, b = f[k], f[(k + 1) % 3], f[(k + 2) % 3]
            nxt[(v, a)] = b
            count[v] += 1
    if np.any(count == 0):
        raise NonManifold(f"isolated vertex {int(np.flatnonzero(count == 0)[0])}")
    start = {}
    for (v, a) in nxt:
        start.setdefault(v, a)
    for v, a0 in start.items():
        a, n = a0, 0
        while True:
            a = nxt.get((v, a))
            n += 1
            if a is None or n > count[v]:
                raise NonManifold(f"vertex {v} link is not a cycle")
            if a == a0:
                break
        if n != count[v]:
            raise NonManifold(f"vertex {v} is pinched (link has several components)")


def build_mesh(faces, edge_lengths, vertex_count=None, warn=True):
    """Validate connectivity and lengths and return a :class:`TriangleMesh`.

    Parameters
    ----------
    faces : sequence of (i, j, k)
        Oriented triangles.
    edge_lengths : dict or (E, 3) array-like
        ``{(i, j): L}`` or rows ``(i, j, L)``; every mesh edge needs a length.
    vertex_count : int, optional
        Defaults to ``max index + 1``.

    Raises
    ------
    NonManifold, InconsistentOrientation, DegenerateFace, MeshError
    """
    faces = np.asarray(faces, dtype=np.int64)
    if faces.ndim != 2 or faces.shape[1] != 3 or len(faces) == 0:
        raise MeshError("faces must be a non-empty (F, 3) integer array")
    if vertex_count is None:
        vertex_count = int(faces.max()) + 1
    V = int(vertex_count)
    if faces.min() < 0 or faces.max() >= V:
        raise MeshError("face index out of range")
    if np.any(faces[:, 0] == faces[:, 1]) or np.any(faces[:, 1] == faces[:, 2]) or np.any(
        faces[:, 0] == faces[:, 2]
    ):
        raise DegenerateFace("face with repeated vertex")

    # half-edge (a -> b) for each corner; opposite corner k gets edge (k+1, k+2)
    a = faces[:, [1, 2, 0]].ravel()
    b = faces[:, [2, 0, 1]].ravel()
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    keys = lo * V + hi
    uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
    if np.any(counts != 2):
        bad = uniq[counts != 2][0]
        raise NonManifold(
            f"edge ({bad // V}, {bad % V}) borders {counts[counts != 2][0]} faces (need 2)"
        )
    directed = np.unique(a * V + b, return_counts=True)[1]
    if np.any(directed > 1):
        raise InconsistentOrientation("an edge is traversed twice in the same direction")
    _check_vertex_links(faces.tolist(), V)

    edges = np.stack([uniq // V, uniq % V], axis=1)
    table = _edge_length_table(edge_lengths)
    lengths = np.empty(len(edges))
    for e, (i, j) in enumerate(edges):
        L = table.get((int(i), int(j)))
        if L is None:
            raise MeshError(f"missing length for edge ({i}, {j})")
        lengths[e] = L
    if len(table) != len(edges):
        raise MeshError("edge_lengths contains edges that are not in the mesh")
    if not np.all(np.isfinite(lengths)) or np.any(lengths <= 0):
        raise MeshError("edge lengths must be positive and finite")

    fe = inverse.reshape(-1, 3)
    fl = lengths[fe]
    la, lb, lc = fl.T
    bad = ~((la < lb + lc) & (lb < la + lc) & (lc < la + lb))
    if np.any(bad):
        f = int(np.flatnonzero(bad)[0])
        raise DegenerateFace(f"face {f} violates the strict triangle inequality: {fl[f]}")

    mesh = TriangleMesh(V, faces, edges, lengths, fe)
    if warn and not mesh.is_delaunay:
        warnings.warn(
            f"{int(np.sum(mesh.cotan_weights < 0))} negative cotan weights (non-Delaunay mesh)",
            MeshQualityWarning,
            stacklevel=2,
        )
    return mesh


def _field(mesh, f, name="field"):
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (mesh.vertex_count,):
        raise ShapeMismatch(f"{name} has shape {f.shape}, expected ({mesh.vertex_count},)")
    return f


class ConformalMetric:
    """Metric ``exp(2u) g0`` on a fixed background mesh.

    Derived quantities are computed lazily and cached; ``u`` is read-only.
    """

    def __init__(self, mesh, u=None):
        self.mesh = mesh
        if u is None:
            u = np.zeros(mesh.vertex_count)
        u = _field(mesh, u, "u").copy()
        if not np.all(np.isfinite(u)):
            raise ShapeMismatch("u must be finite")
        self.u = _frozen(u)

    @cached_property
    def vertex_measure(self):
        return _frozen(np.exp(2.0 * self.u) * self.mesh.vertex_areas)

    @cached_property
    def face_u(self):
        return _frozen(self.u[self.mesh.faces].mean(axis=1))

    @cached_property
    def area(self):
        return float(self.vertex_measure.sum())

    @cached_property
    def scalar_curvature(self):
        m = self.mesh
        R = np.exp(-2.0 * self.u) * (m.background_curvature - 2.0 * laplace0(m, self.u))
        return _frozen(R)

    @cached_property
    def average_scalar_curvature(self):
        return float(np.dot(self.scalar_curvature, self.vertex_measure) / self.area)

    def shifted(self, c):
        """Metric ``exp(2c) g``: adds ``c`` to every exponent."""
        return ConformalMetric(self.mesh, self.u + c)

    def with_u(self, u):
        return ConformalMetric(self.mesh, u)

    def __repr__(self):
        return f"ConformalMetric({self.mesh!r}, area={self.area:.6g})"


def laplace0(mesh, f):
    """Background cotan Laplacian ``(1/A0_i) sum_j w_ij (f_j - f_i)``."""
    f = _field(mesh, f)
    return -(mesh.stiffness @ f) / mesh.vertex_areas


def scalar_curvature(metric):
    return metric.scalar_curvature


def integrate(metric, field):
    field = _field(metric.mesh, field)
    return float(np.dot(field, metric.vertex_measure))


def average_scalar_curvature(metric):
    return metric.average_scalar_curvature


def gauss_bonnet_average(metric):
    """Exact average curvature ``4 pi chi / Area``."""
    return 4.0 * math.pi * metric.mesh.euler_characteristic / metric.area


def _face_grad_sq(mesh, f):
    """Squared background gradient norm of the piecewise-linear ``f`` per face."""
    F = mesh.faces
    fa, fb, fc = f[F[:, 0]], f[F[:, 1]], f[F[:, 2]]
    d = np.stack([fb - fc, fc - fa, fa - fb], axis=1)  # edge opposite each corner
    q = np.einsum("fk,fk->f", mesh.cot, d * d) / (2.0 * mesh.face_areas)
    return np.maximum(q, 0.0), d


def face_energy_density(metric, f, p, eps_reg=0.0):
    """Per-face terms ``A0_f exp((2-p) u_f) (|grad f|^2 + eps^2)^(p/2)``."""
    p = check_p(p)
    mesh = metric.mesh
    q, _ = _face_grad_sq(mesh, _field(mesh, f))
    return mesh.face_areas * np.exp((2.0 - p) * metric.face_u) * (q + eps_reg**2) ** (p / 2.0)


def dirichlet_p_energy(metric, f, p, eps_reg=0.0):
    """Discrete ``int |df|^p dmu`` on ``exp(2u) g0`` (regularized when ``eps_reg > 0``)."""
    return float(face_energy_density(metric, f, p, eps_reg).sum())


def p_energy_gradient(metric, f, p, eps_reg=0.0):
    """Return ``(E, dE/df)`` for :func:`dirichlet_p_energy`."""
    p = check_p(p)
    mesh = metric.mesh
    f = _field(mesh, f)
    q, d = _face_grad_sq(mesh, f)
    scale = np.exp((2.0 - p) * metric.face_u)
    base = q + eps_reg**2
    energy = float(np.sum(mesh.face_areas * scale * base ** (p / 2.0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = scale * (p / 2.0) * np.where(base > 0, base ** (p / 2.0 - 1.0), 0.0)
    # d q_f / d f  (times A_f):  cot_k * (f_a - f_b) on edge k = (a, b)
    t = coef[:, None] * mesh.cot * d
    F = mesh.faces
    V = mesh.vertex_count
    # edge opposite corner 0 is (1 -> 2): +t to vertex 1, -t to vertex 2, etc.
    grad = (
        np.bincount(F[:, 1], t[:, 0], V) - np.bincount(F[:, 2], t[:, 0], V)
        + np.bincount(F[:, 2], t[:, 1], V) - np.bincount(F[:, 0], t[:, 1], V)
        + np.bincount(F[:, 0], t[:, 2], V) - np.bincount(F[:, 1], t[:, 2], V)
    )
    return energy, grad


def p_mass(metric, f, p):
    """``sum_i |f_i|^p mu_i``."""
    p = check_p(p)
    f = _field(metric.mesh, f)
    return float(np.dot(np.abs(f) ** p, metric.vertex_measure))


def min_gauss_curvature(metric):
    return float(metric.scalar_curvature.min() / 2.0)
