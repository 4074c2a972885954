"""Builtin surfaces and mesh file I/O.

Supported formats:

* OBJ subset: ``v x y z`` and ``f i j k`` lines (1-based, ``i/t/n`` index
  forms accepted); lengths come from the embedding.
* intrinsic JSON: ``{"faces": [[i, j, k], ...], "edge_lengths": [[i, j, L], ...]}``
  (0-based).
"""
from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import BadParams, ParseError
from .geometry import TriangleMesh, build_mesh

__all__ = [
    "generate_mesh",
    "icosphere",
    "flat_torus",
    "genus2",
    "icosphere_embedding",
    "load_mesh",
    "mesh_from_embedding",
    "mesh_to_json",
    "save_mesh_json",
]


def mesh_from_embedding(vertices, faces):
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    edges = {}
    for f in faces:
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            key = (min(a, b), max(a, b))
            if key not in edges:
                edges[key] = float(np.linalg.norm(vertices[a] - vertices[b]))
    return build_mesh(faces, edges, vertex_count=len(vertices))


def icosphere_embedding(level=0, radius=1.0):
    """Vertices and faces of a subdivided icosahedron on a sphere of ``radius``."""
    t = (1.0 + 5.0**0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
         (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
         (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(x, dtype=np.float64) / np.linalg.norm(x) for x in v]
    for _ in range(int(level)):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts) * float(radius), np.array(faces, dtype=np.int64)


def _defects_and_areas(mesh, lengths):
    fl = lengths[mesh.face_edge_index]
    l2 = fl**2
    cosang = (l2.sum(1, keepdims=True) - 2 * l2) / (2 * np.prod(fl, 1, keepdims=True) / fl)
    ang = np.arccos(np.clip(cosang, -1.0, 1.0))
    a, b, c = fl.T
    s = 0.5 * (a + b + c)
    area = np.sqrt(s * (s - a) * (s - b) * (s - c))
    V, F = mesh.vertex_count, mesh.faces
    A0 = np.bincount(F.ravel(), np.repeat(area / 3.0, 3), V)
    defect = 2 * np.pi - np.bincount(F.ravel(), ang.ravel(), V)
    return defect, A0, fl, ang, area


def uniformize_curvature(mesh, tol=1e-12, max_iter=60):
    """Perturb edge lengths (minimum-norm Gauss-Newton) until ``delta_i / A0_i`` is constant.

    Used for the round sphere: barycentric areas make the plain icosphere's
    degree-5 vertices about 15% more curved than the rest.
    """
    V, F, fe = mesh.vertex_count, mesh.faces, mesh.face_edge_index
    x = mesh.edge_lengths.copy()
    rows = np.repeat(F, 3, axis=1).ravel()          # vertex F[f, a] ...
    cols = np.tile(fe, (1, 3)).ravel()              # ... against edge opposite corner b
    for _ in range(max_iter):
        defect, A0, fl, ang, area = _defects_and_areas(mesh, x)
        kappa = defect.sum() / A0.sum()
        r = defect - kappa * A0
        if np.max(np.abs(r / A0)) < tol:
            break
        # d angle_a / d l_b : l_a/(2A) if a == b else -l_a cos(angle_c)/(2A)
        cosang = np.cos(ang)
        dang = np.empty((len(F), 3, 3))
        for ia in range(3):
            for ib in range(3):
                if ia == ib:
                    dang[:, ia, ib] = fl[:, ia] / (2 * area)
                else:
                    ic = 3 - ia - ib
                    dang[:, ia, ib] = -fl[:, ia] * cosang[:, ic] / (2 * area)
        cot = cosang / np.sin(ang)
        darea = fl * cot / 2.0                       # d area / d l_b
        vals = dang + kappa * darea[:, None, :] / 3.0  # d r_a / d l_b (sign absorbed below)
        J = sparse.coo_matrix((vals.ravel(), (rows, cols)), shape=(V, len(x))).tocsr()
        # r = defect - kappa A0 and d defect = -d angle, so dr/dl = -J
        y = splu((J @ J.T + 1e-14 * sparse.eye(V)).tocsc()).solve(r)
        x = x + J.T @ y
    return TriangleMesh(V, F, mesh.edges, x, fe)


@lru_cache(maxsize=16)
def icosphere(level=0, radius=1.0, uniform=True):
    """Subdivided icosahedron on a sphere of ``radius`` (lengths from the embedding).

    With ``uniform`` the lengths are then corrected (relative change below 1e-3
    for level >= 2) so the discrete curvature is exactly constant and ``u = 0``
    is a fixed point of the normalized flow.
    """
    if int(level) != level or level < 0 or level > 7:
        raise BadParams(f"icosphere level must be an integer in [0, 7], got {level}")
    if not radius > 0:
        raise BadParams("radius must be positive")
    mesh = mesh_from_embedding(*icosphere_embedding(level, radius))
    if uniform and level > 0:
        mesh = uniformize_curvature(mesh)
    return mesh


def flat_torus(nx=16, ny=16, Lx=2 * np.pi, Ly=2 * np.pi):
    """Periodic right-triangle grid on the flat torus ``[0, Lx) x [0, Ly)``.

    Vertex ``(i, j)`` has index ``i + nx * j`` and sits at ``(i Lx/nx, j Ly/ny)``.
    """
    if int(nx) != nx or int(ny) != ny or nx < 3 or ny < 3:
        raise BadParams("flat_torus needs integer nx, ny >= 3")
    if not (Lx > 0 and Ly > 0):
        raise BadParams("torus side lengths must be positive")
    nx, ny = int(nx), int(ny)
    dx, dy = Lx / nx, Ly / ny
    diag = float(np.hypot(dx, dy))
    idx = lambda i, j: (i % nx) + nx * (j % ny)  # noqa: E731
    faces, lengths = [], {}
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            faces += [(a, b, c), (a, c, d)]
            lengths[(min(a, b), max(a, b))] = dx
            lengths[(min(a, d), max(a, d))] = dy
            lengths[(min(a, c), max(a, c))] = diag
    return build_mesh(faces, lengths, vertex_count=nx * ny)


def torus_coordinates(nx, ny, Lx=2 * np.pi, Ly=2 * np.pi):
    """Grid coordinates ``(x, y)`` of the :func:`flat_torus` vertices."""
    i = np.arange(nx * ny) % nx
    j = np.arange(nx * ny) // nx
    return i * (Lx / nx), j * (Ly / ny)


def genus2(scale=1.0):
    """Shipped genus-2 surface: 11 vertices of degree 7 or 8, all edges of length ``scale``."""
    if not scale > 0:
        raise BadParams("scale must be positive")
    data = json.loads(resources.files("plapflow.assets").joinpath("genus2.json").read_text())
    mesh = _mesh_from_json_dict(data)
    return mesh if scale == 1.0 else mesh.scaled(scale)


_GENERATORS = {"icosphere": icosphere, "flat_torus": flat_torus, "genus2": genus2}


def generate_mesh(kind, **params):
    """Build one of the builtin surfaces (``icosphere``, ``flat_torus``, ``genus2``)."""
    try:
        gen = _GENERATORS[kind]
    except KeyError:
        raise BadParams(f"unknown mesh kind {kind!r}; expected one of {sorted(_GENERATORS)}")
    try:
        return gen(**params)
    except TypeError as exc:
        raise BadParams(f"bad parameters for {kind}: {exc}") from None


def _parse_obj(text):
    verts, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        key = tok[0]
        if key == "v":
            if len(tok) < 4:
                raise ParseError("vertex needs 3 coordinates", lineno, len(raw))
            try:
                verts.append([float(x) for x in tok[1:4]])
            except ValueError:
                raise ParseError(f"bad coordinate in {line!r}", lineno, raw.find(tok[1]) + 1)
        elif key == "f":
            if len(tok) != 4:
                raise ParseError(f"only triangles are supported, got {len(tok) - 1} indices",
                                 lineno, 1)
            idx = []
            for t in tok[1:]:
                try:
                    k = int(t.split("/")[0])
                except ValueError:
                    raise ParseError(f"bad face index {t!r}", lineno, raw.find(t) + 1)
                k = k - 1 if k > 0 else len(verts) + k
                if not 0 <= k < len(verts):
                    raise ParseError(f"face index {t} out of range", lineno, raw.find(t) + 1)
                idx.append(k)
            faces.append(idx)
        elif key in ("vn", "vt", "o", "g", "s", "usemtl", "mtllib"):
            continue
        else:
            raise ParseError(f"unsupported OBJ statement {key!r}", lineno, 1)
    if not faces:
        raise ParseError("no faces found")
    return np.array(verts), np.array(faces, dtype=np.int64)


def _mesh_from_json_dict(data):
    if not isinstance(data, dict) or "faces" not in data or "edge_lengths" not in data:
        raise ParseError("intrinsic JSON needs 'faces' and 'edge_lengths'")
    faces = data["faces"]
    rows = data["edge_lengths"]
    if any(len(f) != 3 for f in faces):
        raise ParseError("faces must be index triples")
    if any(len(r) != 3 for r in rows):
        raise ParseError("edge_lengths rows must be [i, j, L]")
    lengths = {(int(i), int(j)): float(L) for i, j, L in rows}
    return build_mesh(faces, lengths, vertex_count=data.get("vertex_count"))


def load_mesh(path):
    """Read an OBJ (``.obj``) or intrinsic JSON (``.json``) mesh file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
        return _mesh_from_json_dict(data)
    verts, faces = _parse_obj(text)
    return mesh_from_embedding(verts, faces)


def mesh_to_json(mesh):
    return {
        "vertex_count": mesh.vertex_count,
        "faces": mesh.faces.tolist(),
        "edge_lengths": [[int(i), int(j), float(L)] for (i, j), L in zip(mesh.edges, mesh.edge_lengths)],
    }


def save_mesh_json(mesh, path):
    Path(path).write_text(json.dumps(mesh_to_json(mesh)))
