"""Analytic surfaces: exact samplers, distance oracles and triangle meshes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .degradation import make_rng
from .errors import InvalidArgumentError
from .geometry import PointCloud, farthest_point_sample

SHAPE_KINDS = ("sphere", "torus", "box", "capsule")
SAMPLERS = ("uniform-area", "stratified")


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        from .errors import InvalidInputError

        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise InvalidInputError("face index out of range")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("mesh vertices must be finite")
        if len(f):
            a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
            area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
            if np.any(area <= 1e-12):
                raise InvalidInputError(f"{int((area <= 1e-12).sum())} degenerate faces")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def transformed(self, fn):
        return TriangleMesh(fn(self.vertices), self.faces)


@dataclass(frozen=True)
class AnalyticSurface:
    """``kind`` plus its parameters: sphere (radius), torus (radius, tube),
    box (half_extents), capsule (radius, half_length along z)."""

    kind: str
    params: dict = field(default_factory=dict)

    def distance(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        k, prm = self.kind, self.params
        if k == "sphere":
            return np.abs(np.linalg.norm(p, axis=1) - prm["radius"])
        if k == "torus":
            ring = np.hypot(p[:, 0], p[:, 1]) - prm["radius"]
            return np.abs(np.hypot(ring, p[:, 2]) - prm["tube"])
        if k == "box":
            q = np.abs(p) - np.asarray(prm["half_extents"], dtype=np.float64)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = -np.minimum(q.max(axis=1), 0.0)
            return outside + inside
        if k == "capsule":
            z = np.clip(p[:, 2], -prm["half_length"], prm["half_length"])
            d = np.sqrt(p[:, 0] ** 2 + p[:, 1] ** 2 + (p[:, 2] - z) ** 2)
            return np.abs(d - prm["radius"])
        raise InvalidArgumentError(f"unknown surface kind {k!r}")

    @property
    def area(self):
        k, prm = self.kind, self.params
        if k == "sphere":
            return 4 * math.pi * prm["radius"] ** 2
        if k == "torus":
            return 4 * math.pi**2 * prm["radius"] * prm["tube"]
        if k == "box":
            a, b, c = prm["half_extents"]
            return 8 * (a * b + b * c + a * c)
        if k == "capsule":
            a, h = prm["radius"], prm["half_length"]
            return 4 * math.pi * a * a + 4 * math.pi * a * h
        raise InvalidArgumentError(f"unknown surface kind {k!r}")


def point_to_surface(points, surface: AnalyticSurface):
    """Exact unsigned distances and their mean."""
    pts = points.points if isinstance(points, PointCloud) else points
    d = surface.distance(pts)
    return d, float(d.mean())


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    params: dict = field(default_factory=dict)
    count: int = 2048
    sampler: str = "uniform-area"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise InvalidArgumentError(f"unknown shape kind {self.kind!r}")
        if self.sampler not in SAMPLERS:
            raise InvalidArgumentError(f"unknown sampler {self.sampler!r}")
        if self.count < 16:
            raise InvalidArgumentError("sample count must be >= 16")
        merged = {**DEFAULT_PARAMS[self.kind], **self.params}
        for key, val in merged.items():
            if np.any(np.asarray(val) <= 0):
                raise InvalidArgumentError(f"shape parameter {key} must be positive")
        object.__setattr__(self, "params", merged)


DEFAULT_PARAMS = {
    "sphere": {"radius": 1.0},
    "torus": {"radius": 0.7, "tube": 0.3},
    "box": {"half_extents": (0.6, 0.5, 0.4)},
    "capsule": {"radius": 0.35, "half_length": 0.55},
}


def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _sample_uniform(kind, prm, n, rng):
    if kind == "sphere":
        return _unit_vectors(rng, n) * prm["radius"]
    if kind == "torus":
        big, tube = prm["radius"], prm["tube"]
        out = np.empty((0, 3))
        while len(out) < n:
            m = 2 * (n - len(out)) + 16
            theta = rng.uniform(0, 2 * math.pi, m)
            phi = rng.uniform(0, 2 * math.pi, m)
            # area element is proportional to (R + r cos theta)
            keep = rng.uniform(0, big + tube, m) < big + tube * np.cos(theta)
            theta, phi = theta[keep], phi[keep]
            ring = big + tube * np.cos(theta)
            pts = np.stack([ring * np.cos(phi), ring * np.sin(phi), tube * np.sin(theta)], axis=1)
            out = np.concatenate([out, pts])
        return out[:n]
    if kind == "box":
        hx = np.asarray(prm["half_extents"], dtype=np.float64)
        # faces normal to axis a have area 4 * h_b * h_c
        face_area = np.array([hx[1] * hx[2], hx[0] * hx[2], hx[0] * hx[1]])
        axis = rng.choice(3, size=n, p=face_area / face_area.sum())
        sign = np.where(rng.uniform(size=n) < 0.5, -1.0, 1.0)
        pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * hx
        pts[np.arange(n), axis] = sign * hx[axis]
        return pts
    if kind == "capsule":
        a, h = prm["radius"], prm["half_length"]
        cyl_area, cap_area = 4 * math.pi * a * h, 4 * math.pi * a * a
        on_cyl = rng.uniform(size=n) < cyl_area / (cyl_area + cap_area)
        pts = np.empty((n, 3))
        nc = int(on_cyl.sum())
        phi = rng.uniform(0, 2 * math.pi, nc)
        pts[on_cyl] = np.stack([a * np.cos(phi), a * np.sin(phi), rng.uniform(-h, h, nc)], axis=1)
        ns = n - nc
        u = _unit_vectors(rng, ns) * a
        u[:, 2] += np.where(u[:, 2] >= 0, h, -h)
        pts[~on_cyl] = u
        return pts
    raise InvalidArgumentError(f"unknown shape kind {kind!r}")


def make_surface(spec: ShapeSpec) -> AnalyticSurface:
    return AnalyticSurface(spec.kind, dict(spec.params))


def sample_shape(spec: ShapeSpec, with_mesh=False, mesh_resolution=64):
    """Sample ``spec.count`` surface points; returns (cloud, surface, mesh or None).

    ``stratified`` oversamples 4x uniformly and keeps a farthest-point subset,
    giving an even, blue-noise-like spacing.
    """
    rng = make_rng(spec.seed)
    if spec.sampler == "uniform-area":
        pts = _sample_uniform(spec.kind, spec.params, spec.count, rng)
    else:
        dense = _sample_uniform(spec.kind, spec.params, 4 * spec.count, rng)
        pts = dense[np.sort(farthest_point_sample(dense, spec.count))]
    surface = make_surface(spec)
    mesh = mesh_shape(surface, mesh_resolution) if with_mesh else None
    return PointCloud(pts), surface, mesh


# -- meshes ----------------------------------------------------------------------


def _grid_faces(rows, cols, wrap_cols=True, wrap_rows=False):
    faces = []
    r_lim = rows if wrap_rows else rows - 1
    c_lim = cols if wrap_cols else cols - 1
    for i in range(r_lim):
        for j in range(c_lim):
            a = i * cols + j
            b = i * cols + (j + 1) % cols
            c = ((i + 1) % rows) * cols + j
            d = ((i + 1) % rows) * cols + (j + 1) % cols
            faces.append((a, c, b))
            faces.append((b, c, d))
    return np.array(faces, dtype=np.int64)


def icosphere(radius=1.0, subdivisions=4):
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleMesh(np.array(verts) * radius, np.array(faces))


def mesh_shape(surface: AnalyticSurface, resolution=64) -> TriangleMesh:
    """Triangle mesh with every vertex on the analytic surface."""
    k, prm = surface.kind, surface.params
    if k == "sphere":
        level = max(1, int(round(math.log2(max(resolution, 2) / 4))))
        return icosphere(prm["radius"], level)
    if k == "torus":
        big, tube = prm["radius"], prm["tube"]
        rows, cols = resolution, max(8, resolution // 2)
        phi = np.linspace(0, 2 * math.pi, rows, endpoint=False)
        theta = np.linspace(0, 2 * math.pi, cols, endpoint=False)
        pp, tt = np.meshgrid(phi, theta, indexing="ij")
        ring = big + tube * np.cos(tt)
        v = np.stack([ring * np.cos(pp), ring * np.sin(pp), tube * np.sin(tt)], axis=-1).reshape(-1, 3)
        return TriangleMesh(v, _grid_faces(rows, cols, wrap_cols=True, wrap_rows=True))
    if k == "box":
        return _box_mesh(np.asarray(prm["half_extents"], dtype=np.float64), max(2, resolution // 8))
    if k == "capsule":
        return _capsule_mesh(prm["radius"], prm["half_length"], resolution)
    raise InvalidArgumentError(f"unknown surface kind {k!r}")


def _box_mesh(hx, n):
    verts, faces = [], []
    lin = np.linspace(-1.0, 1.0, n + 1)
    for axis in range(3):
        u_ax, v_ax = [a for a in range(3) if a != axis]
        for sign in (-1.0, 1.0):
            uu, vv = np.meshgrid(lin, lin, indexing="ij")
            p = np.zeros((n + 1, n + 1, 3))
            p[..., axis] = sign
            p[..., u_ax] = uu
            p[..., v_ax] = vv
            base = sum(len(x) for x in verts)
            verts.append((p * hx).reshape(-1, 3))
            f = _grid_faces(n + 1, n + 1, wrap_cols=False) + base
            faces.append(f)
    v = np.concatenate(verts)
    # weld shared edge vertices
    key = np.round(v, 12)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    f = inverse.reshape(-1)[np.concatenate(faces)]
    return TriangleMesh(uniq, f)


def _capsule_mesh(a, h, resolution):
    cols = max(8, resolution)
    ring_steps = max(4, resolution // 4)
    # latitude angles from the south pole to the north pole, with a seam at the equator of each cap
    south = np.linspace(-math.pi / 2, 0.0, ring_steps + 1)[1:]
    north = np.linspace(0.0, math.pi / 2, ring_steps + 1)[:-1]
    rings = [(math.cos(t) * a, math.sin(t) * a - h) for t in south]
    rings += [(math.cos(t) * a, math.sin(t) * a + h) for t in north]
    phi = np.linspace(0, 2 * math.pi, cols, endpoint=False)
    verts = [np.array([0.0, 0.0, -h - a])]
    for rad, z in rings:
        verts.append(np.stack([rad * np.cos(phi), rad * np.sin(phi), np.full(cols, z)], axis=1))
    verts.append(np.array([0.0, 0.0, h + a]))
    v = np.concatenate([np.atleast_2d(x) for x in verts])
    faces = []
    nr = len(rings)
    for j in range(cols):
        faces.append((0, 1 + (j + 1) % cols, 1 + j))
    body = _grid_faces(nr, cols, wrap_cols=True) + 1
    faces = np.concatenate([np.array(faces), body])
    top = len(v) - 1
    last = 1 + (nr - 1) * cols
    cap = [(top, last + j, last + (j + 1) % cols) for j in range(cols)]
    return TriangleMesh(v, np.concatenate([faces, np.array(cap)]))
