"""Chamfer, Hausdorff and point-to-mesh distances, plus report formatting."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInputError
from .geometry import PointCloud, SpatialIndex, normalize_unit_sphere
from .shapes import AnalyticSurface, TriangleMesh, point_to_surface

# reporting multipliers used in printed tables
CD_SCALE = 1e4
HD_SCALE = 1e3
P2M_SCALE = 1e5


def _pts(x):
    pts = x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise InvalidInputError("metric needs a non-empty point cloud")
    return pts


def nn_distances(src, dst):
    """Distance from every point of ``src`` to its nearest point in ``dst``."""
    _, d = SpatialIndex(_pts(dst)).knn_batch(_pts(src), 1)
    return d[:, 0]


def chamfer(x, y):
    """Mean squared NN distance X->Y plus the same Y->X."""
    a, b = nn_distances(x, y), nn_distances(y, x)
    return float((a * a).mean() + (b * b).mean())


def hausdorff(x, y):
    """Symmetric Hausdorff distance (unsquared)."""
    return float(max(nn_distances(x, y).max(), nn_distances(y, x).max()))


def closest_point_on_triangles(p, a, b, c):
    """Closest point to ``p`` on each triangle (a, b, c); all arrays (M, 3).

    Voronoi-region case analysis on barycentric coordinates.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def assign(mask, value):
        m = mask & ~done
        out[m] = value[m]
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), a)
        assign((d3 >= 0) & (d4 <= d3), b)
        v = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[:, None] * ab)
        assign((d6 >= 0) & (d5 <= d6), c)
        w = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[:, None] * ac)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        assign(np.ones(len(p), dtype=bool), a + v[:, None] * ab + w[:, None] * ac)
    return out


def point_triangle_sqdist(p, a, b, c):
    q = closest_point_on_triangles(p, a, b, c)
    d = p - q
    return (d * d).sum(-1)


def point_to_mesh_distances(x, mesh: TriangleMesh):
    """Exact squared distance from each point to the nearest triangle.

    Candidate faces are those whose centroid lies within (nearest-vertex
    distance + largest face circumradius); every candidate is then evaluated
    exactly, so the pruning never changes the result.
    """
    pts = _pts(x)
    if len(mesh.faces) == 0:
        raise InvalidInputError("mesh has no faces")
    v, f = mesh.vertices, mesh.faces
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    cen = (a + b + c) / 3.0
    reach = np.sqrt(np.maximum.reduce([((a - cen) ** 2).sum(1), ((b - cen) ** 2).sum(1), ((c - cen) ** 2).sum(1)]))
    used = np.unique(f)
    _, vd = SpatialIndex(v[used]).knn_batch(pts, 1)
    bound = vd[:, 0] + reach.max() + 1e-12
    cen_tree = cKDTree(cen)
    out = np.empty(len(pts))
    for i, p in enumerate(pts):
        cand = np.asarray(cen_tree.query_ball_point(p, bound[i]), dtype=np.int64)
        pp = np.broadcast_to(p, (len(cand), 3))
        out[i] = point_triangle_sqdist(pp, a[cand], b[cand], c[cand]).min()
    return out


def point_to_mesh(x, mesh: TriangleMesh):
    """Mean squared point-to-mesh distance (points to mesh only)."""
    return float(point_to_mesh_distances(x, mesh).mean())


def evaluate(pred, gt, mesh=None, surface=None, normalize=True):
    """CD / HD (and P2M when a mesh or analytic surface is given).

    With ``normalize`` each cloud is mapped into the unit sphere on its own;
    the mesh/surface follows the ground truth's normalization.
    """
    pred = pred if isinstance(pred, PointCloud) else PointCloud(pred)
    gt = gt if isinstance(gt, PointCloud) else PointCloud(gt)
    if normalize:
        gt_n = normalize_unit_sphere(PointCloud(gt.points))
        pred_n = normalize_unit_sphere(PointCloud(pred.points))
        tf = gt_n.transform
    else:
        gt_n, pred_n, tf = gt, pred, None
    out = {"cd": chamfer(pred_n, gt_n), "hd": hausdorff(pred_n, gt_n)}
    if mesh is not None:
        m = mesh.transformed(tf.apply) if tf is not None else mesh
        out["p2m"] = point_to_mesh(pred_n, m)
    elif surface is not None:
        # map predictions back into the surface's frame, then rescale the squared distance
        pts = tf.invert(pred_n.points) if tf is not None else pred_n.points
        d, _ = point_to_surface(pts, surface)
        s = tf.scale if tf is not None else 1.0
        out["p2m"] = float(((d / s) ** 2).mean())
    return out


def format_report(metrics, machine=False):
    """Plain table (scaled like published tables) or ``name<TAB>value`` lines."""
    scaled = []
    if "cd" in metrics:
        scaled.append(("CD(x1e4)", metrics["cd"] * CD_SCALE))
    if "hd" in metrics:
        scaled.append(("HD(x1e3)", metrics["hd"] * HD_SCALE))
    if "p2m" in metrics:
        scaled.append(("P2M(x1e5)", metrics["p2m"] * P2M_SCALE))
    if machine:
        return "\n".join(f"{name}\t{val:.10g}" for name, val in scaled)
    width = max(len(n) for n, _ in scaled)
    return "\n".join(f"{name:<{width}} {val:.6f}" for name, val in scaled)
