"""Triangle meshes: sampling and exact proximity queries.

The closest-point kernels are vectorized versions of the standard
constructions (Ericson, *Real-Time Collision Detection*): point/triangle,
segment/segment and segment/triangle intersection. Broad phases use a
k-d tree over triangle centroids with a conservative radius, so every query
is exact.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import DegenerateMesh, InputError
from .geometry import RigidTransform
from .validation import check_count, check_points


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        vertices = check_points(self.vertices, "vertices")
        faces = np.asarray(self.faces)
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise InputError(f"faces must have shape (f, 3), got {faces.shape}")
        if not np.issubdtype(faces.dtype, np.integer):
            raise InputError("faces must be integer indices")
        faces = faces.astype(np.int64)
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise InputError("face index out of range")
        if np.any(
            (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
        ):
            raise InputError("degenerate face (repeated vertex index)")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", np.ascontiguousarray(faces))

    @property
    def triangles(self):
        return self.vertices[self.faces]

    def face_areas(self):
        tri = self.triangles
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def transformed(self, transform: RigidTransform):
        return TriMesh(transform.apply(self.vertices), self.faces)

    def bbox_diagonal(self):
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))


def concatenate(meshes):
    """Merge meshes into one (components stay disjoint in connectivity)."""
    vertices, faces, offset = [], [], 0
    for m in meshes:
        vertices.append(m.vertices)
        faces.append(m.faces + offset)
        offset += len(m.vertices)
    return TriMesh(np.concatenate(vertices), np.concatenate(faces))


def is_watertight(mesh):
    """True when every undirected edge is shared by exactly two faces."""
    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges.sort(axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool(len(counts) and np.all(counts == 2))


def _area_weighted(mesh, n, rng, cdf):
    face = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    face = np.minimum(face, len(cdf) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.triangles[face]
    pts = (
        (1 - r1)[:, None] * tri[:, 0]
        + (r1 * (1 - r2))[:, None] * tri[:, 1]
        + (r1 * r2)[:, None] * tri[:, 2]
    )
    return pts, face


def sample_surface_even(mesh, n, seed=None, oversample=3):
    """Draw exactly ``n`` near-uniformly spread surface points.

    Area-weighted candidates are thinned greedily so no two accepted points
    are closer than ``sqrt(area / n) / 2``; if thinning leaves fewer than
    ``n`` points the rest are plain area-weighted samples.

    Returns
    -------
    points : ndarray of shape (n, 3)
    faces : ndarray of shape (n,)
        Index of the face each sample lies on.
    """
    n = check_count(n, "n")
    areas = mesh.face_areas()
    total = float(areas.sum())
    if not total > 0:
        raise DegenerateMesh("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas)
    cand, cand_face = _area_weighted(mesh, oversample * n, rng, cdf)
    radius = np.sqrt(total / n) / 2
    neighbors = cKDTree(cand).query_ball_point(cand, radius, workers=1)
    accepted = np.zeros(len(cand), dtype=bool)
    for i, nbrs in enumerate(neighbors):
        if not accepted[nbrs].any():
            accepted[i] = True
    keep = np.flatnonzero(accepted)[:n]
    points, faces = cand[keep], cand_face[keep]
    if len(points) < n:
        extra, extra_face = _area_weighted(mesh, n - len(points), rng, cdf)
        points = np.concatenate([points, extra])
        faces = np.concatenate([faces, extra_face])
    return points, faces


# ----------------------------------------------------------------------------
# exact kernels (all arguments are stacked arrays, evaluated row by row)


def _dot(a, b):
    return np.einsum("ij,ij->i", a, b)


def closest_point_triangle(p, a, b, c):
    """Closest point to ``p[i]`` on triangle ``(a[i], b[i], c[i])``."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    bp = p - b
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    cp = p - c
    d5, d6 = _dot(ab, cp), _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(p)
    done = np.zeros(len(p), dtype=bool)

    def assign(mask, value):
        m = mask & ~done
        out[m] = value[m] if value.ndim == 2 else value
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


def closest_points_segments(p1, q1, p2, q2):
    """Closest points between segments ``p1q1`` and ``p2q2`` (row-wise)."""
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a, e, f = _dot(d1, d1), _dot(d2, d2), _dot(d2, r)
    c, b = _dot(d1, r), _dot(d1, d2)
    denom = a * e - b * b
    tiny = 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(denom > tiny, np.clip((b * f - c * e) / denom, 0, 1), 0.0)
        t = np.where(e > tiny, (b * s + f) / e, 0.0)
        lo, hi = t < 0, t > 1
        s = np.where(lo, np.where(a > tiny, np.clip(-c / a, 0, 1), 0.0), s)
        s = np.where(hi, np.where(a > tiny, np.clip((b - c) / a, 0, 1), 0.0), s)
        t = np.clip(t, 0, 1)
    return p1 + s[:, None] * d1, p2 + t[:, None] * d2


def segment_triangle_intersection(p, q, a, b, c):
    """Intersection points of segments ``pq`` with triangles, plus a hit mask."""
    d = q - p
    e1, e2 = b - a, c - a
    h = np.cross(d, e2)
    det = _dot(e1, h)
    ok = np.abs(det) > 1e-18
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(ok, 1.0 / det, 0.0)
        s = p - a
        u = inv * _dot(s, h)
        qv = np.cross(s, e1)
        v = inv * _dot(d, qv)
        t = inv * _dot(e2, qv)
    hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t >= 0) & (t <= 1)
    return p + t[:, None] * d, hit


def triangle_pair_candidates(ta, tb):
    """Candidate closest-point pairs between triangles ``ta[i]`` and ``tb[i]``.

    The minimum over the returned pairs is the exact triangle-triangle
    distance. Returns ``(pa, pb)`` of shape ``(k, n, 3)`` with ``k = 21``:
    vertex/face in both directions, the nine edge/edge pairs and the six
    edge/face crossings (crossings that miss are replaced by a vertex pair).
    """
    out_a, out_b = [], []
    for i in range(3):
        out_a.append(closest_point_triangle(tb[:, i], ta[:, 0], ta[:, 1], ta[:, 2]))
        out_b.append(tb[:, i])
        out_a.append(ta[:, i])
        out_b.append(closest_point_triangle(ta[:, i], tb[:, 0], tb[:, 1], tb[:, 2]))
    for i in range(3):
        for j in range(3):
            pa, pb = closest_points_segments(
                ta[:, i], ta[:, (i + 1) % 3], tb[:, j], tb[:, (j + 1) % 3]
            )
            out_a.append(pa)
            out_b.append(pb)
    for i in range(3):
        x, hit = segment_triangle_intersection(
            ta[:, i], ta[:, (i + 1) % 3], tb[:, 0], tb[:, 1], tb[:, 2]
        )
        out_a.append(np.where(hit[:, None], x, ta[:, i]))
        out_b.append(np.where(hit[:, None], x, out_b[2 * i + 1]))
        x, hit = segment_triangle_intersection(
            tb[:, i], tb[:, (i + 1) % 3], ta[:, 0], ta[:, 1], ta[:, 2]
        )
        out_a.append(np.where(hit[:, None], x, out_a[2 * i]))
        out_b.append(np.where(hit[:, None], x, tb[:, i]))
    return np.stack(out_a), np.stack(out_b)


def _face_spheres(mesh):
    tri = mesh.triangles
    centers = tri.mean(axis=1)
    radii = np.linalg.norm(tri - centers[:, None], axis=2).max(axis=1)
    return centers, radii


def closest_points_on_mesh(points, mesh):
    """Exact closest surface point for each query.

    Returns
    -------
    closest : ndarray (n, 3)
    distance : ndarray (n,)
    face : ndarray (n,)
    """
    points = check_points(points, "points")
    centers, radii = _face_spheres(mesh)
    r_max = float(radii.max())
    # Nearest vertex distance bounds the surface distance from above.
    upper, _ = cKDTree(mesh.vertices).query(points)
    lists = cKDTree(centers).query_ball_point(points, upper + r_max + 1e-12, workers=1)
    counts = np.fromiter((len(c) for c in lists), dtype=np.intp, count=len(lists))
    qi = np.repeat(np.arange(len(points)), counts)
    fi = np.fromiter((f for c in lists for f in c), dtype=np.intp, count=int(counts.sum()))
    tri = mesh.triangles[fi]
    cp = closest_point_triangle(points[qi], tri[:, 0], tri[:, 1], tri[:, 2])
    d2 = np.sum((cp - points[qi]) ** 2, axis=1)
    order = np.lexsort((fi, d2, qi))
    first = np.r_[0, np.flatnonzero(np.diff(qi[order])) + 1]
    best = order[first]
    return cp[best], np.sqrt(d2[best]), fi[best]


def winding_number(points, mesh, block=1 << 18):
    """Generalized winding number of a closed mesh at each query point."""
    points = check_points(points, "points")
    tri = mesh.triangles
    out = np.empty(len(points))
    step = max(1, block // max(len(tri), 1))
    for s in range(0, len(points), step):
        q = points[s : s + step]
        a = tri[None, :, 0] - q[:, None]
        b = tri[None, :, 1] - q[:, None]
        c = tri[None, :, 2] - q[:, None]
        la, lb, lc = (np.linalg.norm(x, axis=2) for x in (a, b, c))
        det = np.einsum("ijk,ijk->ij", a, np.cross(b, c))
        den = (
            la * lb * lc
            + np.einsum("ijk,ijk->ij", a, b) * lc
            + np.einsum("ijk,ijk->ij", b, c) * la
            + np.einsum("ijk,ijk->ij", c, a) * lb
        )
        out[s : s + step] = np.arctan2(det, den).sum(axis=1) / (2 * np.pi)
    return out


def contains(mesh, points):
    return winding_number(points, mesh) > 0.5


def signed_distance(points, mesh):
    """Distance to the surface, negative inside a closed mesh."""
    _, d, _ = closest_points_on_mesh(points, mesh)
    return np.where(contains(mesh, points), -d, d)


def proximity_pairs(mesh_a, mesh_b, eps):
    """Closest-point pairs between the two surfaces with separation ``<= eps``.

    For every triangle pair that can come within ``eps`` the candidate
    points of :func:`triangle_pair_candidates` are kept when their distance
    is at most ``eps``. Duplicate pairs are removed.

    Returns
    -------
    pa, pb : ndarray (k, 3)
        Points on ``mesh_a`` and ``mesh_b``.
    dist : ndarray (k,)
    min_distance : float
        Smallest triangle-pair distance among broad-phase candidates
        (``inf`` when no triangles are within range). When no pair is
        within ``eps`` this is only an upper bound on the true separation.
    """
    ca, ra = _face_spheres(mesh_a)
    cb, rb = _face_spheres(mesh_b)
    reach = float(ra.max() + rb.max() + eps)
    pairs = cKDTree(ca).query_ball_tree(cKDTree(cb), reach)
    ia = np.repeat(np.arange(len(pairs)), [len(p) for p in pairs])
    ib = np.fromiter((j for p in pairs for j in p), dtype=np.intp, count=len(ia))
    if len(ia):
        gap = np.linalg.norm(ca[ia] - cb[ib], axis=1) - ra[ia] - rb[ib]
        keep = gap <= eps
        ia, ib = ia[keep], ib[keep]
    empty = np.zeros((0, 3))
    if not len(ia):
        return empty, empty, np.zeros(0), float("inf")
    pa, pb = triangle_pair_candidates(mesh_a.triangles[ia], mesh_b.triangles[ib])
    pa, pb = pa.reshape(-1, 3), pb.reshape(-1, 3)
    dist = np.linalg.norm(pa - pb, axis=1)
    min_distance = float(dist.min())
    keep = dist <= eps
    pa, pb, dist = pa[keep], pb[keep], dist[keep]
    if not len(pa):
        return empty, empty, np.zeros(0), min_distance
    key = np.round(np.hstack([pa, pb]), 12)
    _, first = np.unique(key, axis=0, return_index=True)
    first.sort()
    return pa[first], pb[first], dist[first], min_distance
