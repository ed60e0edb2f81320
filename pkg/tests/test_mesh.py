import numpy as np
import pytest
from conftest import box_mesh

from iwarp.exceptions import DegenerateMesh, InputError
from iwarp.geometry import RigidTransform, random_rotation
from iwarp.mesh import (
    TriMesh,
    closest_point_triangle,
    closest_points_on_mesh,
    closest_points_segments,
    concatenate,
    contains,
    is_watertight,
    proximity_pairs,
    sample_surface_even,
    signed_distance,
    triangle_pair_candidates,
    winding_number,
)
from iwarp.synthetic import CATEGORIES, generate_family, make_gripper, signed_volume

TET = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]), np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]))


def projection_distance(p, tri):
    """Distance to a triangle via plane projection, else the nearest clamped edge point."""
    a, b, c = tri
    M = np.stack([b - a, c - a], axis=1)
    uv, *_ = np.linalg.lstsq(M, p - a, rcond=None)
    if uv.min() >= 0 and uv.sum() <= 1:
        return float(np.linalg.norm(a + M @ uv - p))
    best = np.inf
    for s, e in ((a, b), (b, c), (c, a)):
        t = np.clip(np.dot(p - s, e - s) / np.dot(e - s, e - s), 0, 1)
        best = min(best, float(np.linalg.norm(s + t * (e - s) - p)))
    return best


def test_trimesh_validation():
    with pytest.raises(InputError):
        TriMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))
    with pytest.raises(InputError):
        TriMesh(np.zeros((3, 3)), np.array([[0, 1, 1]]))
    with pytest.raises(InputError):
        TriMesh(np.zeros((3, 3)), np.array([[0.0, 1, 2]]))


def test_tetrahedron_basics():
    assert is_watertight(TET)
    assert signed_volume(TET.vertices, TET.faces) == pytest.approx(1 / 6)
    assert not is_watertight(TriMesh(TET.vertices, TET.faces[:3]))
    both = concatenate([TET, TET.transformed(RigidTransform(np.eye(3), [5, 0, 0]))])
    assert is_watertight(both) and len(both.vertices) == 8


@pytest.mark.parametrize("category", CATEGORIES)
def test_synthetic_families_are_closed(category):
    meshes, _ = generate_family(category, 3, seed=1)
    for m in meshes:
        assert is_watertight(m)
        assert signed_volume(m.vertices, m.faces) > 0


def test_gripper_is_closed():
    g = make_gripper(0.01)
    assert is_watertight(g)
    assert signed_volume(g.vertices, g.faces) > 0


def test_closest_point_triangle_against_optimizer(rng):
    for _ in range(40):
        tri = rng.normal(size=(3, 3))
        p = rng.normal(scale=2, size=3)
        cp = closest_point_triangle(p[None], tri[None, 0], tri[None, 1], tri[None, 2])[0]
        assert np.linalg.norm(cp - p) == pytest.approx(projection_distance(p, tri), abs=1e-12)


def test_closest_points_segments_against_grid(rng):
    for _ in range(40):
        p1, q1, p2, q2 = rng.normal(size=(4, 3))
        a, b = closest_points_segments(p1[None], q1[None], p2[None], q2[None])
        s = np.linspace(0, 1, 401)
        A = p1 + s[:, None] * (q1 - p1)
        B = p2 + s[:, None] * (q2 - p2)
        brute = np.linalg.norm(A[:, None] - B[None], axis=2).min()
        d = np.linalg.norm(a - b)
        assert d <= brute + 1e-12
        assert d >= brute - 1e-2


def test_triangle_pair_distance_against_sampling(rng):
    n = 60
    ta = rng.normal(size=(n, 3, 3))
    tb = rng.normal(size=(n, 3, 3)) + rng.normal(scale=2, size=(n, 1, 3))
    pa, pb = triangle_pair_candidates(ta, tb)
    assert pa.shape == (21, n, 3)
    d = np.linalg.norm(pa - pb, axis=2).min(axis=0)
    uv = np.array([(u, v) for u in np.linspace(0, 1, 25) for v in np.linspace(0, 1, 25) if u + v <= 1])
    for i in range(n):
        A = ta[i, 0] + uv[:, :1] * (ta[i, 1] - ta[i, 0]) + uv[:, 1:] * (ta[i, 2] - ta[i, 0])
        B = tb[i, 0] + uv[:, :1] * (tb[i, 1] - tb[i, 0]) + uv[:, 1:] * (tb[i, 2] - tb[i, 0])
        brute = np.linalg.norm(A[:, None] - B[None], axis=2).min()
        assert d[i] <= brute + 1e-12
        # the sampled minimum can only overestimate
        assert d[i] >= brute - 0.15


def test_intersecting_triangles_have_zero_distance():
    ta = np.array([[[-1, -1, 0], [1, -1, 0], [0, 1, 0.0]]])
    tb = np.array([[[0, 0, -1], [0.2, 0, 1], [0, 0.2, 1.0]]])
    pa, pb = triangle_pair_candidates(ta, tb)
    assert np.linalg.norm(pa - pb, axis=2).min() < 1e-12


def test_closest_points_on_mesh_matches_exhaustive(rng, mug_family):
    mesh = mug_family[0][0]
    q = rng.uniform(mesh.vertices.min(0) - 0.02, mesh.vertices.max(0) + 0.02, size=(150, 3))
    _, dist, face = closest_points_on_mesh(q, mesh)
    tri = mesh.triangles
    for i in range(len(q)):
        cp = closest_point_triangle(np.repeat(q[i : i + 1], len(tri), 0), tri[:, 0], tri[:, 1], tri[:, 2])
        dd = np.linalg.norm(cp - q[i], axis=1)
        assert dist[i] == pytest.approx(dd.min(), abs=1e-15)


def test_winding_number_box():
    box = box_mesh([0, 0, 0], [1, 2, 3], 2)
    inside = np.array([[0.5, 1, 1.5], [0.01, 0.01, 0.01]])
    outside = np.array([[2, 1, 1], [-0.01, 1, 1]])
    np.testing.assert_allclose(winding_number(inside, box), 1.0, atol=1e-10)
    np.testing.assert_allclose(winding_number(outside, box), 0.0, atol=1e-10)
    assert contains(box, inside).all() and not contains(box, outside).any()


def test_signed_distance_box_analytic(rng):
    lo, hi = np.zeros(3), np.array([1.0, 2.0, 3.0])
    box = box_mesh(lo, hi, 3)
    q = rng.uniform(-1, 4, size=(300, 3))
    # Analytic signed distance of an axis-aligned box.
    c, h = (lo + hi) / 2, (hi - lo) / 2
    d = np.abs(q - c) - h
    ref = np.linalg.norm(np.maximum(d, 0), axis=1) + np.minimum(d.max(1), 0)
    np.testing.assert_allclose(signed_distance(q, box), ref, atol=1e-12)


def test_sample_surface_even(mug_family):
    mesh = mug_family[0][0]
    pts, faces = sample_surface_even(mesh, 500, seed=4)
    assert pts.shape == (500, 3)
    _, d, _ = closest_points_on_mesh(pts, mesh)
    assert d.max() < 1e-12
    again, _ = sample_surface_even(mesh, 500, seed=4)
    np.testing.assert_array_equal(pts, again)
    # the thinning radius is respected by the accepted (first) samples
    r = np.sqrt(mesh.face_areas().sum() / 500) / 2
    dd = np.linalg.norm(pts[:100, None] - pts[None, :100], axis=2) + np.eye(100)
    assert dd.min() >= r


def test_sample_surface_zero_area():
    flat = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]]), np.array([[0, 1, 2]]))
    with pytest.raises(DegenerateMesh):
        sample_surface_even(flat, 10)


def test_proximity_pairs_between_boxes():
    a = box_mesh([0, 0, 0], [1, 1, 1], 2)
    gap = 5e-4
    b = box_mesh([1 + gap, 0.25, 0.25], [2, 0.75, 0.75], 2)
    pa, pb, dist, dmin = proximity_pairs(a, b, 1e-3)
    assert dmin == pytest.approx(gap, abs=1e-12)
    assert len(pa) > 0
    np.testing.assert_allclose(pa[:, 0], 1.0, atol=1e-12)
    np.testing.assert_allclose(pb[:, 0], 1 + gap, atol=1e-12)
    np.testing.assert_allclose(dist, gap, atol=1e-12)
    far = box_mesh([1.01, 0, 0], [2, 1, 1])
    pa, _, _, dmin = proximity_pairs(a, far, 1e-3)
    assert len(pa) == 0 and dmin == pytest.approx(0.01, abs=1e-12)


def test_proximity_pairs_rigid_invariance(rng):
    a = box_mesh([0, 0, 0], [1, 1, 1], 2)
    b = box_mesh([1.0002, 0.1, 0.1], [2, 0.9, 0.9], 2)
    T = RigidTransform(random_rotation(rng), rng.normal(size=3))
    pa, pb, _, d0 = proximity_pairs(a, b, 1e-3)
    qa, qb, _, d1 = proximity_pairs(a.transformed(T), b.transformed(T), 1e-3)
    assert d0 == pytest.approx(d1, abs=1e-12)
    assert len(pa) == len(qa)
