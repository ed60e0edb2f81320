import numpy as np
import pytest
from sklearn.base import clone

from iwarp.cpd import CpdConfig, cpd_register
from iwarp.exceptions import DegenerateMesh, InputError, LatentDimMismatch, LatentDimTooLarge
from iwarp.geometry import RigidTransform, one_sided_chamfer, random_rotation
from iwarp.mesh import TriMesh, sample_surface_even
from iwarp.warp import (
    CanonicalObject,
    ShapeParams,
    WarpModel,
    WarpSpace,
    fit_pca,
    learn_warp_space,
    raw_cost_table,
    select_canonical_approximate,
    select_canonical_exhaustive,
    warp_cost_table,
)

FAST = CpdConfig(max_iters=30)


@pytest.fixture(scope="module")
def tiny(mug_family):
    meshes, _ = mug_family
    space, disps, others = learn_warp_space(
        meshes[:4], 3, FAST, "exhaustive", seed=1, n_object_samples=150, n_canonical_samples=150, keep_displacements=True
    )
    return meshes[:4], space, disps, others


def random_space(rng, n=20, d=3):
    canon = CanonicalObject(rng.normal(size=(n, 3)), 4, np.array([[0, 1, 2], [0, 2, 3]]))
    basis, _ = np.linalg.qr(rng.normal(size=(3 * n, d)))
    return WarpSpace(canon, basis, rng.normal(size=3 * n) * 0.1)


def test_decode_matches_explicit_formula(rng):
    space = random_space(rng)
    p = ShapeParams(rng.normal(size=3), rng.uniform(0.5, 2, 3), random_rotation(rng), rng.normal(size=3))
    warped = space.canonical.points + (space.mean + space.basis @ p.v).reshape(-1, 3)
    expected = np.array([p.R @ (x * p.s) + p.t for x in warped])
    np.testing.assert_allclose(space.decode(p), expected, atol=1e-13)


def test_decode_is_affine_in_latent(rng):
    space = random_space(rng)
    v1, v2 = rng.normal(size=3), rng.normal(size=3)
    d = lambda v: space.warped_points(v)  # noqa: E731
    np.testing.assert_allclose(d(v1 + v2) - d(np.zeros(3)), (d(v1) - d(np.zeros(3))) + (d(v2) - d(np.zeros(3))), atol=1e-10)


def test_shape_params_validation(rng):
    with pytest.raises(InputError):
        ShapeParams(np.zeros(2), s=[1, 0, 1])
    with pytest.raises(InputError):
        ShapeParams(np.array([np.nan]))
    space = random_space(rng)
    with pytest.raises(LatentDimMismatch):
        space.decode(ShapeParams(np.zeros(5)))


def test_fit_pca_against_covariance_eigendecomposition(rng):
    data = rng.normal(size=(7, 30)) @ rng.normal(size=(30, 30))
    basis, mean, sv, total = fit_pca(data, 4)
    centered = data - data.mean(0)
    w, V = np.linalg.eigh(centered.T @ centered)
    order = np.argsort(w)[::-1][:4]
    np.testing.assert_allclose(sv**2, w[order], rtol=1e-9)
    # same subspace, up to per-column sign
    np.testing.assert_allclose(np.abs(basis.T @ V[:, order]), np.eye(4), atol=1e-8)
    np.testing.assert_allclose(basis.T @ basis, np.eye(4), atol=1e-12)
    assert total == pytest.approx(np.sum(w), rel=1e-9)
    pivots = np.argmax(np.abs(basis), axis=0)
    assert np.all(basis[pivots, np.arange(4)] > 0)


def test_training_displacements_reconstruct_exactly(tiny):
    _, space, disps, _ = tiny
    # d = K - 1 spans all centered displacements
    for D in disps:
        v = space.encode(D)
        back = space.warped_points(v) - space.canonical.points
        assert np.sqrt(np.mean((back - D) ** 2)) < 1e-10


def test_canonical_layout_and_mesh(tiny):
    meshes, space, _, _ = tiny
    C = space.meta["canonical_index"]
    V = space.canonical.vertex_count
    np.testing.assert_array_equal(space.canonical.points[:V], meshes[C].vertices)
    p = ShapeParams(np.zeros(3))
    mesh = space.reconstruct_mesh(p)
    np.testing.assert_array_equal(mesh.vertices, space.decode(p)[:V])
    np.testing.assert_array_equal(mesh.faces, meshes[C].faces)


def test_exhaustive_selection_matches_manual_table(mug_family):
    meshes, _ = mug_family
    clouds = [sample_surface_even(m, 80, s)[0] for s, m in enumerate(meshes[:3])]
    table = warp_cost_table(clouds, FAST)
    manual = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            if i != j:
                manual[i, j] = one_sided_chamfer(clouds[i] + cpd_register(clouds[i], clouds[j], FAST).displacement, clouds[j])
    np.testing.assert_array_equal(table, manual)
    assert select_canonical_exhaustive(clouds, FAST) == int(np.argmin(manual.sum(1)))
    raw = raw_cost_table(clouds)
    assert raw[0, 1] == one_sided_chamfer(clouds[0], clouds[1])
    assert select_canonical_approximate(clouds) == int(np.argmin(raw.sum(1)))


def test_selection_ties_go_to_lowest_index():
    pts = np.random.default_rng(0).normal(size=(30, 3))
    assert select_canonical_approximate([pts, pts.copy(), pts.copy()]) == 0


def test_identical_meshes_give_zero_warps(mug_family):
    meshes, _ = mug_family
    space = learn_warp_space([meshes[0]] * 3, 1, FAST, "approximate", n_object_samples=100, n_canonical_samples=100)
    # the shared sampling stream makes every object cloud, hence every
    # displacement, identical: no variance is left for PCA
    assert space.meta["total_singular_sq"] == 0.0
    np.testing.assert_array_equal(space.singular_values, 0.0)


def test_learning_errors(mug_family):
    meshes, _ = mug_family
    with pytest.raises(InputError):
        learn_warp_space(meshes[:1])
    with pytest.raises(LatentDimTooLarge):
        learn_warp_space(meshes[:3], 3)
    flat = TriMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0.0]]), np.array([[0, 1, 2]]))
    with pytest.raises(DegenerateMesh) as info:
        learn_warp_space([meshes[0], flat], 1, n_object_samples=50, n_canonical_samples=50)
    assert info.value.index == 1


def test_n_jobs_does_not_change_result(mug_family):
    meshes, _ = mug_family
    kw = dict(latent_dim=2, cfg=FAST, selection="exhaustive", n_object_samples=80, n_canonical_samples=80)
    a = learn_warp_space(meshes[:3], n_jobs=1, **kw)
    b = learn_warp_space(meshes[:3], n_jobs=3, **kw)
    np.testing.assert_array_equal(a.basis, b.basis)
    np.testing.assert_array_equal(a.mean, b.mean)


def test_rigid_frame_is_not_learned(mug_family, rng):
    # the space is defined in the shared canonical frame: moving the training
    # set rigidly moves the canonical cloud with it
    meshes, _ = mug_family
    T = RigidTransform(random_rotation(rng), rng.normal(size=3))
    kw = dict(latent_dim=1, cfg=FAST, selection="approximate", n_object_samples=80, n_canonical_samples=80)
    a = learn_warp_space(meshes[:2], **kw)
    b = learn_warp_space([m.transformed(T) for m in meshes[:2]], **kw)
    V = a.canonical.vertex_count
    np.testing.assert_allclose(b.canonical.points[:V], T.apply(a.canonical.points[:V]), atol=1e-12)


def test_warp_model_estimator(mug_family):
    meshes, _ = mug_family
    model = WarpModel(latent_dim=2, max_iters=30, selection="approximate", n_object_samples=100, n_canonical_samples=100)
    model.fit(meshes[:3])
    assert model.explained_variance_ratio_.shape == (2,)
    codes = np.array([[0.1, -0.2], [0.0, 0.3]])
    clouds = model.inverse_transform(codes)
    np.testing.assert_allclose(model.transform(clouds), codes, atol=1e-12)
    assert clone(model).get_params() == model.get_params()
