import numpy as np
import pytest
from conftest import box_mesh

from iwarp.exceptions import DegenerateConfiguration, InputError, NoContacts, NoNearbyPoints
from iwarp.geometry import RigidTransform, alignment_residual, axis_angle_to_matrix, random_rotation, rotation_angle
from iwarp.interaction import (
    Demonstration,
    PlacementSpec,
    extract_grasp_contacts,
    extract_placement_points,
    gripper_target_pose,
    nearby_pairs,
    placement_in_hand_frame,
    select_demonstration,
    transfer_grasp,
    transfer_placement,
    virtual_point_error,
)
from iwarp.mesh import sample_surface_even
from iwarp.synthetic import make_gripper
from iwarp.warp import ShapeParams

HALF = 0.02
GAP = 1e-4


def kabsch(source, target):
    """Independent SVD least-squares rigid alignment."""
    cs, ct = source.mean(0), target.mean(0)
    U, _, Vt = np.linalg.svd((source - cs).T @ (target - ct))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return RigidTransform(R, ct - R @ cs)


def assert_same_pose(a, b, tol=1e-6):
    assert np.linalg.norm(a.t - b.t) < tol
    assert rotation_angle(a.R @ b.R.T) < tol


def random_transform(rng):
    return RigidTransform(random_rotation(rng), rng.normal(size=3))


@pytest.fixture(scope="module")
def box_grasp():
    box = box_mesh([-HALF] * 3, [HALF] * 3, 8)
    cloud, _ = sample_surface_even(box, 800, 0)
    gripper = make_gripper(2 * HALF + 2 * GAP)
    grasp = RigidTransform(np.eye(3), [0.0, 0.0, -0.005])
    spec = extract_grasp_contacts(box, cloud, gripper, grasp, pairs=16)
    return box, cloud, gripper, grasp, spec


# ----------------------------------------------------------------------------
# grasps


def test_flush_jaws_touch_only_the_pinched_faces(box_grasp):
    _, cloud, _, grasp, spec = box_grasp
    assert spec.n_pairs == 16
    # analytic box geometry: object contacts on the faces y = +-HALF, gripper
    # contacts on the finger pads y = +-(HALF + GAP)
    np.testing.assert_allclose(np.abs(spec.object_surface[:, 1]), HALF, atol=1e-12)
    pads = grasp.apply(spec.gripper_surface_local)
    # analytic distance from each gripper point to the box
    outside = np.linalg.norm(np.maximum(np.abs(pads) - HALF, 0), axis=1)
    assert np.all(outside >= GAP - 1e-12) and np.all(outside <= spec.contact_eps)
    assert np.all(np.linalg.norm(pads - spec.object_surface, axis=1) <= spec.contact_eps)
    assert {-1.0, 1.0} <= set(np.sign(spec.object_surface[:, 1]))


def test_contact_indices_are_exact_nearest_neighbors(box_grasp):
    _, cloud, _, _, spec = box_grasp
    for p, i in zip(spec.object_surface, spec.contact_indices):
        d = np.linalg.norm(cloud - p, axis=1)
        assert d[i] == d.min()


def test_far_gripper_has_no_contacts(box_grasp):
    box, cloud, gripper, _, spec = box_grasp
    wide = make_gripper(2 * HALF + 20 * spec.contact_eps)
    with pytest.raises(NoContacts) as info:
        extract_grasp_contacts(box, cloud, wide, RigidTransform(np.eye(3), [0, 0, -0.005]))
    assert info.value.min_distance >= 10 * spec.contact_eps


def test_grasp_identity_and_equivariance(box_grasp, rng):
    _, cloud, _, grasp, spec = box_grasp
    assert_same_pose(transfer_grasp(spec, cloud), grasp)
    for _ in range(5):
        T = random_transform(rng)
        moved = transfer_grasp(spec, T.apply(cloud))
        assert_same_pose(moved, T.compose(transfer_grasp(spec, cloud)), 1e-9)


def test_grasp_residual_matches_kabsch_on_scaled_cloud(box_grasp):
    _, cloud, _, _, spec = box_grasp
    target = (1.2 * cloud)[spec.contact_indices]
    ours = transfer_grasp(spec, 1.2 * cloud)
    oracle = kabsch(spec.gripper_points_local, target)
    r0 = alignment_residual(ours, spec.gripper_points_local, target)
    assert r0 == pytest.approx(alignment_residual(oracle, spec.gripper_points_local, target), abs=1e-9)


def test_collinear_contacts_are_degenerate(box_grasp):
    _, _, _, grasp, spec = box_grasp
    line = np.outer(np.arange(5.0), [1.0, 0, 0])
    bad = type(spec)(np.arange(5), line, grasp)
    with pytest.raises(DegenerateConfiguration):
        transfer_grasp(bad, line)


# ----------------------------------------------------------------------------
# placements


@pytest.fixture(scope="module")
def stacked():
    """A (a small slab) resting on B (a larger slab), as clouds."""
    a, _ = sample_surface_even(box_mesh([-0.03, -0.02, 0.0], [0.03, 0.02, 0.02], 4), 600, 1)
    b, _ = sample_surface_even(box_mesh([-0.05, -0.05, -0.03], [0.05, 0.05, -0.001], 4), 900, 2)
    return a, b


def test_nearby_pairs_match_exhaustive_scan(stacked):
    a, b = stacked
    ia, ib = nearby_pairs(a, b, 0.01)
    d = np.linalg.norm(a[:, None] - b[None], axis=2)
    ref = np.argwhere(d <= 0.01)
    np.testing.assert_array_equal(np.stack([ia, ib], 1), ref)


def test_placement_extraction(stacked):
    a, b = stacked
    spec = extract_placement_points(a, b, delta=0.01, pairs=12, neighbors=6)
    assert spec.anchor_indices.shape == (12, 6) and spec.anchor_offsets.shape == (12, 6, 3)
    d = np.linalg.norm(a[:, None] - b[None, spec.target_indices], axis=2)
    assert np.all(d.min(0) <= 0.01)
    np.testing.assert_array_equal(spec.target_points, b[spec.target_indices])
    # anchors are the exact L nearest A points
    for j, t in enumerate(spec.target_indices):
        dist = np.linalg.norm(a - b[t], axis=1)
        assert np.max(dist[spec.anchor_indices[j]]) <= np.sort(dist)[5]
    assert virtual_point_error(spec, a, b) < 1e-12


def test_placement_identity_and_equivariance(stacked, rng):
    a, b = stacked
    spec = extract_placement_points(a, b, delta=0.01, pairs=12, neighbors=6)
    assert_same_pose(transfer_placement(spec, a, b), RigidTransform.identity(), 1e-9)
    T = random_transform(rng)
    assert_same_pose(transfer_placement(spec, a, T.apply(b)), T)
    # moving A rigidly turns its virtual points with it
    S = random_transform(rng)
    np.testing.assert_allclose(spec.virtual_points(S.apply(a)), S.apply(spec.virtual_points(a)), atol=1e-12)
    assert_same_pose(transfer_placement(spec, S.apply(a), b), S.inverse())
    assert_same_pose(transfer_placement(spec, S.apply(a), T.apply(b)), T.compose(S.inverse()))


def test_placement_residual_matches_kabsch_and_is_optimal(stacked, rng):
    a, b = stacked
    spec = extract_placement_points(a, b, delta=0.01, pairs=12, neighbors=6)
    warp = lambda P: P + 0.05 * np.sin(20 * P[:, [1, 2, 0]])  # noqa: E731
    a2, b2 = 1.1 * warp(a), warp(b)
    q, target = spec.virtual_points(a2), b2[spec.target_indices]
    ours = transfer_placement(spec, a2, b2)
    r0 = alignment_residual(ours, q, target)
    assert r0 == pytest.approx(alignment_residual(kabsch(q, target), q, target), abs=1e-9)
    for _ in range(1000):
        axis = rng.normal(size=3)
        P = RigidTransform(axis_angle_to_matrix(axis, rng.uniform(0, 0.1)), 0.01 * rng.normal(size=3))
        assert alignment_residual(P.compose(ours), q, target) >= r0


def test_far_clouds_have_no_nearby_points(stacked):
    a, b = stacked
    with pytest.raises(NoNearbyPoints) as info:
        extract_placement_points(a, b + [0, 0, -1.0], delta=0.01)
    assert info.value.max_pairs == 0
    with pytest.raises(NoNearbyPoints):
        extract_placement_points(a, b, delta=0.0011, pairs=10**6)


def test_placement_spec_validation():
    with pytest.raises(InputError):
        PlacementSpec([0, 1], np.zeros((2, 1)), np.zeros((2, 1, 3)), np.zeros((2, 3)))
    with pytest.raises(InputError):
        PlacementSpec([0, 1, 2], np.zeros((3, 2)), np.zeros((3, 1, 3)), np.zeros((3, 3)))
    with pytest.raises(InputError):
        PlacementSpec([0, 1, 2], np.zeros((3, 1)), np.zeros((3, 1, 3)), np.zeros((2, 3)))


def test_hand_frame_helpers(rng):
    P, G = random_transform(rng), random_transform(rng)
    np.testing.assert_allclose(gripper_target_pose(P, G).as_matrix(), P.as_matrix() @ G.as_matrix(), atol=1e-12)
    H = placement_in_hand_frame(P, G)
    np.testing.assert_allclose(G.compose(H).as_matrix(), P.compose(G).as_matrix(), atol=1e-12)


# ----------------------------------------------------------------------------
# demonstration selection


def test_select_demonstration(small_mug_space, stacked):
    space = small_mug_space
    a = space.decode(ShapeParams(np.zeros(space.latent_dim)))
    _, b = stacked
    # the slab top sits 2 mm under the mug, centered below it
    shifted = b + [a[:, 0].mean() - b[:, 0].mean(), a[:, 1].mean() - b[:, 1].mean(), a[:, 2].min() - b[:, 2].max() - 0.002]

    def infer(_space, cloud):
        return cloud

    clean = Demonstration(a, shifted, a)
    # an out-of-family object: the observed points are a distorted mug
    distorted = Demonstration(a, shifted, a + 0.01 * np.sin(40 * a))
    best, scores = select_demonstration([distorted, clean], space, space, infer, delta=0.01, pairs=8, neighbors=4)
    assert best == 1 and scores[1] < 1e-12 < scores[0]
    assert select_demonstration([clean], space, space, infer, delta=0.01, pairs=8, neighbors=4)[0] == 0
    assert select_demonstration([clean, clean], space, space, infer, delta=0.01, pairs=8, neighbors=4)[0] == 0
    far = Demonstration(a, shifted + [0, 0, 1.0], a)
    best, scores = select_demonstration([far, clean], space, space, infer, delta=0.01, pairs=8, neighbors=4)
    assert best == 1 and scores[0] == np.inf
    with pytest.raises(InputError):
        select_demonstration([], space, space, infer)
