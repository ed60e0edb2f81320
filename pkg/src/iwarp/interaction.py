"""Interaction points from one demonstration and their transfer to new shapes.

Interaction points are stored as indices into canonically ordered clouds
(outputs of ``WarpSpace.decode``), so they move with the warp. Grasps keep
the gripper-side contact points in the gripper frame; placements anchor
each target point of object B to ``L`` neighbors in object A through fixed
offsets, which yields a virtual point that follows A's warp.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import (
    IWarpError,
    InputError,
    InsufficientContacts,
    NoContacts,
    NoNearbyPoints,
)
from .geometry import RigidTransform, farthest_point_sampling, horn_align, k_nearest_neighbors, nearest_neighbors
from .mesh import TriMesh, proximity_pairs
from .validation import check_count, check_points, check_positive

DEFAULT_PAIRS = 32
DEFAULT_DELTA = 0.02
DEFAULT_NEIGHBORS = 10
DEFAULT_CONTACT_EPS = 1e-3


@dataclass
class GraspSpec:
    """Grasp contacts as object cloud indices plus their gripper-frame positions.

    ``gripper_points_local`` holds the object-side contact points (the
    indexed cloud points) expressed in the gripper frame at the demonstrated
    grasp, so that transferring onto the demonstration cloud reproduces the
    grasp exactly. ``gripper_surface_local`` and ``object_surface`` keep the
    matching surface points of each pair (gripper frame and workspace frame)
    for inspection.
    """

    contact_indices: np.ndarray
    gripper_points_local: np.ndarray
    demo_grasp: RigidTransform
    contact_eps: float = DEFAULT_CONTACT_EPS
    seed: int = 0
    gripper_surface_local: np.ndarray = None
    object_surface: np.ndarray = None

    def __post_init__(self):
        self.contact_indices = np.asarray(self.contact_indices, dtype=np.intp).reshape(-1)
        self.gripper_points_local = check_points(self.gripper_points_local, "gripper_points_local")
        if self.gripper_surface_local is not None:
            self.gripper_surface_local = check_points(self.gripper_surface_local, "gripper_surface_local")
        if self.object_surface is not None:
            self.object_surface = check_points(self.object_surface, "object_surface")
        if len(self.contact_indices) != len(self.gripper_points_local):
            raise InputError("contact_indices and gripper_points_local differ in length")
        if len(self.contact_indices) < 3:
            raise InputError("a grasp needs at least 3 contact pairs")
        if np.any(self.contact_indices < 0):
            raise InputError("negative contact index")

    @property
    def n_pairs(self):
        return len(self.contact_indices)


@dataclass
class PlacementSpec:
    """Virtual points of a demonstrated placement.

    ``target_points`` are the demo positions of the B targets; together
    with the offsets they fix the demo configuration of every anchor, which
    orients the offsets on a new cloud.
    """

    target_indices: np.ndarray
    anchor_indices: np.ndarray
    anchor_offsets: np.ndarray
    target_points: np.ndarray
    delta: float = DEFAULT_DELTA
    seed: int = 0

    def __post_init__(self):
        self.target_indices = np.asarray(self.target_indices, dtype=np.intp).reshape(-1)
        self.anchor_indices = np.asarray(self.anchor_indices, dtype=np.intp)
        self.anchor_offsets = np.asarray(self.anchor_offsets, dtype=np.float64)
        self.target_points = check_points(self.target_points, "target_points")
        P = len(self.target_indices)
        if P < 3:
            raise InputError("a placement needs at least 3 point pairs")
        if self.anchor_indices.ndim != 2 or self.anchor_indices.shape[0] != P:
            raise InputError("anchor_indices must have shape (P, L)")
        if self.anchor_offsets.shape != self.anchor_indices.shape + (3,):
            raise InputError("anchor_offsets must have shape (P, L, 3)")
        if self.target_points.shape != (P, 3):
            raise InputError("target_points must have shape (P, 3)")
        if np.any(self.target_indices < 0) or np.any(self.anchor_indices < 0):
            raise InputError("negative point index")

    @property
    def n_pairs(self):
        return len(self.target_indices)

    @property
    def n_neighbors(self):
        return self.anchor_indices.shape[1]

    def anchor_rotation(self, cloud_a):
        """Rotation carrying the demo anchor configuration onto ``cloud_a``'s anchors."""
        cloud_a = check_points(cloud_a, "cloud_a")
        _check_indices(self.anchor_indices, len(cloud_a), "cloud_a")
        demo = self.target_points[:, None, :] - self.anchor_offsets
        return horn_align(demo.reshape(-1, 3), cloud_a[self.anchor_indices].reshape(-1, 3)).R

    def virtual_points(self, cloud_a):
        """``q_j = mean_k (A[n_jk] + R delta_jk)`` for a canonically ordered cloud A.

        ``R`` is :meth:`anchor_rotation`, the identity on the demo cloud, so
        the offsets turn with the object and the points are equivariant.
        """
        R = self.anchor_rotation(cloud_a)
        cloud_a = np.asarray(cloud_a, dtype=np.float64)
        return np.mean(cloud_a[self.anchor_indices] + self.anchor_offsets @ R.T, axis=1)


@dataclass
class Demonstration:
    """One recorded placement demonstration.

    ``cloud_a`` and ``cloud_b`` are the inferred complete clouds (canonical
    order) in the placed configuration, and ``observed_a`` the raw points of
    A there. ``start_a`` and ``start_b`` are the raw clouds at the start of
    the demonstration (defaulting to the placed ones).
    """

    cloud_a: np.ndarray
    cloud_b: np.ndarray
    observed_a: np.ndarray
    start_a: np.ndarray = None
    start_b: np.ndarray = None
    gripper_mesh: TriMesh = None
    grasp: RigidTransform = None
    params: dict = field(default_factory=dict)


def _check_indices(indices, n, name):
    if indices.size and indices.max() >= n:
        raise InputError(f"index {int(indices.max())} out of range for {name} with {n} points")


def extract_grasp_contacts(object_mesh, object_cloud, gripper_mesh, grasp, contact_eps=DEFAULT_CONTACT_EPS, pairs=DEFAULT_PAIRS, seed=0):
    """Contact pairs between the object and a gripper posed at ``grasp``.

    Parameters
    ----------
    object_mesh : TriMesh
        Object surface in the workspace frame.
    object_cloud : array_like (n, 3)
        Canonically ordered cloud of the same object, workspace frame.
    gripper_mesh : TriMesh
        Gripper in its local frame.
    grasp : RigidTransform
        Gripper pose.
    contact_eps : float
        Maximum separation of a contact pair (meters).
    pairs : int
        Number of pairs kept by farthest point sampling over the object-side
        points; fewer are kept if fewer distinct pairs exist.

    Returns
    -------
    GraspSpec
    """
    contact_eps = check_positive(contact_eps, "contact_eps", strict=False)
    pairs = check_count(pairs, "pairs", 3)
    object_cloud = check_points(object_cloud, "object_cloud")
    posed = gripper_mesh.transformed(grasp)
    pa, pg, _, min_distance = proximity_pairs(object_mesh, posed, contact_eps)
    if len(pa) == 0:
        raise NoContacts(f"no surface pair within {contact_eps:g} m (closest {min_distance:.4g} m)", min_distance)
    _, first = np.unique(np.round(pa, 12), axis=0, return_index=True)
    first.sort()
    if len(first) < 3:
        raise InsufficientContacts(f"only {len(first)} distinct contact points")
    pa, pg = pa[first], pg[first]
    keep = farthest_point_sampling(pa, min(pairs, len(pa)), seed=seed)
    idx, _ = nearest_neighbors(pa[keep], object_cloud)
    to_local = grasp.inverse()
    return GraspSpec(
        idx, to_local.apply(object_cloud[idx]), grasp, contact_eps, seed, to_local.apply(pg[keep]), pa[keep]
    )


def transfer_grasp(spec, new_cloud):
    """Gripper pose aligning the stored gripper contacts with the warped contacts."""
    new_cloud = check_points(new_cloud, "new_cloud")
    _check_indices(spec.contact_indices, len(new_cloud), "new_cloud")
    return horn_align(spec.gripper_points_local, new_cloud[spec.contact_indices])


def nearby_pairs(cloud_a, cloud_b, delta):
    """All index pairs ``(i, j)`` with ``|A_i - B_j| <= delta``, sorted."""
    tree_a, tree_b = cKDTree(cloud_a), cKDTree(cloud_b)
    pairs = tree_a.sparse_distance_matrix(tree_b, delta, output_type="ndarray")
    order = np.lexsort((pairs["j"], pairs["i"]))
    return pairs["i"][order].astype(np.intp), pairs["j"][order].astype(np.intp)


def extract_placement_points(cloud_a, cloud_b, delta=DEFAULT_DELTA, pairs=DEFAULT_PAIRS, neighbors=DEFAULT_NEIGHBORS, seed=0):
    """Anchored virtual points describing where B sits relative to A.

    Pairs of points closer than ``delta`` are reduced to ``pairs`` of them
    by farthest point sampling over pair midpoints. Each kept B-side point
    is anchored to its ``neighbors`` nearest A points.
    """
    cloud_a = check_points(cloud_a, "cloud_a")
    cloud_b = check_points(cloud_b, "cloud_b")
    delta = check_positive(delta, "delta")
    pairs = check_count(pairs, "pairs", 3)
    neighbors = check_count(neighbors, "neighbors")
    if neighbors > len(cloud_a):
        raise InputError(f"neighbors={neighbors} exceeds the {len(cloud_a)} points of cloud_a")
    ia, ib = nearby_pairs(cloud_a, cloud_b, delta)
    if len(ia) < pairs:
        d, _ = cKDTree(cloud_a).query(cloud_b)
        raise NoNearbyPoints(
            f"{len(ia)} pairs within {delta:g} m, {pairs} requested (closest {d.min():.4g} m)",
            len(ia),
            float(d.min()),
        )
    mid = 0.5 * (cloud_a[ia] + cloud_b[ib])
    keep = farthest_point_sampling(mid, pairs, seed=seed)
    target = ib[keep]
    p_b = cloud_b[target]
    anchors = k_nearest_neighbors(p_b, cloud_a, neighbors)
    offsets = p_b[:, None, :] - cloud_a[anchors]
    return PlacementSpec(target, anchors, offsets, p_b, delta, seed)


def virtual_point_error(spec, cloud_a, cloud_b):
    """Largest distance between reconstructed virtual points and their B targets."""
    q = spec.virtual_points(cloud_a)
    cloud_b = check_points(cloud_b, "cloud_b")
    _check_indices(spec.target_indices, len(cloud_b), "cloud_b")
    return float(np.max(np.abs(q - cloud_b[spec.target_indices])))


def transfer_placement(spec, new_cloud_a, new_cloud_b):
    """Rigid motion of A' that carries its virtual points onto B's targets."""
    new_cloud_b = check_points(new_cloud_b, "new_cloud_b")
    _check_indices(spec.target_indices, len(new_cloud_b), "new_cloud_b")
    return horn_align(spec.virtual_points(new_cloud_a), new_cloud_b[spec.target_indices])


def gripper_target_pose(placement, grasp):
    """Gripper pose after executing ``placement`` while holding A at ``grasp``."""
    return placement.compose(grasp)


def placement_in_hand_frame(placement, grasp):
    """The placement motion expressed in the gripper frame at ``grasp``."""
    return grasp.inverse().compose(placement).compose(grasp)


def score_demonstration(demo, space_a, space_b, infer, delta=DEFAULT_DELTA, pairs=DEFAULT_PAIRS, neighbors=DEFAULT_NEIGHBORS, seed=0):
    """Mean distance from the demonstrated placed A points to the re-predicted placement.

    ``infer(space, cloud)`` must return the decoded complete cloud.
    """
    spec = extract_placement_points(demo.cloud_a, demo.cloud_b, delta, pairs, neighbors, seed)
    start_a = demo.observed_a if demo.start_a is None else demo.start_a
    start_b = demo.cloud_b if demo.start_b is None else demo.start_b
    ya = infer(space_a, start_a)
    yb = infer(space_b, start_b)
    placed = transfer_placement(spec, ya, yb).apply(ya)
    d, _ = cKDTree(placed).query(check_points(demo.observed_a, "observed_a"))
    return float(np.mean(d))


def select_demonstration(demos, space_a, space_b, infer, **kwargs):
    """Index of the demonstration whose re-predicted placement is closest to itself.

    Returns the index and the per-demo scores; a demo whose prediction
    fails scores ``inf``. Ties go to the lowest index.
    """
    if len(demos) == 0:
        raise InputError("need at least one demonstration")
    scores = []
    for demo in demos:
        try:
            scores.append(score_demonstration(demo, space_a, space_b, infer, **kwargs))
        except IWarpError:
            scores.append(float("inf"))
    return int(np.argmin(scores)), scores
