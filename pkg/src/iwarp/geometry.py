"""Geometric primitives: distances, neighbour queries, sampling and rotations.

Point clouds are ``(n, 3)`` float arrays. All functions are pure.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .exceptions import (
    DegenerateBasis,
    DegenerateConfiguration,
    InputError,
    InsufficientPoints,
    PairCountMismatch,
)
from .validation import check_count, check_points

EPS_NORM = 1e-9
# Max number of query-reference pairs held in memory at once.
_BLOCK = 1 << 20


@dataclass(frozen=True)
class RigidTransform:
    """A proper rigid motion ``x -> R @ x + t`` (meters)."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InputError("rigid transform contains non-finite values")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=np.float64)
        return cls(T[:3, :3], T[:3, 3])

    def as_matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def compose(self, other):
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self):
        return RigidTransform(self.R.T, -self.R.T @ self.t)

    def is_valid(self, tol=1e-10):
        return bool(
            np.abs(self.R.T @ self.R - np.eye(3)).max() < tol
            and abs(np.linalg.det(self.R) - 1.0) < tol
        )


def rotation_angle(R):
    """Geodesic angle (radians) of a rotation matrix."""
    # atan2 form stays accurate near zero, unlike arccos of the trace.
    R = np.asarray(R, dtype=np.float64)
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return float(np.arctan2(0.5 * np.linalg.norm(axis), 0.5 * (np.trace(R) - 1.0)))


def transform_distance(a, b):
    """(translation error in meters, rotation error in radians) between two poses."""
    return (
        float(np.linalg.norm(a.t - b.t)),
        rotation_angle(a.R.T @ b.R),
    )


def quaternion_to_matrix(q):
    """Unit quaternion ``(w, x, y, z)`` to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quaternion(R):
    """Rotation matrix to unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
    R = np.asarray(R, dtype=np.float64)
    # Shepperd's method: pivot on the largest diagonal combination.
    tr = np.trace(R)
    candidates = np.array([tr, R[0, 0], R[1, 1], R[2, 2]])
    i = int(np.argmax(candidates))
    if i == 0:
        s = np.sqrt(1.0 + tr) * 2
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif i == 1:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif i == 2:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def random_rotation(rng):
    """Uniformly distributed rotation from a normalized Gaussian 4-vector."""
    q = rng.standard_normal(4)
    return quaternion_to_matrix(q / np.linalg.norm(q))


def icosahedral_rotations():
    """The 60 rotations of the icosahedral group, shape (60, 3, 3).

    Every rotation lies within about 44 degrees of one of them.
    """
    return Rotation.create_group("I").as_matrix()


def axis_angle_to_matrix(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


def _sq_dists(queries, reference):
    """Exact squared distances by explicit differencing (no expansion trick)."""
    diff = queries[:, None, :] - reference[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def nearest_neighbors(queries, reference):
    """Index and distance of the nearest ``reference`` point for each query."""
    queries = check_points(queries, "queries")
    reference = check_points(reference, "reference")
    dist, idx = cKDTree(reference).query(queries, k=1)
    return idx.astype(np.intp), dist


def one_sided_chamfer(A, B, squared=True):
    """Mean over points of ``B`` of the distance to the nearest point of ``A``.

    The argument order is fixed: the minimum runs over ``A`` and the average
    over ``B``, so ``one_sided_chamfer(model, observation)`` tolerates an
    observation that only covers part of the model.

    Parameters
    ----------
    A, B : array_like of shape (n, 3), (m, 3)
    squared : bool, default=True
        Average squared distances instead of distances.
    """
    A = check_points(A, "A")
    B = check_points(B, "B")
    _, d = nearest_neighbors(B, A)
    if squared:
        return float(np.mean(d * d))
    return float(np.mean(d))


def k_nearest_neighbors(queries, reference, k):
    """Indices of the ``k`` closest reference points per query.

    Rows are sorted by ascending distance; equal distances are ordered by
    the lower reference index. Returns an ``(n_queries, k)`` integer array.
    """
    queries = check_points(queries, "queries")
    reference = check_points(reference, "reference")
    k = check_count(k, "k")
    if k > len(reference):
        raise InsufficientPoints(f"k={k} exceeds reference size {len(reference)}")
    out = np.empty((len(queries), k), dtype=np.intp)
    step = max(1, _BLOCK // len(reference))
    for start in range(0, len(queries), step):
        d2 = _sq_dists(queries[start : start + step], reference)
        out[start : start + step] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def farthest_point_sampling(points, m, seed=None, start_index=None):
    """Greedy farthest point sampling.

    The first index comes from ``np.random.default_rng(seed)`` unless
    ``start_index`` is given; each later pick maximizes the distance to the
    already selected set (ties go to the lowest index).

    Returns
    -------
    indices : ndarray of shape (m,)
    """
    points = check_points(points)
    m = check_count(m, "m")
    n = len(points)
    if m > n:
        raise InsufficientPoints(f"cannot sample {m} of {n} points")
    if start_index is None:
        start_index = int(np.random.default_rng(seed).integers(n))
    selected = np.empty(m, dtype=np.intp)
    selected[0] = start_index
    min_d2 = np.sum((points - points[start_index]) ** 2, axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(min_d2))
        selected[i] = nxt
        np.minimum(min_d2, np.sum((points - points[nxt]) ** 2, axis=1), out=min_d2)
    return selected


def gram_schmidt(u, v):
    """Rotation matrix with rows ``(u', v', u' x v')`` orthonormalized from ``u, v``."""
    u = np.asarray(u, dtype=np.float64).reshape(3)
    v = np.asarray(v, dtype=np.float64).reshape(3)
    nu = np.linalg.norm(u)
    if not nu > EPS_NORM:
        raise DegenerateBasis(f"|u| = {nu:.3g} is too small")
    u1 = u / nu
    v_perp = v - np.dot(u1, v) * u1
    nv = np.linalg.norm(v_perp)
    if not nv > EPS_NORM:
        raise DegenerateBasis("u and v are (nearly) parallel")
    v1 = v_perp / nv
    return np.stack([u1, v1, np.cross(u1, v1)])


def horn_align(source, target):
    """Least-squares rigid motion mapping ``source`` onto ``target``.

    Closed-form absolute orientation via the unit-quaternion eigenproblem:
    minimizes ``sum_j |R @ source_j + t - target_j|^2`` over rotations and
    translations (no scale).
    """
    source = check_points(source, "source")
    target = check_points(target, "target")
    if len(source) != len(target):
        raise PairCountMismatch(f"{len(source)} source vs {len(target)} target points")
    if len(source) < 3:
        raise DegenerateConfiguration("need at least 3 point pairs")
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    a = source - mu_s
    b = target - mu_t
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-12 * sv[0]:
        raise DegenerateConfiguration("source points are collinear or coincident")

    S = a.T @ b
    Sxx, Sxy, Sxz = S[0]
    Syx, Syy, Syz = S[1]
    Szx, Szy, Szz = S[2]
    N = np.array(
        [
            [Sxx + Syy + Szz, Syz - Szy, Szx - Sxz, Sxy - Syx],
            [Syz - Szy, Sxx - Syy - Szz, Sxy + Syx, Szx + Sxz],
            [Szx - Sxz, Sxy + Syx, -Sxx + Syy - Szz, Syz + Szy],
            [Sxy - Syx, Szx + Sxz, Syz + Szy, -Sxx - Syy + Szz],
        ]
    )
    _, vecs = np.linalg.eigh(N)
    R = quaternion_to_matrix(vecs[:, -1])
    return RigidTransform(R, mu_t - R @ mu_s)


def alignment_residual(transform, source, target):
    """Sum of squared pair distances after applying ``transform`` to ``source``."""
    diff = transform.apply(source) - np.asarray(target, dtype=np.float64)
    return float(np.sum(diff * diff))
