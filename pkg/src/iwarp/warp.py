"""Category warp spaces: canonical selection, displacement PCA and decoding.

A :class:`WarpSpace` stores a canonical point cloud whose first ``V`` points
are the canonical mesh vertices, followed by surface samples. Every learned
warp displaces these points without reordering them, so index ``k`` refers
to the same semantic location on every decoded instance.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .cpd import CpdConfig, cpd_register
from .exceptions import (
    DegenerateMesh,
    EmptyCloud,
    IWarpError,
    InputError,
    LatentDimMismatch,
    LatentDimTooLarge,
    RegistrationError,
)
from .geometry import one_sided_chamfer
from .mesh import TriMesh, sample_surface_even
from .validation import check_count, check_points, check_vector

N_OBJECT_SAMPLES = 2000
N_CANONICAL_SAMPLES = 10000
EXHAUSTIVE_MAX_K = 12


@dataclass(frozen=True)
class CanonicalObject:
    points: np.ndarray
    vertex_count: int
    faces: np.ndarray

    def __post_init__(self):
        points = check_points(self.points, "canonical points")
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        V = int(self.vertex_count)
        if not 0 < V <= len(points):
            raise InputError(f"vertex_count {V} out of range for {len(points)} points")
        if faces.size and faces.max() >= V:
            raise InputError("canonical faces must reference only the first V points")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "vertex_count", V)

    @property
    def mesh(self):
        return TriMesh(self.points[: self.vertex_count], self.faces)


@dataclass(frozen=True)
class ShapeParams:
    """Latent shape ``v``, per-axis scale ``s``, rotation ``R`` and translation ``t``."""

    v: np.ndarray
    s: np.ndarray = field(default_factory=lambda: np.ones(3))
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64).reshape(-1)
        s = check_vector(self.s, 3, "s")
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = check_vector(self.t, 3, "t")
        if not np.all(np.isfinite(v)) or not np.all(np.isfinite(R)):
            raise InputError("shape parameters must be finite")
        if np.any(s <= 0):
            raise InputError(f"scale components must be > 0, got {s}")
        for name, val in (("v", v), ("s", s), ("R", R), ("t", t)):
            object.__setattr__(self, name, val)

    @classmethod
    def identity(cls, d):
        return cls(np.zeros(d))


@dataclass(frozen=True)
class WarpSpace:
    """PCA latent space over flattened canonical displacements.

    ``basis`` has shape ``(3n, d)`` with orthonormal columns; flattening is
    row-major, i.e. ``[x0, y0, z0, x1, ...]``.
    """

    canonical: CanonicalObject
    basis: np.ndarray
    mean: np.ndarray
    singular_values: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n3 = 3 * len(self.canonical.points)
        basis = np.asarray(self.basis, dtype=np.float64)
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        if basis.ndim != 2 or basis.shape[0] != n3:
            raise InputError(f"basis must have shape ({n3}, d), got {basis.shape}")
        if mean.shape != (n3,):
            raise InputError(f"mean must have length {n3}, got {mean.shape}")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "mean", mean)
        if self.singular_values is not None:
            object.__setattr__(self, "singular_values", np.asarray(self.singular_values, dtype=np.float64))

    @property
    def latent_dim(self):
        return self.basis.shape[1]

    @property
    def n_points(self):
        return len(self.canonical.points)

    def explained_variance_ratio(self):
        if self.singular_values is None:
            return None
        var = np.asarray(self.meta.get("total_singular_sq", np.sum(self.singular_values**2)))
        if var == 0:
            return np.zeros(self.latent_dim)
        return self.singular_values**2 / var

    def warped_points(self, v):
        """Canonical points displaced by ``mean + basis @ v`` (no pose applied)."""
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.shape != (self.latent_dim,):
            raise LatentDimMismatch(f"latent vector has length {v.shape[0]}, expected {self.latent_dim}")
        return self.canonical.points + (self.mean + self.basis @ v).reshape(-1, 3)

    def decode(self, params):
        """Complete point cloud ``[(canonical + warp) * s] R^T + t`` in canonical order."""
        return (self.warped_points(params.v) * params.s) @ params.R.T + params.t

    def reconstruct_mesh(self, params):
        """Warped mesh: the first ``V`` decoded points with the canonical faces."""
        points = self.decode(params)
        return TriMesh(points[: self.canonical.vertex_count], self.canonical.faces)

    def encode(self, displacement):
        """Latent code of a canonical displacement field (orthogonal projection)."""
        flat = np.asarray(displacement, dtype=np.float64).reshape(-1)
        return self.basis.T @ (flat - self.mean)


# ----------------------------------------------------------------------------
# canonical selection


def _cost_row(i, clouds, cfg):
    row = np.zeros(len(clouds))
    for j, target in enumerate(clouds):
        if j == i:
            continue
        try:
            warped = clouds[i] + cpd_register(clouds[i], target, cfg).displacement
        except IWarpError as exc:
            raise RegistrationError((i, j), exc) from exc
        row[j] = one_sided_chamfer(warped, target, squared=True)
    return row


def warp_cost_table(clouds, cfg=None, n_jobs=1):
    """``C[i, j]``: squared one-sided Chamfer of cloud ``i`` warped onto ``j``."""
    clouds = [check_points(c, f"cloud {k}") for k, c in enumerate(clouds)]
    cfg = cfg or CpdConfig()
    if n_jobs == 1:
        rows = [_cost_row(i, clouds, cfg) for i in range(len(clouds))]
    else:
        with ThreadPoolExecutor(n_jobs) as pool:
            rows = list(pool.map(lambda i: _cost_row(i, clouds, cfg), range(len(clouds))))
    return np.array(rows).reshape(len(clouds), len(clouds))


def raw_cost_table(clouds):
    """``C[i, j]``: squared one-sided Chamfer from cloud ``i`` to ``j`` without warping."""
    clouds = [check_points(c, f"cloud {k}") for k, c in enumerate(clouds)]
    K = len(clouds)
    C = np.zeros((K, K))
    for i in range(K):
        for j in range(K):
            if i != j:
                C[i, j] = one_sided_chamfer(clouds[i], clouds[j], squared=True)
    return C


def _argmin_total(C):
    # np.argmin returns the first minimum, i.e. ties go to the lowest index.
    return int(np.argmin(C.sum(axis=1)))


def select_canonical_exhaustive(clouds, cfg=None, n_jobs=1):
    """Index of the cloud that warps onto all others with the lowest total cost."""
    if len(clouds) == 0:
        raise EmptyCloud("no clouds to select from")
    if len(clouds) == 1:
        return 0
    return _argmin_total(warp_cost_table(clouds, cfg, n_jobs))


def select_canonical_approximate(clouds):
    """Index of the cloud closest (unwarped) to all others."""
    if len(clouds) == 0:
        raise EmptyCloud("no clouds to select from")
    return _argmin_total(raw_cost_table(clouds))


# ----------------------------------------------------------------------------
# learning


def fit_pca(data, d):
    """Centered PCA of the rows of ``data``.

    Returns ``(basis, mean, singular_values, total_sq)`` with ``basis`` of
    shape ``(features, d)``. Component signs are fixed so the largest
    absolute loading of each component is positive.
    """
    data = np.asarray(data, dtype=np.float64)
    mean = data.mean(axis=0)
    centered = data - mean
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    vt = vt[:d]
    pivot = np.argmax(np.abs(vt), axis=1)
    signs = np.sign(vt[np.arange(len(vt)), pivot])
    signs[signs == 0] = 1.0
    return (vt * signs[:, None]).T.copy(), mean, sv[:d].copy(), float(np.sum(sv**2))


def _object_seed(seed):
    # Every object shares one sampling stream, so identical meshes give
    # identical clouds (and identical displacements).
    return np.random.SeedSequence([seed, 0])


def learn_warp_space(
    meshes,
    latent_dim=None,
    cfg=None,
    selection="auto",
    seed=0,
    n_object_samples=N_OBJECT_SAMPLES,
    n_canonical_samples=N_CANONICAL_SAMPLES,
    n_jobs=1,
    keep_displacements=False,
):
    """Learn a category warp space from pre-aligned training meshes.

    Parameters
    ----------
    meshes : list of TriMesh
        At least two meshes sharing a canonical pose.
    latent_dim : int, optional
        PCA dimension; defaults to ``min(K - 1, 8)``.
    cfg : CpdConfig, optional
    selection : {"auto", "exhaustive", "approximate"}
        Canonical selection rule; ``"auto"`` is exhaustive for ``K <= 12``.
    seed : int
    n_object_samples, n_canonical_samples : int
        Sizes of the per-object clouds and of the canonical surface sample.
    keep_displacements : bool
        Also return the ``(K - 1, n, 3)`` training displacements and the
        indices of the objects they belong to.

    Returns
    -------
    WarpSpace, or ``(WarpSpace, displacements, object_indices)``
    """
    K = len(meshes)
    if K < 2:
        raise InputError("need at least 2 meshes")
    d = min(K - 1, 8) if latent_dim is None else check_count(latent_dim, "latent_dim")
    if d > K - 1:
        raise LatentDimTooLarge(f"latent_dim={d} exceeds K - 1 = {K - 1}")
    if selection == "auto":
        selection = "exhaustive" if K <= EXHAUSTIVE_MAX_K else "approximate"
    if selection not in ("exhaustive", "approximate"):
        raise InputError(f"unknown selection rule {selection!r}")
    cfg = cfg or CpdConfig()

    clouds = []
    for i, mesh in enumerate(meshes):
        try:
            pts, _ = sample_surface_even(mesh, n_object_samples, _object_seed(seed))
        except DegenerateMesh as exc:
            raise DegenerateMesh(str(exc), index=i) from exc
        clouds.append(pts)

    if selection == "exhaustive":
        C = select_canonical_exhaustive(clouds, cfg, n_jobs)
    else:
        C = select_canonical_approximate(clouds)

    canon_mesh = meshes[C]
    samples, _ = sample_surface_even(canon_mesh, n_canonical_samples, np.random.SeedSequence([seed, 1]))
    canonical = CanonicalObject(
        np.concatenate([canon_mesh.vertices, samples]), len(canon_mesh.vertices), canon_mesh.faces
    )

    others = [i for i in range(K) if i != C]

    def register(i):
        try:
            return cpd_register(canonical.points, clouds[i], cfg).displacement
        except IWarpError as exc:
            raise RegistrationError((C, i), exc) from exc

    if n_jobs == 1:
        disps = [register(i) for i in others]
    else:
        with ThreadPoolExecutor(n_jobs) as pool:
            disps = list(pool.map(register, others))
    disps = np.stack(disps)

    basis, mean, sv, total = fit_pca(disps.reshape(len(others), -1), d)
    meta = {
        "K": K,
        "canonical_index": C,
        "selection": selection,
        "seed": int(seed),
        "cpd": cfg.to_dict(),
        "n_object_samples": int(n_object_samples),
        "n_canonical_samples": int(n_canonical_samples),
        "total_singular_sq": total,
    }
    space = WarpSpace(canonical, basis, mean, sv, meta)
    if keep_displacements:
        return space, disps, others
    return space


class WarpModel(TransformerMixin, BaseEstimator):
    """Estimator that learns a category warp space from training meshes.

    ``fit(meshes)`` builds ``space_``. ``transform`` maps clouds given in
    canonical ordering (e.g. ``canonical + displacement``) to latent codes and
    ``inverse_transform`` maps codes back to warped canonical clouds.

    Parameters
    ----------
    latent_dim : int, optional
        Defaults to ``min(K - 1, 8)``.
    alpha, kernel_beta, max_iters, tol, w
        CPD settings, see :class:`~iwarp.cpd.CpdConfig`.
    selection : {"auto", "exhaustive", "approximate"}
    n_object_samples, n_canonical_samples : int
    random_state : int
    n_jobs : int
    """

    def __init__(
        self,
        latent_dim=None,
        alpha=2.0,
        kernel_beta=2.0,
        max_iters=100,
        tol=1e-7,
        w=0.0,
        selection="auto",
        n_object_samples=N_OBJECT_SAMPLES,
        n_canonical_samples=N_CANONICAL_SAMPLES,
        random_state=0,
        n_jobs=1,
    ):
        self.latent_dim = latent_dim
        self.alpha = alpha
        self.kernel_beta = kernel_beta
        self.max_iters = max_iters
        self.tol = tol
        self.w = w
        self.selection = selection
        self.n_object_samples = n_object_samples
        self.n_canonical_samples = n_canonical_samples
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, meshes, y=None):
        cfg = CpdConfig(self.alpha, self.kernel_beta, self.max_iters, self.tol, self.w)
        self.space_ = learn_warp_space(
            list(meshes),
            self.latent_dim,
            cfg,
            self.selection,
            self.random_state,
            self.n_object_samples,
            self.n_canonical_samples,
            self.n_jobs,
        )
        self.canonical_index_ = self.space_.meta["canonical_index"]
        self.explained_variance_ratio_ = self.space_.explained_variance_ratio()
        return self

    def transform(self, clouds):
        check_is_fitted(self, "space_")
        canon = self.space_.canonical.points
        return np.stack([self.space_.encode(np.asarray(c) - canon) for c in clouds])

    def inverse_transform(self, codes):
        check_is_fitted(self, "space_")
        return np.stack([self.space_.warped_points(v) for v in np.atleast_2d(codes)])

    def decode(self, params):
        check_is_fitted(self, "space_")
        return self.space_.decode(params)

    def reconstruct_mesh(self, params):
        check_is_fitted(self, "space_")
        return self.space_.reconstruct_mesh(params)
