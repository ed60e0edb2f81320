"""Non-rigid Coherent Point Drift.

The source cloud is the set of Gaussian mixture centroids; EM moves them
toward the target under a motion-coherence prior. The displacement field
is ``W = G @ C`` with ``G`` the Gaussian kernel over source points, and the
M-step solves ``(G + alpha * sigma2 * diag(1 / P1)) C = diag(1 / P1) P X - Y``
with a dense Cholesky factorization.

Both clouds are centered and scaled to unit bounding-box diagonal before EM
(each by its own statistics), so ``kernel_beta`` is scale free. The result is
mapped back into the target's frame.
"""

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist, pdist, squareform
from sklearn.base import BaseEstimator

from .exceptions import InputError, NumericalCollapse
from .validation import check_points

# Stop once the normalized variance is this small; the mixture has collapsed
# onto the target and further iterations only push log(sigma2) to -inf.
SIGMA2_FLOOR = 1e-8
P1_FLOOR = 1e-150


@dataclass(frozen=True)
class CpdConfig:
    alpha: float = 2.0
    kernel_beta: float = 2.0
    max_iters: int = 100
    tol: float = 1e-7
    w: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise InputError(f"alpha must be > 0, got {self.alpha}")
        if not self.kernel_beta > 0:
            raise InputError(f"kernel_beta must be > 0, got {self.kernel_beta}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise InputError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not self.tol >= 0:
            raise InputError(f"tol must be >= 0, got {self.tol}")
        if not 0 <= self.w < 1:
            raise InputError(f"w must be in [0, 1), got {self.w}")

    def to_dict(self):
        return asdict(self)


@dataclass
class CpdResult:
    displacement: np.ndarray
    objective: float
    iterations: int
    sigma2: float
    history: list = field(default_factory=list)


def gaussian_kernel(cloud, kernel_beta):
    """``G[l, k] = exp(-|x_l - x_k|^2 / (2 kernel_beta^2))``."""
    cloud = check_points(cloud, "cloud")
    if not kernel_beta > 0:
        raise InputError(f"kernel_beta must be > 0, got {kernel_beta}")
    if len(cloud) == 1:
        return np.ones((1, 1))
    G = squareform(pdist(cloud, "sqeuclidean"))
    G *= -1.0 / (2.0 * kernel_beta**2)
    np.exp(G, out=G)
    return G


def _normalize(points):
    mean = points.mean(axis=0)
    scale = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
    if scale == 0.0:
        scale = 1.0
    return (points - mean) / scale, mean, scale


class _EStep:
    """Posterior responsibilities and the objective at the current centroids."""

    def __init__(self, X, T, sigma2, w):
        M, N, D = len(T), len(X), 3
        K = cdist(T, X, "sqeuclidean")
        K *= -0.5 / sigma2
        # Column-wise log-sum-exp with a single exp pass over the M x N block.
        shift = K.max(axis=0)
        K -= shift
        np.exp(K, out=K)
        col = K.sum(axis=0)
        lse = shift + np.log(col)
        log_norm = np.log1p(-w) - np.log(M) - 0.5 * D * np.log(2 * np.pi * sigma2)
        if w > 0:
            # Uniform outlier component: density w / N, folded into the denominator.
            log_c = np.log(w / (1 - w)) + np.log(M / N) + 0.5 * D * np.log(2 * np.pi * sigma2)
            with np.errstate(over="ignore"):
                # an infinite denominator means the outlier term owns the point
                den = col + np.exp(log_c - shift)
            nll = -np.sum(np.logaddexp(log_norm + lse, np.log(w / N)))
        else:
            den = col
            nll = -np.sum(log_norm + lse)
        K /= den
        self.P1 = K.sum(axis=1)
        self.Pt1 = K.sum(axis=0)
        self.PX = K @ X
        self.nll = float(nll)


def cpd_register(source, target, cfg=None):
    """Register ``source`` non-rigidly onto ``target``.

    Parameters
    ----------
    source : array_like (M, 3)
        Mixture centroids; the returned displacement is indexed like it.
    target : array_like (N, 3)
    cfg : CpdConfig, optional

    Returns
    -------
    CpdResult
        ``displacement`` (M, 3) in the input units, final regularized
        negative log-likelihood ``objective`` (normalized units), the number
        of M-steps taken and the objective ``history`` (one entry per E-step,
        non-increasing).
    """
    cfg = cfg or CpdConfig()
    Y0 = check_points(source, "source")
    X0 = check_points(target, "target")
    Y, _, _ = _normalize(Y0)
    X, x_mean, x_scale = _normalize(X0)
    M, N, D = len(Y), len(X), 3

    G = gaussian_kernel(Y, cfg.kernel_beta)
    sx, sy = X.sum(axis=0), Y.sum(axis=0)
    sigma2 = (M * np.sum(X * X) + N * np.sum(Y * Y) - 2 * sx @ sy) / (D * M * N)
    if not sigma2 > 0:
        sigma2 = 1.0
    C = np.zeros_like(Y)
    W = np.zeros_like(Y)
    T = Y.copy()

    history = []
    iterations = 0
    while True:
        e = _EStep(X, T, sigma2, cfg.w)
        objective = e.nll + 0.5 * cfg.alpha * float(np.sum(C * W))
        if not np.isfinite(objective):
            raise NumericalCollapse("non-finite objective", iterations)
        history.append(objective)
        if len(history) >= 2 and abs(history[-2] - objective) <= cfg.tol * abs(objective):
            break
        if iterations >= cfg.max_iters or sigma2 <= SIGMA2_FLOOR:
            break

        # Centroids with (almost) no responsibility get a huge but finite
        # diagonal, so the smoothness prior alone moves them.
        inv_p1 = 1.0 / np.maximum(e.P1, P1_FLOOR)
        rhs = np.where(e.P1[:, None] > P1_FLOOR, e.PX * inv_p1[:, None] - Y, 0.0)
        A = G.copy()
        A[np.diag_indices(M)] += cfg.alpha * sigma2 * inv_p1
        try:
            C = scipy.linalg.cho_solve(scipy.linalg.cho_factor(A, overwrite_a=True), rhs)
        except np.linalg.LinAlgError:
            A = G.copy()
            A[np.diag_indices(M)] += cfg.alpha * sigma2 * inv_p1
            C = scipy.linalg.solve(A, rhs, assume_a="sym", overwrite_a=True)
        W = G @ C
        T = Y + W
        iterations += 1

        Np = float(e.P1.sum())
        sigma2 = (
            e.Pt1 @ np.sum(X * X, axis=1)
            - 2 * np.sum(e.PX * T)
            + e.P1 @ np.sum(T * T, axis=1)
        ) / (Np * D)
        if not np.isfinite(sigma2) or not np.all(np.isfinite(W)):
            raise NumericalCollapse("variance or displacement became non-finite", iterations)
        sigma2 = max(sigma2, SIGMA2_FLOOR)

    displacement = (T * x_scale + x_mean) - Y0
    return CpdResult(displacement, history[-1], iterations, float(sigma2), history)


class CoherentPointDrift(BaseEstimator):
    """Estimator wrapper around :func:`cpd_register`.

    ``fit(source, target)`` stores ``displacement_``, ``registered_``
    (``source + displacement_``), ``objective_``, ``n_iter_`` and
    ``objective_history_``.
    """

    def __init__(self, alpha=2.0, kernel_beta=2.0, max_iters=100, tol=1e-7, w=0.0):
        self.alpha = alpha
        self.kernel_beta = kernel_beta
        self.max_iters = max_iters
        self.tol = tol
        self.w = w

    def config(self):
        return CpdConfig(self.alpha, self.kernel_beta, self.max_iters, self.tol, self.w)

    def fit(self, source, target):
        source = check_points(source, "source")
        result = cpd_register(source, target, self.config())
        self.displacement_ = result.displacement
        self.registered_ = source + result.displacement
        self.objective_ = result.objective
        self.n_iter_ = result.iterations
        self.objective_history_ = np.asarray(result.history)
        return self
