"""Joint latent shape and pose inference from an observed point cloud.

The decoded cloud of a restart is

    X = ((canonical + mean + basis @ v) * s) @ R_init.T @ R.T + t

with ``R = gram_schmidt(r[0], r[1])`` and ``R_init`` a random initial
rotation. Each restart runs Adam on ``(v, s, t, r)`` against

    L = mean_k min_l |obs_k - X_l|^2 + beta * max_l |X_l|^2

in the frame where the observation is centered. Gradients are analytic; the
nearest-neighbor assignment and the arg-max of the size term are treated as
constant within a step.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DegenerateBasis, InferenceFailed, InputError, NonFiniteGradient
from .geometry import gram_schmidt, icosahedral_rotations, one_sided_chamfer, random_rotation
from .validation import check_count, check_points
from .warp import ShapeParams

PARAM_NAMES = ("v", "s", "t", "r")


@dataclass(frozen=True)
class InferenceConfig:
    restarts: int = 12
    steps: int = 100
    lr: float = 1e-2
    beta: float = 1e-2
    subsample: int = 1000
    seed: int = 0

    def __post_init__(self):
        for name in ("restarts", "steps", "subsample"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise InputError(f"{name} must be a positive integer, got {value}")
        if not self.lr > 0:
            raise InputError(f"lr must be > 0, got {self.lr}")
        if not self.beta >= 0:
            raise InputError(f"beta must be >= 0, got {self.beta}")


@dataclass
class ShapePoseEstimate:
    params: ShapeParams
    loss: float
    restart_index: int
    mesh: object
    restart_losses: list
    centroid: np.ndarray
    restart_rotations: list = None


class Adam:
    """Adam with bias correction; updates a dict of arrays in place."""

    def __init__(self, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(name)
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m, v = self.m[name], self.v[name]
            if m.shape != g.shape:
                raise InputError(f"gradient shape {g.shape} does not match {name} {m.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[name] -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
        return params


def inference_loss(decoded, observed, beta):
    """Squared one-sided Chamfer from ``decoded`` to ``observed`` plus the size term.

    Both clouds must already be expressed in the observation-centered frame.
    """
    decoded = check_points(decoded, "decoded")
    observed = check_points(observed, "observed")
    d, _ = cKDTree(decoded).query(observed)
    return float(np.mean(d * d) + beta * np.max(np.sum(decoded * decoded, axis=1)))


def _gram_schmidt_backward(r, grad_R):
    """Gradient w.r.t. ``r`` (2 x 3) of a loss with gradient ``grad_R`` w.r.t. ``R``."""
    u, w = r[0], r[1]
    nu = np.linalg.norm(u)
    u1 = u / nu
    w_perp = w - (u1 @ w) * u1
    nw = np.linalg.norm(w_perp)
    w1 = w_perp / nw
    g_u1, g_w1, g_x = grad_R[0].copy(), grad_R[1].copy(), grad_R[2]
    # third row = u1 x w1
    g_u1 += np.cross(w1, g_x)
    g_w1 += np.cross(g_x, u1)
    g_wp = (g_w1 - w1 * (w1 @ g_w1)) / nw
    g_w = g_wp - u1 * (u1 @ g_wp)
    g_u1 -= (u1 @ w) * g_wp + w * (u1 @ g_wp)
    g_u = (g_u1 - u1 * (u1 @ g_u1)) / nu
    return np.stack([g_u, g_w])


class _Problem:
    """Decoder restricted to the quantities one restart needs."""

    def __init__(self, space, observed_centered, beta):
        self.base = space.canonical.points + space.mean.reshape(-1, 3)
        self.basis = space.basis.reshape(-1, 3, space.latent_dim)
        self.obs = observed_centered
        self.beta = beta

    def forward(self, p, R_init, idx=None):
        # Rotation and translation live in the frame of R_init, so the
        # world-frame pair is (R_init R R_init^T, R_init t). This spans the
        # same decoded clouds and makes every restart equivariant to rigid
        # motions of the observation (Adam is not rotation invariant).
        base = self.base if idx is None else self.base[idx]
        basis = self.basis if idx is None else self.basis[idx]
        P = base + basis @ p["v"]
        R = gram_schmidt(p["r"][0], p["r"][1])
        A = R.T @ R_init.T
        Q = P * p["s"]
        X = Q @ A + p["t"] @ R_init.T
        return P, Q, A, R, X, basis

    def loss_and_grad(self, p, R_init, idx=None, assignment=None):
        """Loss, gradient dict and the (nn, argmax) assignment used.

        Passing ``assignment`` freezes the nearest neighbors and the arg-max,
        which makes the loss a smooth function of the parameters.
        """
        P, Q, A, R, X, basis = self.forward(p, R_init, idx)
        sq = np.sum(X * X, axis=1)
        if assignment is None:
            _, nn = cKDTree(X).query(self.obs)
            assignment = (nn, int(np.argmax(sq)))
        nn, j = assignment
        diff = X[nn] - self.obs
        m = len(self.obs)
        loss = float(np.sum(diff * diff) / m + self.beta * sq[j])

        G = np.zeros_like(X)
        np.add.at(G, nn, (2.0 / m) * diff)
        G[j] += 2.0 * self.beta * X[j]

        g_t = G.sum(axis=0) @ R_init
        g_A = Q.T @ G
        GA = G @ A.T
        g_s = np.sum(P * GA, axis=0)
        g_P = GA * p["s"]
        g_v = np.einsum("lc,lcd->d", g_P, basis)
        # A = R^T R_init^T  =>  dL/dR = (dL/dA R_init)^T
        g_R = (g_A @ R_init).T
        g_r = _gram_schmidt_backward(p["r"], g_R)
        return loss, {"v": g_v, "s": g_s, "t": g_t, "r": g_r}, assignment

    def full_loss(self, p, R_init):
        *_, X, _ = self.forward(p, R_init)
        return inference_loss(X, self.obs, self.beta)


def initial_params(d):
    return {
        "v": np.zeros(d),
        "s": np.ones(3),
        "t": np.zeros(3),
        "r": np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
    }


def restart_rng(seed, index):
    return np.random.default_rng([int(seed), int(index)])


def _run_restart(problem, cfg, index, R_init=None):
    rng = restart_rng(cfg.seed, index)
    if R_init is None:
        R_init = random_rotation(rng)
    else:
        # Keep the subsampling stream aligned with the seeded schedule.
        random_rotation(rng)
    n = len(problem.base)
    p = initial_params(problem.basis.shape[2])
    opt = Adam(cfg.lr)
    sub = min(cfg.subsample, n)
    for _ in range(cfg.steps):
        idx = None if sub == n else rng.choice(n, size=sub, replace=False)
        try:
            _, grads, _ = problem.loss_and_grad(p, R_init, idx)
        except DegenerateBasis:
            return np.inf, p, R_init
        opt.step(p, grads)
    try:
        loss = problem.full_loss(p, R_init)
    except DegenerateBasis:
        return np.inf, p, R_init
    if not np.isfinite(loss) or np.any(p["s"] <= 0) or not all(np.all(np.isfinite(x)) for x in p.values()):
        loss = np.inf
    return loss, p, R_init


def infer_shape_pose(space, observed, cfg=None, init_rotations=None, n_jobs=1):
    """Fit latent shape, scale and pose of ``space`` to an observed cloud.

    Parameters
    ----------
    space : WarpSpace
    observed : array_like (m, 3)
        Possibly partial observation, in workspace coordinates.
    cfg : InferenceConfig, optional
    init_rotations : sequence of (3, 3) arrays, optional
        Override the seeded initial rotation of each restart (the
        subsampling streams are unchanged).
    n_jobs : int
        Restarts to run concurrently; the result does not depend on it.

    Returns
    -------
    ShapePoseEstimate
        Parameters in workspace coordinates: ``R = R_init @ R_opt`` and
        ``t = R_init @ t_opt + centroid``.
    """
    cfg = cfg or InferenceConfig()
    observed = check_points(observed, "observed")
    centroid = observed.mean(axis=0)
    problem = _Problem(space, observed - centroid, cfg.beta)
    if init_rotations is not None and len(init_rotations) != cfg.restarts:
        raise InputError("need one initial rotation per restart")

    def run(i):
        R0 = None if init_rotations is None else np.asarray(init_rotations[i], dtype=np.float64)
        return _run_restart(problem, cfg, i, R0)

    if n_jobs == 1:
        results = [run(i) for i in range(cfg.restarts)]
    else:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(run, range(cfg.restarts)))

    losses = [float(r[0]) for r in results]
    if not np.any(np.isfinite(losses)):
        raise InferenceFailed(losses)
    best = int(np.argmin(losses))
    loss, p, R_init = results[best]
    R = R_init @ gram_schmidt(p["r"][0], p["r"][1])
    params = ShapeParams(p["v"].copy(), p["s"].copy(), R, R_init @ p["t"] + centroid)
    rotations = [_composed_rotation(q, R0) if np.isfinite(l) else None for l, q, R0 in results]
    return ShapePoseEstimate(params, loss, best, space.reconstruct_mesh(params), losses, centroid, rotations)


def _composed_rotation(p, R_init):
    try:
        return R_init @ gram_schmidt(p["r"][0], p["r"][1])
    except DegenerateBasis:
        return None


def infer_shape_pose_screened(space, observed, cfg=None, candidates=None, screen_steps=40, n_jobs=1):
    """Two-stage rotation search around :func:`infer_shape_pose`.

    Every candidate initial rotation (default: the 60 icosahedral
    rotations) gets a short run of ``screen_steps`` steps; the ``cfg.restarts``
    lowest-loss runs are then restarted from their final rotations with the
    full ``cfg.steps``. This covers SO(3) evenly at a fraction of the cost
    of as many full restarts.
    """
    cfg = cfg or InferenceConfig()
    candidates = icosahedral_rotations() if candidates is None else np.asarray(candidates, dtype=np.float64)
    screen_steps = check_count(screen_steps, "screen_steps")
    if cfg.restarts > len(candidates):
        raise InputError(f"restarts={cfg.restarts} exceeds the {len(candidates)} candidate rotations")
    screen = replace(cfg, restarts=len(candidates), steps=screen_steps)
    first = infer_shape_pose(space, observed, screen, candidates, n_jobs)
    order = [k for k in np.argsort(first.restart_losses, kind="stable") if first.restart_rotations[k] is not None]
    rotations = [first.restart_rotations[k] for k in order[: cfg.restarts]]
    if len(rotations) < cfg.restarts:
        raise InferenceFailed(first.restart_losses)
    return infer_shape_pose(space, observed, cfg, rotations, n_jobs)


class ShapePoseEstimator(BaseEstimator):
    """Estimator form of :func:`infer_shape_pose` for a fixed warp space.

    ``fit(observed)`` stores ``estimate_``; ``predict()`` returns the decoded
    complete cloud and ``predict_mesh()`` the reconstructed mesh.

    Parameters
    ----------
    space : WarpSpace
    restarts, steps, lr, beta, subsample, random_state
        See :class:`InferenceConfig`.
    rotation_search : {"random", "icosahedral"}
        Seeded random initial rotations, or the screened icosahedral search
        of :func:`infer_shape_pose_screened`.
    screen_steps : int
        Steps per candidate in the icosahedral screen.
    n_jobs : int
    """

    def __init__(
        self,
        space=None,
        restarts=12,
        steps=100,
        lr=1e-2,
        beta=1e-2,
        subsample=1000,
        random_state=0,
        rotation_search="random",
        screen_steps=40,
        n_jobs=1,
    ):
        self.space = space
        self.restarts = restarts
        self.steps = steps
        self.lr = lr
        self.beta = beta
        self.subsample = subsample
        self.random_state = random_state
        self.rotation_search = rotation_search
        self.screen_steps = screen_steps
        self.n_jobs = n_jobs

    def config(self):
        return InferenceConfig(self.restarts, self.steps, self.lr, self.beta, self.subsample, self.random_state)

    def fit(self, observed, y=None):
        if self.space is None:
            raise InputError("ShapePoseEstimator needs a warp space")
        if self.rotation_search == "icosahedral":
            self.estimate_ = infer_shape_pose_screened(self.space, observed, self.config(), screen_steps=self.screen_steps, n_jobs=self.n_jobs)
        elif self.rotation_search == "random":
            self.estimate_ = infer_shape_pose(self.space, observed, self.config(), n_jobs=self.n_jobs)
        else:
            raise InputError(f"unknown rotation_search {self.rotation_search!r}")
        self.params_ = self.estimate_.params
        self.loss_ = self.estimate_.loss
        return self

    def predict(self, X=None):
        check_is_fitted(self, "estimate_")
        return self.space.decode(self.params_)

    def predict_mesh(self):
        check_is_fitted(self, "estimate_")
        return self.estimate_.mesh

    def score(self, observed, y=None):
        """Negative squared one-sided Chamfer from the decoded cloud to ``observed``."""
        return -one_sided_chamfer(self.predict(), observed)
