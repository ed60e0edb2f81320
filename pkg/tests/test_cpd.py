import numpy as np
import pytest
from sklearn.base import clone

from iwarp.cpd import CoherentPointDrift, CpdConfig, cpd_register, gaussian_kernel
from iwarp.exceptions import InputError
from iwarp.geometry import one_sided_chamfer
from iwarp.mesh import sample_surface_even


def reference_cpd(Y0, X0, alpha, beta, iters):
    """Textbook non-rigid CPD (w = 0) on bbox-normalized clouds, fixed iteration count."""

    def normalize(P):
        m = P.mean(0)
        s = np.linalg.norm(P.max(0) - P.min(0))
        return (P - m) / s, m, s

    Y, _, _ = normalize(Y0)
    X, xm, xs = normalize(X0)
    M, N, D = len(Y), len(X), 3
    G = np.exp(-np.sum((Y[:, None] - Y[None]) ** 2, axis=2) / (2 * beta**2))
    sigma2 = np.sum((X[None, :, :] - Y[:, None, :]) ** 2) / (D * M * N)
    W = np.zeros_like(Y)
    for _ in range(iters):
        T = Y + G @ W
        P = np.exp(-np.sum((X[None] - T[:, None]) ** 2, axis=2) / (2 * sigma2))
        P /= P.sum(axis=0, keepdims=True)
        P1, Pt1, PX = P.sum(1), P.sum(0), P @ X
        W = np.linalg.solve(np.diag(P1) @ G + alpha * sigma2 * np.eye(M), PX - P1[:, None] * Y)
        T = Y + G @ W
        sigma2 = (Pt1 @ np.sum(X * X, 1) - 2 * np.sum(PX * T) + P1 @ np.sum(T * T, 1)) / (P1.sum() * D)
    return (Y + G @ W) * xs + xm - Y0


def test_kernel_trivial_values():
    G = gaussian_kernel(np.array([[0, 0, 0], [np.sqrt(2) * 0.5, 0, 0]]), 0.5)
    np.testing.assert_allclose(np.diag(G), 1.0)
    assert G[0, 1] == pytest.approx(np.exp(-1.0), rel=1e-15)
    with pytest.raises(InputError):
        gaussian_kernel(np.zeros((2, 3)), 0.0)


@pytest.mark.parametrize("seed", range(3))
def test_matches_reference_implementation(seed):
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=(40, 3))
    X = 1.2 * Y[:35] + 0.1 * rng.normal(size=(35, 3)) + [0.3, -0.2, 0.1]
    for iters in (1, 5, 20):
        res = cpd_register(Y, X, CpdConfig(alpha=2.0, kernel_beta=0.7, max_iters=iters, tol=0.0))
        assert res.iterations == iters
        ref = reference_cpd(Y, X, 2.0, 0.7, iters)
        np.testing.assert_allclose(res.displacement, ref, rtol=1e-8, atol=1e-10)


def test_objective_non_increasing(mug_family):
    meshes, _ = mug_family
    Y, _ = sample_surface_even(meshes[0], 300, 0)
    X, _ = sample_surface_even(meshes[1], 300, 1)
    res = cpd_register(Y, X)
    h = np.asarray(res.history)
    assert len(h) == res.iterations + 1
    assert np.all(np.diff(h) <= 1e-9 * np.abs(h[:-1]))


def test_cross_instance_reaches_sampling_floor(mug_family):
    meshes, _ = mug_family
    Y, _ = sample_surface_even(meshes[0], 400, 0)
    X, _ = sample_surface_even(meshes[3], 400, 1)
    # a second sample of the target mesh bounds what any warp can achieve
    floor = one_sided_chamfer(sample_surface_even(meshes[3], 400, 2)[0], X)
    before = one_sided_chamfer(Y, X)
    after = one_sided_chamfer(Y + cpd_register(Y, X).displacement, X)
    assert after < 0.7 * before
    assert after < 1.3 * floor


def test_self_registration_is_near_identity(rng):
    Y = rng.normal(size=(150, 3))
    res = cpd_register(Y, Y)
    diag = np.linalg.norm(Y.max(0) - Y.min(0))
    assert np.sqrt(np.mean(np.sum(res.displacement**2, axis=1))) < 1e-4 * diag


def test_translation_and_scale_equivariance(rng):
    Y = rng.normal(size=(60, 3))
    X = Y + 0.2 * np.sin(Y)
    cfg = CpdConfig(max_iters=30)
    base = cpd_register(Y, X, cfg).displacement
    c, a, b = 3.5, np.array([1.0, -2.0, 0.5]), np.array([-4.0, 0.0, 2.0])
    moved = cpd_register(c * Y + a, c * X + b, cfg).displacement
    np.testing.assert_allclose(moved, c * base + (b - a), atol=1e-8)


def test_outlier_weight_runs_and_validates(rng):
    Y = rng.normal(size=(30, 3))
    X = np.concatenate([Y + 0.05, rng.uniform(-5, 5, (5, 3))])
    res = cpd_register(Y, X, CpdConfig(w=0.2, max_iters=20))
    assert np.all(np.isfinite(res.displacement))
    for bad in ({"alpha": 0}, {"kernel_beta": -1}, {"max_iters": 0}, {"tol": -1}, {"w": 1.0}):
        with pytest.raises(InputError):
            CpdConfig(**bad)


def test_estimator(rng):
    Y = rng.normal(size=(30, 3))
    X = Y + 0.1
    est = CoherentPointDrift(max_iters=50).fit(Y, X)
    np.testing.assert_allclose(est.registered_, Y + est.displacement_)
    assert est.n_iter_ <= 50 and len(est.objective_history_) == est.n_iter_ + 1
    twin = clone(est)
    assert twin.get_params() == est.get_params() and not hasattr(twin, "displacement_")
