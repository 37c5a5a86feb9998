import numpy as np
import pytest

from liverreg.correspondence import CorrespondenceSet
from liverreg.errors import DegenerateConfiguration, InvalidParams, TooFewCorrespondences
from liverreg.geom import CameraModel, RigidPose, apply_pose, project, rotation_error_deg
from liverreg.pnp import (
    RansacConfig,
    adaptive_iterations,
    epnp_solve,
    ransac_pnp,
    reprojection_errors,
)

from oracles import random_rotation

CAM = CameraModel(500.0, 500.0, 320.0, 240.0, 640, 480)


def scene(rng, n, planar=False):
    """Random points in front of a random camera, with exact pixels."""
    X = rng.uniform(-1, 1, size=(n, 3))
    if planar:
        X[:, 2] = 0.0
    pose = RigidPose(random_rotation(rng), np.array([0, 0, 6.0]) + rng.normal(scale=0.3, size=3))
    return X, project(X, pose, CAM), pose


def cset(X, x):
    n = len(X)
    return CorrespondenceSet(np.arange(n), np.arange(n), X, x, np.ones(n))


def test_identity_recovery():
    rng = np.random.default_rng(0)
    Xc = rng.uniform(-1, 1, size=(6, 3)) + [0, 0, 5]
    pose = epnp_solve(cset(Xc, project(Xc, RigidPose.identity(), CAM)), CAM)
    assert np.allclose(pose.R, np.eye(3), atol=1e-6)
    assert np.allclose(pose.t, 0, atol=1e-6)


def test_construct_and_invert():
    rng = np.random.default_rng(1)
    Xc = rng.uniform(-1, 1, size=(8, 3)) + [0, 0, 5]
    x = project(Xc, RigidPose.identity(), CAM)
    R, t = random_rotation(rng), rng.normal(size=3)
    Xw = Xc @ R.T + t  # the world frame is the camera frame moved by (R, t)
    pose = epnp_solve(cset(Xw, x), CAM)
    truth = RigidPose(R, t).inverse()
    assert rotation_error_deg(pose.R, truth.R) < 1e-4
    assert np.linalg.norm(pose.t - truth.t) < 1e-4 * np.linalg.norm(truth.t)


def test_planar_four_points():
    rng = np.random.default_rng(2)
    X, x, _ = scene(rng, 4, planar=True)
    pose = epnp_solve(cset(X, x), CAM)
    assert reprojection_errors(X, x, pose, CAM).mean() < 1e-6


@pytest.mark.parametrize("n", [4, 6, 10, 50])
def test_exact_data_reprojection(n):
    rng = np.random.default_rng(100 + n)
    worst = 0.0
    for _ in range(100):
        X, x, _ = scene(rng, n)
        pose = epnp_solve(cset(X, x), CAM)
        worst = max(worst, reprojection_errors(X, x, pose, CAM).mean())
    assert worst < 1e-6


def test_too_few_and_degenerate():
    rng = np.random.default_rng(3)
    X, x, _ = scene(rng, 3)
    with pytest.raises(TooFewCorrespondences):
        epnp_solve(cset(X, x), CAM)
    line = np.outer(np.linspace(-1, 1, 6), [1.0, 0.5, 0.2])
    xl = project(line, RigidPose(np.eye(3), [0, 0, 5]), CAM)
    with pytest.raises(DegenerateConfiguration):
        epnp_solve(cset(line, xl), CAM)


def test_ransac_exact_inliers():
    rng = np.random.default_rng(4)
    X, x, truth = scene(rng, 20)
    est = ransac_pnp(cset(X, x), CAM, RansacConfig())
    assert est.inlier_indices.tolist() == list(range(20))
    assert rotation_error_deg(est.pose.R, truth.R) < 1e-4
    assert np.linalg.norm(est.pose.t - truth.t) < 1e-4 * np.linalg.norm(truth.t)


def test_ransac_rejects_outliers():
    rng = np.random.default_rng(5)
    X, x, truth = scene(rng, 30)
    x = x.copy()
    ang = rng.uniform(0, 2 * np.pi, 10)
    x[20:] += rng.uniform(50, 80, 10)[:, None] * np.c_[np.cos(ang), np.sin(ang)]
    est = ransac_pnp(cset(X, x), CAM, RansacConfig(inlier_threshold_px=5.0))
    assert est.inlier_indices.tolist() == list(range(20))
    assert rotation_error_deg(est.pose.R, truth.R) < 1e-4


def test_ransac_too_few():
    rng = np.random.default_rng(6)
    X, x, _ = scene(rng, 3)
    with pytest.raises(TooFewCorrespondences):
        ransac_pnp(cset(X, x), CAM, RansacConfig())


def test_ransac_deterministic():
    rng = np.random.default_rng(7)
    X, x, _ = scene(rng, 25)
    x = x + rng.normal(scale=0.5, size=x.shape)
    a = ransac_pnp(cset(X, x), CAM, RansacConfig(rng_seed=3))
    b = ransac_pnp(cset(X, x), CAM, RansacConfig(rng_seed=3))
    assert np.array_equal(a.pose.R, b.pose.R) and np.array_equal(a.pose.t, b.pose.t)


def test_refinement_does_not_hurt_under_noise():
    rng = np.random.default_rng(8)
    X, x, _ = scene(rng, 40)
    x = x + rng.normal(scale=1.0, size=x.shape)
    est = ransac_pnp(cset(X, x), CAM, RansacConfig())
    raw = reprojection_errors(X, x, est.unrefined_pose, CAM)[est.inlier_indices].mean()
    assert est.mean_reprojection_error_px <= raw + 1e-9


def test_adaptive_iterations():
    assert adaptive_iterations(1.0, 0.99, 4) <= 1
    k = adaptive_iterations(0.5, 0.99, 4)
    assert k == pytest.approx(np.log(0.01) / np.log(1 - 0.5**4))


def test_ransac_config_validation():
    with pytest.raises(InvalidParams):
        RansacConfig(confidence=1.0)
    with pytest.raises(InvalidParams):
        RansacConfig(inlier_threshold_px=0.0)


def test_reprojection_errors_behind_camera_are_infinite():
    X = np.array([[0, 0, 1.0], [0, 0, -1.0]])
    e = reprojection_errors(X, np.array([[320, 240.0], [0, 0]]), RigidPose.identity(), CAM)
    assert e[0] == 0.0 and np.isinf(e[1])
    assert np.array_equal(apply_pose(X, RigidPose.identity()), X)
