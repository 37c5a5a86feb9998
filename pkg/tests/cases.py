"""Seeded random configurations shared by unit and acceptance tests."""

import numpy as np

from liverreg.deform import KnnGraph, fps_sample, knn_graph, loss_cre, loss_iso, shape_loss
from liverreg.geom import CameraModel, project_camera_frame

from oracles import central_diff, rel_error

SMALL_CAM = CameraModel(40.0, 40.0, 12.0, 12.0, 24, 24)
SIGMA = 2.0


def cre_case(seed):
    rng = np.random.default_rng([seed, 1])
    cam = CameraModel(300.0, 280.0, 64.0, 60.0, 128, 128)
    X = rng.uniform(-1, 1, size=(rng.integers(1, 12), 3)) + [0, 0, 5]
    x = project_camera_frame(X, cam) + rng.normal(scale=4.0, size=(X.shape[0], 2))
    f = lambda P: loss_cre(P, x, cam)[0]  # noqa: E731
    return X, f, loss_cre(X, x, cam)[1]


def iso_case(seed):
    rng = np.random.default_rng([seed, 2])
    rest = rng.normal(size=(40, 3))
    graph: KnnGraph = knn_graph(rest, fps_sample(rest, 15, seed=seed), 4)
    P = rest + rng.normal(scale=0.2, size=rest.shape)
    f = lambda Q: loss_iso(rest, Q, graph)[0]  # noqa: E731
    return P, f, loss_iso(rest, P, graph)[1]


def _truncation_margin(P, cam, sigma):
    """Smallest gap between any splat-to-pixel distance and the 3 sigma cutoff."""
    uv = project_camera_frame(P, cam)
    cols, rows = np.meshgrid(np.arange(cam.width) + 0.5, np.arange(cam.height) + 0.5)
    centers = np.c_[cols.ravel(), rows.ravel()]
    d = np.linalg.norm(uv[:, None, :] - centers[None], axis=2)
    return float(np.min(np.abs(d - 3 * sigma)))


def ls_case(seed):
    """Dice-of-splats configuration away from the kernel cutoff.

    The truncated kernel jumps at exactly 3 sigma, so a finite difference
    straddling the cutoff measures the jump, not the derivative. Redraw until
    every splat-pixel distance clears the cutoff by well over h.
    """
    rng = np.random.default_rng([seed, 3])
    cam = SMALL_CAM
    target = rng.random((cam.height, cam.width)) < 0.4
    while True:
        P = np.c_[rng.uniform(-1.5, 1.5, size=(6, 2)), rng.uniform(4, 6, size=6)]
        P[:, :2] *= P[:, 2:] / 5.0
        if _truncation_margin(P, cam, SIGMA) > 1e-3:
            break
    f = lambda Q: shape_loss(Q, target, cam, SIGMA)[0]  # noqa: E731
    return P, f, shape_loss(P, target, cam, SIGMA)[1]


def fd_check(case, seed, h=1e-5):
    x, f, grad = case(seed)
    return rel_error(grad, central_diff(f, x, h))
