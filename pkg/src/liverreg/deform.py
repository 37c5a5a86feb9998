"""Non-rigid refinement of a posed point cloud.

The displacement field is optimized directly (no decoder network) by
gradient descent with momentum on

    L_def = L_s + lambda_cre * L_cre + lambda_iso * L_iso

where L_s is a soft Dice loss between the splatted silhouette of the
deformed cloud and a target mask, L_cre is the squared reprojection error of
matched landmarks and L_iso penalizes changes of squared edge lengths on a
fixed kNN graph over a farthest-point subset.

All gradients are analytic. Pixel (row r, column c) has its center at
(u, v) = (c + 0.5, r + 0.5).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from liverreg.correspondence import CorrespondenceSet
from liverreg.errors import (
    DimensionMismatch,
    EmptyCorrespondences,
    InvalidCount,
    InvalidK,
    InvalidParams,
    LengthMismatch,
)
from liverreg.geom import MIN_DEPTH, CameraModel, as_points, project_camera_frame, projection_jacobian

logger = logging.getLogger(__name__)

DICE_EPS = 1e-7
TRUNCATION_SIGMAS = 3.0
MAX_BACKTRACKS = 20
CONVERGENCE_WINDOW = 10


@dataclass(frozen=True)
class RtoConfig:
    # Dice gradients on a ~100x100 px silhouette are ~1e-4 per point; a
    # sub-millimeter step leaves the silhouette term inert within max_steps.
    step_size: float = 10.0
    max_steps: int = 500
    lambda_cre: float = 0.5
    lambda_iso: float = 0.5
    splat_sigma_px: float = 2.0
    fps_count: int = 512
    knn_k: int = 8
    convergence_tol: float = 1e-6
    momentum: float = 0.9
    knn_source: str = "subset"
    seed: int = 0

    def __post_init__(self):
        if not self.step_size > 0:
            raise InvalidParams("step_size must be > 0")
        if self.max_steps < 0:
            raise InvalidParams("max_steps must be >= 0")
        if self.lambda_cre < 0 or self.lambda_iso < 0:
            raise InvalidParams("loss weights must be >= 0")
        if not self.splat_sigma_px > 0:
            raise InvalidParams("splat_sigma_px must be > 0")
        if self.fps_count < 2 or self.knn_k < 1:
            raise InvalidParams("fps_count must be >= 2 and knn_k >= 1")
        if not 0 <= self.momentum < 1:
            raise InvalidParams("momentum must lie in [0, 1)")
        if self.knn_source not in ("subset", "full"):
            raise InvalidParams("knn_source must be 'subset' or 'full'")


@dataclass(frozen=True)
class FpsSubset:
    indices: np.ndarray
    rest: np.ndarray

    def __len__(self):
        return int(self.indices.size)


@dataclass(frozen=True)
class KnnGraph:
    """Fixed neighbour lists; ``centers`` and ``neighbors`` are cloud indices."""

    centers: np.ndarray
    neighbors: np.ndarray

    @property
    def k(self) -> int:
        return int(self.neighbors.shape[1])


@dataclass
class RtoResult:
    displacements: np.ndarray
    trace: list = field(default_factory=list)
    stop_reason: str = ""

    @property
    def objective(self) -> np.ndarray:
        return np.array([row[4] for row in self.trace])


# -- sampling and graph ---------------------------------------------------------


def fps_sample(points, m: int, seed: int = 0, first: int | None = None) -> FpsSubset:
    """Greedy farthest-point sampling.

    The first index comes from a generator seeded with ``seed`` unless
    ``first`` is given; later picks maximize the distance to the chosen set,
    ties going to the lowest index.
    """
    P = as_points(points)
    n = P.shape[0]
    if not 2 <= m <= n:
        raise InvalidCount(f"m must satisfy 2 <= m <= {n}, got {m}")
    if first is None:
        first = int(np.random.default_rng(seed).integers(n))
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = first
    d2 = np.sum((P - P[first]) ** 2, axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(d2))
        chosen[i] = nxt
        d2 = np.minimum(d2, np.sum((P - P[nxt]) ** 2, axis=1))
    return FpsSubset(chosen, P[chosen].copy())


def knn_graph(points, subset: FpsSubset, k: int, source: str = "subset") -> KnnGraph:
    """k nearest neighbours of every subset point, measured on rest positions.

    With ``source="subset"`` neighbours are other subset points, with
    ``source="full"`` any other cloud point qualifies. Ties go to the lowest
    cloud index.
    """
    P = as_points(points)
    centers = subset.indices
    pool = centers if source == "subset" else np.arange(P.shape[0])
    if not 1 <= k < pool.size:
        raise InvalidK(f"k must satisfy 1 <= k < {pool.size}, got {k}")
    # sort the pool by cloud index so that a stable sort breaks ties by index
    pool = np.sort(pool)
    d2 = np.sum((P[centers][:, None, :] - P[pool][None, :, :]) ** 2, axis=2)
    d2[pool[None, :] == centers[:, None]] = np.inf
    order = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return KnnGraph(centers.copy(), pool[order])


# -- losses ---------------------------------------------------------------------


def loss_cre(deformed3d, pixels, cam: CameraModel):
    """Mean squared reprojection error of camera-frame landmarks.

    Returns ``(value, gradient)`` with the gradient shaped like ``deformed3d``.
    """
    X = np.asarray(deformed3d, dtype=float).reshape(-1, 3)
    x = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if X.shape[0] == 0:
        raise EmptyCorrespondences("loss_cre needs at least one correspondence")
    if X.shape[0] != x.shape[0]:
        raise LengthMismatch(f"{X.shape[0]} points vs {x.shape[0]} pixels")
    r = project_camera_frame(X, cam) - x
    M = X.shape[0]
    value = float(np.sum(r**2) / M)
    J = projection_jacobian(X, cam)
    grad = (2.0 / M) * np.einsum("nij,ni->nj", J, r)
    return value, grad


def loss_iso(rest, deformed, graph: KnnGraph):
    """Squared-edge-length distortion on the kNN graph.

    ``rest`` and ``deformed`` are full clouds indexed like the graph. The sum
    runs over directed edges and is divided by m(m-1) for m graph centers.
    """
    P0 = np.asarray(rest, dtype=float)
    P1 = np.asarray(deformed, dtype=float)
    i = np.repeat(graph.centers, graph.k)
    j = graph.neighbors.reshape(-1)
    keep = i != j
    i, j = i[keep], j[keep]
    m = graph.centers.size
    norm = 1.0 / (m * (m - 1))
    e1 = P1[i] - P1[j]
    e0 = P0[i] - P0[j]
    diff = np.sum(e1**2, axis=1) - np.sum(e0**2, axis=1)
    value = float(norm * np.sum(diff**2))
    g_edge = (4.0 * norm * diff)[:, None] * e1
    grad = np.zeros_like(P1)
    np.add.at(grad, i, g_edge)
    np.add.at(grad, j, -g_edge)
    return value, grad


class _Splats:
    """Sparse point/pixel kernel weights of a truncated Gaussian splat."""

    def __init__(self, points_cam, cam: CameraModel, sigma: float):
        P = np.asarray(points_cam, dtype=float).reshape(-1, 3)
        self.shape = (cam.height, cam.width)
        self.n_points = P.shape[0]
        radius = TRUNCATION_SIGMAS * sigma
        reach = int(math.ceil(radius)) + 1
        front = np.flatnonzero(P[:, 2] > MIN_DEPTH)
        uv = project_camera_frame(P[front], cam) if front.size else np.zeros((0, 2))
        # splats whose window cannot touch the image are dropped
        near = ((uv[:, 0] > -reach) & (uv[:, 0] < cam.width + reach)
                & (uv[:, 1] > -reach) & (uv[:, 1] < cam.height + reach))
        front, uv = front[near], uv[near]
        off = np.arange(-reach, reach + 1)
        oc, orow = np.meshgrid(off, off)
        oc, orow = oc.reshape(-1), orow.reshape(-1)
        base_c = np.floor(uv[:, 0]).astype(np.int64)
        base_r = np.floor(uv[:, 1]).astype(np.int64)
        col = base_c[:, None] + oc[None, :]
        row = base_r[:, None] + orow[None, :]
        dx = (col + 0.5) - uv[:, 0:1]
        dy = (row + 0.5) - uv[:, 1:2]
        d2 = dx**2 + dy**2
        keep = (d2 <= radius**2) & (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
        pt = np.broadcast_to(np.arange(front.size)[:, None], keep.shape)[keep]
        self.point = front[pt]
        self.pixel = (row * cam.width + col)[keep]
        self.dx = dx[keep]
        self.dy = dy[keep]
        a = d2[keep] / (2.0 * sigma**2)
        self.w = np.exp(-a)
        self.f = -np.expm1(-a)  # 1 - w without cancellation
        self.sigma = sigma
        self.front = front
        self.front_points = P[front]
        self.cam = cam
        npix = self.shape[0] * self.shape[1]
        zero = self.f == 0.0
        self.zeros = np.bincount(self.pixel[zero], minlength=npix)
        logf = np.zeros_like(self.f)
        logf[~zero] = np.log(self.f[~zero])
        self.logf = logf
        self.logsum = np.bincount(self.pixel, weights=logf, minlength=npix)

    def occupancy(self) -> np.ndarray:
        empty = np.where(self.zeros == 0, np.exp(self.logsum), 0.0)
        return (1.0 - empty).reshape(self.shape)

    def others_product(self) -> np.ndarray:
        """Per entry, product of (1 - w) over all *other* splats on that pixel."""
        z = self.zeros[self.pixel]
        s = self.logsum[self.pixel]
        nonzero = self.f > 0
        out = np.where(nonzero & (z == 0), np.exp(s - self.logf), 0.0)
        out = np.where(~nonzero & (z == 1), np.exp(s), out)
        return out

    def backprop(self, grad_occ) -> np.ndarray:
        """Chain d(loss)/d(occupancy) back to camera-frame point positions."""
        g = np.asarray(grad_occ, dtype=float).reshape(-1)[self.pixel] * self.others_product()
        # d w / d(u, v) = w * (q - uv) / sigma^2
        coef = g * self.w / self.sigma**2
        gu = np.bincount(self.point, weights=coef * self.dx, minlength=self.n_points)
        gv = np.bincount(self.point, weights=coef * self.dy, minlength=self.n_points)
        grad = np.zeros((self.n_points, 3))
        if self.front.size:
            guv = np.stack([gu[self.front], gv[self.front]], axis=1)
            J = projection_jacobian(self.front_points, self.cam)
            grad[self.front] = np.einsum("ni,nij->nj", guv, J)
        return grad


def soft_rasterize(points_cam, cam: CameraModel, sigma_px: float = 2.0) -> np.ndarray:
    """Soft silhouette: occupancy(q) = 1 - prod_i (1 - exp(-|q - pi(p_i)|^2 / 2 sigma^2)).

    Each splat is cut off beyond 3 sigma; points with non-positive depth
    contribute nothing. Returns an (H, W) array in [0, 1].
    """
    if not sigma_px > 0:
        raise InvalidParams("sigma_px must be > 0")
    return _Splats(points_cam, cam, sigma_px).occupancy()


def dice_loss(predicted, target):
    """Soft Dice loss and its gradient with respect to ``predicted``."""
    p = np.asarray(predicted, dtype=float)
    g = np.asarray(target, dtype=float)
    if p.shape != g.shape:
        raise DimensionMismatch(f"mask shapes {p.shape} vs {g.shape}")
    inter = float(np.sum(p * g))
    denom = float(np.sum(p) + np.sum(g)) + DICE_EPS
    value = 1.0 - 2.0 * inter / denom
    grad = -2.0 * g / denom + 2.0 * inter / denom**2
    return value, grad


def shape_loss(points_cam, target, cam: CameraModel, sigma_px: float = 2.0):
    """Dice loss of the splatted silhouette against ``target``, with the
    gradient with respect to the camera-frame points."""
    target = np.asarray(target, dtype=float)
    if target.shape != (cam.height, cam.width):
        raise DimensionMismatch(f"target mask {target.shape} vs camera {(cam.height, cam.width)}")
    P = np.asarray(points_cam, dtype=float).reshape(-1, 3)
    splats = _Splats(P, cam, sigma_px)
    value, g_occ = dice_loss(splats.occupancy(), target)
    return value, splats.backprop(g_occ)


def loss_def(ls: float, lcre: float, liso: float, cfg: RtoConfig) -> float:
    return float(ls + cfg.lambda_cre * lcre + cfg.lambda_iso * liso)


# -- run-time optimization ------------------------------------------------------


class DeformationObjective:
    """L_def as a function of the displacement field, with its gradient."""

    def __init__(self, repositioned, match_points, match_pixels, target_mask, cam: CameraModel, cfg: RtoConfig):
        self.rest = as_points(repositioned)
        self.match_points = np.asarray(match_points, dtype=np.int64)
        self.match_pixels = np.asarray(match_pixels, dtype=float).reshape(-1, 2)
        self.target = np.asarray(target_mask, dtype=float)
        if self.target.shape != (cam.height, cam.width):
            raise DimensionMismatch(f"target mask {self.target.shape} vs camera {(cam.height, cam.width)}")
        self.cam = cam
        self.cfg = cfg
        n = self.rest.shape[0]
        m = min(cfg.fps_count, n)
        self.subset = fps_sample(self.rest, m, seed=cfg.seed)
        self.graph = knn_graph(self.rest, self.subset, min(cfg.knn_k, m - 1), source=cfg.knn_source)

    def __call__(self, disp):
        P = self.rest + disp
        ls, grad = shape_loss(P, self.target, self.cam, self.cfg.splat_sigma_px)
        lcre = liso = 0.0
        if self.match_points.size and self.cfg.lambda_cre > 0:
            lcre, g = loss_cre(P[self.match_points], self.match_pixels, self.cam)
            np.add.at(grad, self.match_points, self.cfg.lambda_cre * g)
        elif self.match_points.size:
            lcre = loss_cre(P[self.match_points], self.match_pixels, self.cam)[0]
        liso, g = loss_iso(self.rest, P, self.graph)
        if self.cfg.lambda_iso > 0:
            grad += self.cfg.lambda_iso * g
        return (ls, lcre, liso, loss_def(ls, lcre, liso, self.cfg)), grad


def rto_optimize(repositioned, matches: CorrespondenceSet, target_mask, cam: CameraModel,
                 cfg: RtoConfig | None = None, point_index=None) -> RtoResult:
    """Optimize a per-point displacement field for the repositioned cloud.

    ``matches.index3d`` selects the matched landmarks; when ``point_index``
    is given it maps those landmark indices to cloud indices, otherwise they
    are cloud indices already. Each step takes a momentum update and halves
    the step (dropping the momentum) whenever the objective would increase,
    so the recorded objective never goes up.
    """
    cfg = cfg or RtoConfig()
    if len(matches) == 0 and cfg.lambda_cre > 0:
        raise EmptyCorrespondences("rto_optimize needs matches unless lambda_cre == 0")
    idx = matches.index3d if point_index is None else np.asarray(point_index)[matches.index3d]
    objective = DeformationObjective(repositioned, idx, matches.pixels, target_mask, cam, cfg)
    disp = np.zeros_like(objective.rest)
    vel = np.zeros_like(disp)
    terms, grad = objective(disp)
    trace = [(0, *terms)]
    step = cfg.step_size
    reason = "max_steps"
    for k in range(1, cfg.max_steps + 1):
        if not np.any(grad):
            reason = "stationary"
            break
        accepted = False
        for _ in range(MAX_BACKTRACKS + 1):
            v_try = cfg.momentum * vel - step * grad
            cand = disp + v_try
            c_terms, c_grad = objective(cand)
            if c_terms[3] <= terms[3]:
                accepted = True
                break
            step *= 0.5
            vel = np.zeros_like(vel)
        if not accepted:
            reason = "line_search"
            break
        disp, vel, terms, grad = cand, v_try, c_terms, c_grad
        trace.append((k, *terms))
        step = min(step * 1.25, cfg.step_size)
        if k >= CONVERGENCE_WINDOW:
            old = trace[-1 - CONVERGENCE_WINDOW][4]
            if abs(old - terms[3]) <= cfg.convergence_tol * max(abs(old), 1e-300):
                reason = "converged"
                break
    logger.info("rto: %d steps, L_def %.6g -> %.6g (%s)", len(trace) - 1, trace[0][4], trace[-1][4], reason)
    return RtoResult(disp, trace, reason)
