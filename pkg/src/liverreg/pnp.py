"""Camera pose from 2D-3D correspondences: EPnP inside RANSAC.

EPnP writes every 3D point as a barycentric combination of four control
points (three for planar scenes), recovers the control points in camera
coordinates from the null space of a 2n x 12 linear system, and aligns the
two control-point sets with a Procrustes fit.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from liverreg.correspondence import CorrespondenceSet
from liverreg.errors import (
    DegenerateConfiguration,
    InvalidParams,
    NoConsensus,
    TooFewCorrespondences,
)
from liverreg.geom import MIN_DEPTH, CameraModel, RigidPose, nearest_rotation, projection_jacobian, rigid_fit, rodrigues

logger = logging.getLogger(__name__)

PLANAR_RATIO = 1e-8
GN_BETA_ITERS = 10
GN_POSE_ITERS = 20


@dataclass(frozen=True)
class RansacConfig:
    max_iterations: int = 1000
    inlier_threshold_px: float = 5.0
    confidence: float = 0.99
    min_sample_size: int = 4
    rng_seed: int = 0
    refine: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InvalidParams("max_iterations must be >= 1")
        if not self.inlier_threshold_px > 0:
            raise InvalidParams("inlier_threshold_px must be > 0")
        if not 0.0 < self.confidence < 1.0:
            raise InvalidParams("confidence must lie in (0, 1)")
        if self.min_sample_size < 4:
            raise InvalidParams("min_sample_size must be >= 4")


@dataclass(frozen=True)
class PoseEstimate:
    pose: RigidPose
    inlier_indices: np.ndarray
    mean_reprojection_error_px: float
    iterations: int = 0
    unrefined_pose: RigidPose | None = None


def reprojection_errors(points3d, pixels, pose: RigidPose, cam: CameraModel) -> np.ndarray:
    """Per-pair pixel error; points at or behind the camera get +inf."""
    pc = np.asarray(points3d, dtype=float) @ pose.R.T + pose.t
    z = pc[:, 2]
    err = np.full(pc.shape[0], np.inf)
    ok = z > MIN_DEPTH
    u = cam.fx * pc[ok, 0] / z[ok] + cam.cx
    v = cam.fy * pc[ok, 1] / z[ok] + cam.cy
    err[ok] = np.hypot(u - pixels[ok, 0], v - pixels[ok, 1])
    return err


# -- EPnP ---------------------------------------------------------------------


def _control_points(pws: np.ndarray):
    c0 = pws.mean(axis=0)
    A = pws - c0
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[0] <= 0 or s[1] < PLANAR_RATIO * s[0]:
        raise DegenerateConfiguration("3D points are coincident or collinear")
    scale = s / math.sqrt(pws.shape[0])
    planar = s[2] < PLANAR_RATIO * s[0]
    ndir = 2 if planar else 3
    cws = np.vstack([c0] + [c0 + scale[k] * Vt[k] for k in range(ndir)])
    # barycentric coordinates: coefficients along each principal direction
    coef = (A @ Vt[:ndir].T) / scale[:ndir]
    alphas = np.hstack([1.0 - coef.sum(axis=1, keepdims=True), coef])
    return cws, alphas


def _build_m(alphas: np.ndarray, pixels: np.ndarray, cam: CameraModel) -> np.ndarray:
    n, nc = alphas.shape
    M = np.zeros((2 * n, 3 * nc))
    du = cam.cx - pixels[:, 0]
    dv = cam.cy - pixels[:, 1]
    for j in range(nc):
        a = alphas[:, j]
        M[0::2, 3 * j] = a * cam.fx
        M[0::2, 3 * j + 2] = a * du
        M[1::2, 3 * j + 1] = a * cam.fy
        M[1::2, 3 * j + 2] = a * dv
    return M


class _BetaSystem:
    """Quadratic distance constraints on the null-space coefficients."""

    def __init__(self, null_vectors: np.ndarray, cws: np.ndarray):
        nc = cws.shape[0]
        self.k = null_vectors.shape[1]
        self.pairs = list(itertools.combinations(range(nc), 2))
        self.monos = [(a, b) for b in range(self.k) for a in range(b + 1)]
        V = null_vectors.reshape(nc, 3, self.k)
        dV = np.stack([V[a] - V[b] for a, b in self.pairs])  # (P, 3, K)
        G = np.einsum("pik,pil->pkl", dV, dV)
        self.L = np.stack(
            [G[:, a, b] * (1.0 if a == b else 2.0) for a, b in self.monos], axis=1
        )
        self.rho = np.array([np.sum((cws[a] - cws[b]) ** 2) for a, b in self.pairs])
        self.G = G

    def col(self, a, b):
        return self.monos.index((min(a, b), max(a, b)))

    def solve_cols(self, cols):
        x, *_ = np.linalg.lstsq(self.L[:, cols], self.rho, rcond=None)
        return x

    def residual(self, beta):
        mono = np.array([beta[a] * beta[b] for a, b in self.monos])
        return self.L @ mono - self.rho

    def jacobian(self, beta):
        # d/d beta_c of sum_{k,l} beta_k beta_l G_kl = 2 (G beta)_c
        return 2.0 * np.einsum("pkl,l->pk", self.G, beta)

    def gauss_newton(self, beta, iters=GN_BETA_ITERS):
        beta = beta.copy()
        for _ in range(iters):
            r = self.residual(beta)
            J = self.jacobian(beta)
            step, *_ = np.linalg.lstsq(J, -r, rcond=None)
            beta += step
        return beta


def _beta_candidates(sys: _BetaSystem, subsets=None):
    """Initial betas for the one-, two- and three-null-vector cases.

    ``subsets`` lists which null vectors play the roles of the first one,
    two or three; by default the smallest singular vectors are used.
    """
    K = sys.k
    out = []
    if subsets is None:
        subsets = [tuple(range(min(K, q))) for q in (1, 2, 3)]
    for sub in subsets:
        b = np.zeros(K)
        a0 = sub[0]
        if len(sub) == 1:
            # one null vector: columns b11, b12, ..., b1K
            others = [k for k in range(K) if k != a0]
            cols = [sys.col(a0, a0)] + [sys.col(a0, k) for k in others]
            if len(sys.pairs) < len(cols):
                cols, others = cols[:1], []
            x = sys.solve_cols(cols)
            b[a0] = math.sqrt(abs(x[0]))
            sgn = -1.0 if x[0] < 0 else 1.0
            for k, xv in zip(others, x[1:]):
                b[k] = sgn * xv / b[a0] if b[a0] > 0 else 0.0
        elif len(sub) == 2 and len(sys.pairs) >= 3:
            # two null vectors: b11, b12, b22
            a1 = sub[1]
            x = sys.solve_cols([sys.col(a0, a0), sys.col(a0, a1), sys.col(a1, a1)])
            b[a0] = math.sqrt(abs(x[0]))
            b[a1] = math.sqrt(abs(x[2])) * (1.0 if x[1] >= 0 else -1.0)
        elif len(sub) == 3 and len(sys.pairs) >= 5:
            # three null vectors: b11, b12, b22, b13, b23
            a1, a2 = sub[1], sub[2]
            x = sys.solve_cols([sys.col(a0, a0), sys.col(a0, a1), sys.col(a1, a1),
                                sys.col(a0, a2), sys.col(a1, a2)])
            b[a0] = math.sqrt(abs(x[0]))
            b[a1] = math.sqrt(abs(x[2])) * (1.0 if x[1] >= 0 else -1.0)
            b[a2] = x[3] / b[a0] if b[a0] > 0 else 0.0
        else:
            continue
        out.append(b)
    return out


def _pose_from_betas(beta, null_vectors, alphas, pws):
    nc = alphas.shape[1]
    ccs = (null_vectors @ beta).reshape(nc, 3)
    pcs = alphas @ ccs
    if np.mean(pcs[:, 2]) < 0:
        pcs = -pcs
    return rigid_fit(pws, pcs)


def epnp_solve(correspondences: CorrespondenceSet, cam: CameraModel, refine: bool = False) -> RigidPose:
    """Pose from >= 4 correspondences with EPnP.

    All beta initialisations are refined with a short Gauss-Newton on the
    control-point distance constraints; the pose with the lowest
    reprojection error wins. ``refine`` adds a Gauss-Newton pass on the
    reprojection error itself.
    """
    n = len(correspondences)
    if n < 4:
        raise TooFewCorrespondences(f"EPnP needs at least 4 correspondences, got {n}")
    pws = correspondences.points3d
    pixels = correspondences.pixels
    cws, alphas = _control_points(pws)
    M = _build_m(alphas, pixels, cam)
    _, _, Vt = np.linalg.svd(M, full_matrices=True)
    nc = cws.shape[0]
    null_vectors = Vt[::-1][:nc].T  # smallest singular vectors first
    sys = _BetaSystem(null_vectors, cws)

    subsets = None
    if 2 * n < 3 * nc:
        # the exact solution spans several null vectors; try every role assignment
        subsets = [c for q in (1, 2, 3) for c in itertools.combinations(range(nc), q)]
    best, best_err = None, np.inf
    for beta0 in _beta_candidates(sys, subsets):
        beta = sys.gauss_newton(beta0)
        try:
            pose = _pose_from_betas(beta, null_vectors, alphas, pws)
        except (np.linalg.LinAlgError, ValueError):
            continue
        err = float(np.mean(reprojection_errors(pws, pixels, pose, cam)))
        if err < best_err:
            best, best_err = pose, err
    if best is None:
        raise DegenerateConfiguration("no EPnP candidate produced a valid pose")
    if refine:
        best = refine_pose(best, pws, pixels, cam)
    return best


# -- reprojection refinement --------------------------------------------------


def refine_pose(pose: RigidPose, points3d, pixels, cam: CameraModel, iters: int = GN_POSE_ITERS) -> RigidPose:
    """Damped Gauss-Newton on the summed squared reprojection error.

    The update is applied on the left: p_cam <- exp(w) p_cam + dt. A step is
    kept only when it lowers the cost.
    """
    X = np.asarray(points3d, dtype=float)
    x = np.asarray(pixels, dtype=float)

    def cost_of(p):
        pc = X @ p.R.T + p.t
        if np.any(pc[:, 2] <= MIN_DEPTH):
            return np.inf, pc
        uv = np.stack([cam.fx * pc[:, 0] / pc[:, 2] + cam.cx, cam.fy * pc[:, 1] / pc[:, 2] + cam.cy], axis=1)
        return float(np.sum((uv - x) ** 2)), pc

    cost, pc = cost_of(pose)
    if not np.isfinite(cost):
        return pose
    damping = 1e-6
    for _ in range(iters):
        uv = np.stack([cam.fx * pc[:, 0] / pc[:, 2] + cam.cx, cam.fy * pc[:, 1] / pc[:, 2] + cam.cy], axis=1)
        r = (uv - x).reshape(-1)
        Jp = projection_jacobian(pc, cam)  # (n, 2, 3)
        skew = np.zeros((pc.shape[0], 3, 3))
        skew[:, 0, 1], skew[:, 0, 2] = pc[:, 2], -pc[:, 1]
        skew[:, 1, 0], skew[:, 1, 2] = -pc[:, 2], pc[:, 0]
        skew[:, 2, 0], skew[:, 2, 1] = pc[:, 1], -pc[:, 0]
        # d p_cam / d w = -[p]_x, which is `skew` as laid out above
        J = np.concatenate([Jp @ skew, Jp], axis=2).reshape(-1, 6)
        H = J.T @ J
        g = J.T @ r
        improved = False
        for _ in range(10):
            try:
                delta = -np.linalg.solve(H + damping * np.diag(np.diag(H) + 1e-12), g)
            except np.linalg.LinAlgError:
                break
            dR = rodrigues(delta[:3])
            cand = RigidPose(nearest_rotation(dR @ pose.R), dR @ pose.t + delta[3:])
            c_cost, c_pc = cost_of(cand)
            if c_cost < cost:
                pose, cost, pc = cand, c_cost, c_pc
                damping = max(damping * 0.1, 1e-12)
                improved = True
                break
            damping *= 10.0
        if not improved or cost < 1e-24:
            break
    return pose


# -- RANSAC -------------------------------------------------------------------


def adaptive_iterations(inlier_ratio: float, confidence: float, sample_size: int) -> float:
    """Iterations needed to draw one all-inlier sample with the given confidence."""
    if inlier_ratio <= 0:
        return math.inf
    p_good = inlier_ratio**sample_size
    if p_good >= 1.0:
        return 1.0
    return math.log(1.0 - confidence) / math.log(1.0 - p_good)


def ransac_pnp(correspondences: CorrespondenceSet, cam: CameraModel, cfg: RansacConfig | None = None) -> PoseEstimate:
    """Robust pose: EPnP hypotheses from minimal samples, scored by inlier count.

    Sample ``it`` draws from a generator seeded by ``(cfg.rng_seed, it)``, so
    results do not depend on evaluation order.
    """
    cfg = cfg or RansacConfig()
    n = len(correspondences)
    if n < cfg.min_sample_size:
        raise TooFewCorrespondences(f"need at least {cfg.min_sample_size} correspondences, got {n}")
    X, x = correspondences.points3d, correspondences.pixels
    thr = cfg.inlier_threshold_px

    best_count, best_err, best_mask = -1, np.inf, None
    needed = float(cfg.max_iterations)
    it = 0
    while it < cfg.max_iterations and it < needed:
        rng = np.random.default_rng([cfg.rng_seed, it])
        it += 1
        sample = rng.choice(n, size=cfg.min_sample_size, replace=False)
        try:
            pose = epnp_solve(correspondences.subset(sample), cam)
        except (DegenerateConfiguration, np.linalg.LinAlgError):
            continue
        err = reprojection_errors(X, x, pose, cam)
        mask = err <= thr
        count = int(mask.sum())
        if count == 0:
            continue
        mean_err = float(err[mask].mean())
        if count > best_count or (count == best_count and mean_err < best_err):
            best_count, best_err, best_mask = count, mean_err, mask
            needed = adaptive_iterations(count / n, cfg.confidence, cfg.min_sample_size)

    if best_mask is None or best_count < cfg.min_sample_size:
        raise NoConsensus(f"best hypothesis has {max(best_count, 0)} inliers")

    mask = best_mask
    pose = unrefined = None
    for _ in range(3):
        inl = correspondences.subset(np.flatnonzero(mask))
        try:
            unrefined = epnp_solve(inl, cam)
        except DegenerateConfiguration as exc:
            raise NoConsensus(f"inlier set is degenerate: {exc}") from exc
        pose = refine_pose(unrefined, inl.points3d, inl.pixels, cam) if cfg.refine else unrefined
        new_mask = reprojection_errors(X, x, pose, cam) <= thr
        if np.array_equal(new_mask, mask):
            break
        if new_mask.sum() < cfg.min_sample_size:
            break
        mask = new_mask

    err = reprojection_errors(X, x, pose, cam)
    inliers = np.flatnonzero(err <= thr)
    if inliers.size < cfg.min_sample_size:
        raise NoConsensus(f"final pose keeps only {inliers.size} inliers")
    if cfg.refine:
        raw = reprojection_errors(X[inliers], x[inliers], unrefined, cam)
        logger.info("ransac: %d iterations, %d/%d inliers, mean error %.3g px (before refinement %.3g px)",
                    it, inliers.size, n, err[inliers].mean(), raw.mean())
    else:
        logger.info("ransac: %d iterations, %d/%d inliers, mean error %.3g px", it, inliers.size, n, err[inliers].mean())
    return PoseEstimate(pose, inliers, float(err[inliers].mean()), it, unrefined)
