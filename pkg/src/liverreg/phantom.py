"""Synthetic scenes with known pose, deformation and correspondences.

A scene is a lobed ellipsoid sampled as a point cloud, a few landmark curves
drawn on its surface, a camera looking at the curves, a smooth deformation
and everything a registration run consumes: landmark embeddings, overlap
scores, observed 2D landmark pixels and a binary silhouette mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from liverreg.correspondence import CorrespondenceSet, OverlapScores
from liverreg.errors import InvalidParams
from liverreg.geom import CameraModel, RigidPose, apply_pose, project, project_camera_frame
from liverreg.pseudolabels import LandmarkCurve

SEMI_AXES = np.array([1.0, 0.7, 0.5])
CURVE_KINDS = ("ridge", "ligament", "ridge")
MASK_SIGMA_PX = 2.0
OUTLIER_MIN_PX = 50.0


@dataclass(frozen=True)
class PhantomParams:
    n_points: int = 2000
    radius: float = 50.0
    n_curves: int = 3
    points_per_curve: int = 30
    curve_span_deg: float = 60.0
    deformation_amplitude: float = 0.05
    embedding_noise: float = 0.0
    embedding_dim: int = 32
    outlier_rate: float = 0.0
    overlap_fraction: float = 1.0
    n_distractors: int = 24
    width: int = 128
    height: int = 128
    fill: float = 0.7

    def __post_init__(self):
        problems = []
        if self.n_curves not in (2, 3):
            problems.append("n_curves must be 2 or 3")
        if self.points_per_curve < 4:
            problems.append("points_per_curve must be >= 4")
        if self.n_points < self.n_curves * self.points_per_curve + 100:
            problems.append("n_points too small for the landmark curves")
        if not self.radius > 0:
            problems.append("radius must be > 0")
        if not 0 <= self.deformation_amplitude < 0.5:
            problems.append("deformation_amplitude must lie in [0, 0.5)")
        if self.embedding_noise < 0:
            problems.append("embedding_noise must be >= 0")
        if not 0 <= self.outlier_rate < 1:
            problems.append("outlier_rate must lie in [0, 1)")
        if not 0 < self.overlap_fraction <= 1:
            problems.append("overlap_fraction must lie in (0, 1]")
        if self.embedding_dim < 8 or self.embedding_dim % 2:
            problems.append("embedding_dim must be even and >= 8")
        if self.width < 16 or self.height < 16:
            problems.append("image must be at least 16x16")
        if not 0 < self.fill <= 1:
            problems.append("fill must lie in (0, 1]")
        if self.n_distractors < 0:
            problems.append("n_distractors must be >= 0")
        if problems:
            raise InvalidParams("; ".join(problems))


@dataclass
class PhantomScene:
    """Ground truth for one synthetic registration problem.

    ``cloud`` is the rest shape in world coordinates; its last rows are the
    3D landmark vertices (``landmark_index``). ``true_deformation`` is a
    world-frame displacement, so the true camera-frame shape is
    ``true_pose`` applied to ``cloud + true_deformation``.

    The observed 2D landmark list is the concatenation of ``curves2d``;
    ``gt_index3d[j]`` names the 3D landmark seen at 2D landmark ``j`` (-1 for
    distractor pixels). ``features3d`` / ``scores3d`` follow the 3D landmark
    order, ``features2d`` / ``scores2d`` the 2D order.
    """

    params: PhantomParams
    seed: int
    cloud: np.ndarray
    curves3d: list
    landmark_index: np.ndarray
    true_pose: RigidPose
    true_deformation: np.ndarray
    cam: CameraModel
    gt_pixels: np.ndarray
    curves2d: list
    gt_index3d: np.ndarray
    outlier2d: np.ndarray
    features3d: np.ndarray
    features2d: np.ndarray
    scores3d: OverlapScores
    scores2d: OverlapScores
    gt_mask: np.ndarray
    visible3d: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    @property
    def landmarks3d(self) -> np.ndarray:
        return self.cloud[self.landmark_index]

    @property
    def pixels2d(self) -> np.ndarray:
        return np.vstack([c.points for c in self.curves2d])

    @property
    def deformed_cloud(self) -> np.ndarray:
        return self.cloud + self.true_deformation

    def true_camera_cloud(self) -> np.ndarray:
        return apply_pose(self.deformed_cloud, self.true_pose)

    def gt_correspondences(self) -> CorrespondenceSet:
        """Every observed (non-distractor) 2D landmark paired with its 3D landmark."""
        j = np.flatnonzero(self.gt_index3d >= 0)
        i = self.gt_index3d[j]
        return CorrespondenceSet(i, j, self.landmarks3d[i], self.pixels2d[j], np.ones(j.size))


# -- geometry helpers -----------------------------------------------------------


def _lobe_scale(d: np.ndarray, lobe_phase: np.ndarray) -> np.ndarray:
    theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
    phi = np.arctan2(d[:, 1], d[:, 0])
    return 1.0 + 0.12 * np.sin(2.0 * theta + lobe_phase[0]) * np.cos(2.0 * phi + lobe_phase[1])


def _surface(d: np.ndarray, radius: float, lobe_phase: np.ndarray) -> np.ndarray:
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    return (radius * _lobe_scale(d, lobe_phase))[:, None] * SEMI_AXES * d


def _surface_normals(d: np.ndarray, radius: float, lobe_phase: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    helper = np.where(np.abs(d[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    t1 = np.cross(d, helper)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(d, t1)
    p = _surface(d, radius, lobe_phase)
    a = _surface(d + eps * t1, radius, lobe_phase) - p
    b = _surface(d + eps * t2, radius, lobe_phase) - p
    n = np.cross(a, b)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    flip = np.sum(n * p, axis=1) < 0
    n[flip] = -n[flip]
    return n


def _random_unit(rng, n=None):
    v = rng.normal(size=(3,) if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _rotate(v, axis, ang):
    """Rodrigues rotation of vector ``v`` about unit ``axis`` by ``ang`` radians."""
    c, s = math.cos(ang), math.sin(ang)
    return v * c + np.cross(axis, v) * s + axis * (v @ axis) * (1.0 - c)


def _look_at(view_dir: np.ndarray, dist: float, roll: float) -> RigidPose:
    """World-to-camera pose for a camera at ``dist * view_dir`` aimed at the origin."""
    z = -view_dir
    helper = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    c, s = math.cos(roll), math.sin(roll)
    x, y = c * x + s * y, -s * x + c * y
    R = np.vstack([x, y, z])
    R = R / np.linalg.norm(R, axis=1, keepdims=True)
    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    return RigidPose(R, -R @ (dist * view_dir))


def smooth_deformation(points, amplitude: float, rng: np.random.Generator, radius: float) -> np.ndarray:
    """Sum of three low-frequency sinusoidal displacement fields whose largest
    displacement over ``points`` equals ``amplitude``."""
    P = np.asarray(points, dtype=float)
    dirs = _random_unit(rng, 3)
    freqs = rng.uniform(0.5, 1.5, 3) * math.pi / (2.0 * radius)
    phases = rng.uniform(0.0, 2.0 * math.pi, 3)
    amps = _random_unit(rng, 3)
    if amplitude == 0:
        return np.zeros_like(P)
    D = np.zeros_like(P)
    for k in range(3):
        D += np.sin(freqs[k] * (P @ dirs[k]) + phases[k])[:, None] * amps[k]
    peak = np.max(np.linalg.norm(D, axis=1))
    return D * (amplitude / peak)


def positional_embedding(points, kinds, dim: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm sinusoidal encodings of surface location and curve kind.

    Random projection directions and frequencies come from ``rng``; the same
    generator state yields the same encoder.
    """
    P = np.asarray(points, dtype=float) / radius
    n_freq = (dim - 4) // 2
    dirs = _random_unit(rng, n_freq)
    freqs = rng.uniform(1.0, 6.0, n_freq)
    phases = rng.uniform(0.0, 2.0 * math.pi, n_freq)
    arg = freqs * (P @ dirs.T) + phases
    kind_code = np.zeros((P.shape[0], 4))
    for i, k in enumerate(kinds):
        kind_code[i, ("ridge", "ligament", "silhouette").index(k)] = 0.5
    F = np.hstack([np.sin(arg), np.cos(arg), kind_code])
    return F / np.linalg.norm(F, axis=1, keepdims=True)


def binary_silhouette(points_cam, cam: CameraModel, sigma_px: float = MASK_SIGMA_PX) -> np.ndarray:
    from liverreg.deform import soft_rasterize

    return soft_rasterize(points_cam, cam, sigma_px) >= 0.5


def _visible(points_cam, normals_cam, cam: CameraModel, cloud_cam, tol: float) -> np.ndarray:
    """Facing test plus a coarse z-buffer built from the whole cloud."""
    facing = np.sum(normals_cam * -points_cam, axis=1) > 0
    uv = project_camera_frame(cloud_cam, cam)
    col = np.floor(uv[:, 0]).astype(int)
    row = np.floor(uv[:, 1]).astype(int)
    inside = (col >= 0) & (col < cam.width) & (row >= 0) & (row < cam.height)
    zbuf = np.full((cam.height, cam.width), np.inf)
    np.minimum.at(zbuf, (row[inside], col[inside]), cloud_cam[inside, 2])
    luv = project_camera_frame(points_cam, cam)
    lc = np.floor(luv[:, 0]).astype(int)
    lr = np.floor(luv[:, 1]).astype(int)
    vis = facing.copy()
    for i in range(points_cam.shape[0]):
        if not (0 <= lc[i] < cam.width and 0 <= lr[i] < cam.height):
            vis[i] = False
            continue
        r0, r1 = max(lr[i] - 1, 0), min(lr[i] + 2, cam.height)
        c0, c1 = max(lc[i] - 1, 0), min(lc[i] + 2, cam.width)
        if points_cam[i, 2] > zbuf[r0:r1, c0:c1].min() + tol:
            vis[i] = False
    return vis


def _silhouette_contour(mask: np.ndarray, n: int) -> np.ndarray:
    """``n`` boundary pixels of ``mask`` ordered by angle around its centroid."""
    rows, cols = np.nonzero(mask)
    cy, cx = rows.mean() + 0.5, cols.mean() + 0.5
    out = []
    for ang in np.linspace(0.0, 2.0 * math.pi, n, endpoint=False):
        du, dv = math.cos(ang), math.sin(ang)
        r = 0.0
        last = None
        while True:
            u, v = cx + r * du, cy + r * dv
            c, rr = int(math.floor(u)), int(math.floor(v))
            if not (0 <= c < mask.shape[1] and 0 <= rr < mask.shape[0]) or not mask[rr, c]:
                break
            last = (c + 0.5, rr + 0.5)
            r += 0.5
        if last is not None and (not out or out[-1] != last):
            out.append(last)
    return np.array(out)


# -- generator ------------------------------------------------------------------


def gen_phantom(params: PhantomParams | None = None, seed: int = 0) -> PhantomScene:
    """Build a deterministic scene from ``params`` and ``seed``."""
    p = params or PhantomParams()
    rng = np.random.default_rng(seed)
    lobe_phase = rng.uniform(0.0, 2.0 * math.pi, 2)

    # camera direction and landmark arcs facing it
    view_dir = _random_unit(rng)
    arcs = []
    for c in range(p.n_curves):
        center = view_dir + 0.45 * _random_unit(rng)
        center /= np.linalg.norm(center)
        axis = np.cross(center, _random_unit(rng))
        axis /= np.linalg.norm(axis)
        ang = np.radians(np.linspace(-p.curve_span_deg / 2, p.curve_span_deg / 2, p.points_per_curve))
        dirs = np.stack([_rotate(center, axis, a) for a in ang])
        arcs.append(dirs)
    n_land = p.n_curves * p.points_per_curve
    surf_dirs = _random_unit(rng, p.n_points - n_land)
    land_dirs = np.vstack(arcs)
    all_dirs = np.vstack([surf_dirs, land_dirs])
    cloud = _surface(all_dirs, p.radius, lobe_phase)
    normals = _surface_normals(all_dirs, p.radius, lobe_phase)
    landmark_index = np.arange(p.n_points - n_land, p.n_points)
    kinds3d = [CURVE_KINDS[c] for c in range(p.n_curves) for _ in range(p.points_per_curve)]
    curves3d = [
        LandmarkCurve(CURVE_KINDS[c], cloud[landmark_index[c * p.points_per_curve:(c + 1) * p.points_per_curve]])
        for c in range(p.n_curves)
    ]

    # pose, deformation and intrinsics sized to the projected shape
    dist = rng.uniform(2.0, 4.0) * p.radius
    pose = _look_at(view_dir, dist, rng.uniform(0.0, 2.0 * math.pi))
    deformation = smooth_deformation(cloud, p.deformation_amplitude * p.radius, rng, p.radius)
    cam_pts = apply_pose(cloud + deformation, pose)
    extent = np.max(np.abs(cam_pts[:, :2] / cam_pts[:, 2:3]), axis=0)
    focal = p.fill * 0.5 * min(p.width / extent[0], p.height / extent[1])
    cam = CameraModel(focal, focal, p.width / 2.0, p.height / 2.0, p.width, p.height)

    # normals move with the deformation only approximately; the facing test uses rest normals
    normals_cam = normals @ pose.R.T
    land_cam = cam_pts[landmark_index]
    vis = _visible(land_cam, normals_cam[landmark_index], cam, cam_pts, tol=0.05 * p.radius)
    gt_pixels = project_camera_frame(land_cam, cam)
    gt_mask = binary_silhouette(cam_pts, cam)

    # observed 2D landmarks: a contiguous visible run of each curve, cut to overlap_fraction
    curves2d, gt_index3d = [], []
    for c in range(p.n_curves):
        ids = np.arange(c * p.points_per_curve, (c + 1) * p.points_per_curve)
        run = _longest_run(ids[vis[ids]])
        keep = int(math.ceil(p.overlap_fraction * run.size)) if run.size else 0
        run = run[:keep]
        if run.size < 2:
            continue
        pix = gt_pixels[run]
        distinct = np.concatenate([[True], np.any(pix[1:] != pix[:-1], axis=1)])
        run, pix = run[distinct], pix[distinct]
        if run.size < 2:
            continue
        curves2d.append(LandmarkCurve(CURVE_KINDS[c], pix))
        gt_index3d.extend(run.tolist())
    gt_index3d = np.array(gt_index3d, dtype=int)
    n_obs = gt_index3d.size

    # embeddings: 3D from rest surface location, 2D copies plus noise
    enc_rng = np.random.default_rng([seed, 1])
    feat3d = positional_embedding(cloud[landmark_index], kinds3d, p.embedding_dim, p.radius, enc_rng)
    feat2d = feat3d[gt_index3d].copy()
    if p.embedding_noise > 0:
        feat2d += rng.normal(0.0, p.embedding_noise, feat2d.shape) / math.sqrt(p.embedding_dim)
        feat2d /= np.linalg.norm(feat2d, axis=1, keepdims=True)
    outlier2d = np.zeros(n_obs, dtype=bool)
    n_out = int(round(p.outlier_rate * n_obs))
    if n_out:
        picks = np.sort(rng.choice(n_obs, size=n_out, replace=False))
        for j in picks:
            d = np.linalg.norm(gt_pixels - gt_pixels[gt_index3d[j]], axis=1)
            far = np.flatnonzero(d >= OUTLIER_MIN_PX)
            other = rng.choice(far) if far.size else int(np.argmax(d))
            feat2d[j] = feat3d[other]
            outlier2d[j] = True

    # distractor pixels along the silhouette with unrelated embeddings
    if p.n_distractors >= 2 and gt_mask.any():
        contour = _silhouette_contour(gt_mask, p.n_distractors)
        if contour.shape[0] >= 2:
            curves2d.append(LandmarkCurve("silhouette", contour))
            noise_feat = rng.normal(size=(contour.shape[0], p.embedding_dim))
            noise_feat /= np.linalg.norm(noise_feat, axis=1, keepdims=True)
            feat2d = np.vstack([feat2d, noise_feat])
            gt_index3d = np.concatenate([gt_index3d, -np.ones(contour.shape[0], dtype=int)])
            outlier2d = np.concatenate([outlier2d, np.zeros(contour.shape[0], dtype=bool)])

    overlap3d = np.zeros(n_land, dtype=bool)
    overlap3d[gt_index3d[gt_index3d >= 0]] = True
    overlap2d = gt_index3d >= 0
    scores3d = _scores(overlap3d, rng)
    scores2d = _scores(overlap2d, rng)

    return PhantomScene(
        params=p, seed=seed, cloud=cloud, curves3d=curves3d, landmark_index=landmark_index,
        true_pose=pose, true_deformation=deformation, cam=cam, gt_pixels=gt_pixels,
        curves2d=curves2d, gt_index3d=gt_index3d, outlier2d=outlier2d,
        features3d=feat3d, features2d=feat2d, scores3d=scores3d, scores2d=scores2d,
        gt_mask=gt_mask, visible3d=vis,
    )


def _longest_run(ids: np.ndarray) -> np.ndarray:
    if ids.size == 0:
        return ids
    breaks = np.flatnonzero(np.diff(ids) != 1) + 1
    runs = np.split(ids, breaks)
    return max(runs, key=len)


def _scores(overlap: np.ndarray, rng: np.random.Generator) -> OverlapScores:
    jitter = rng.uniform(-0.05, 0.05, overlap.size)
    score = np.where(overlap, 0.9, 0.1) + jitter
    uncertainty = rng.uniform(0.05, 0.15, overlap.size)
    return OverlapScores(score, uncertainty)


def outlier_correspondences(scene: PhantomScene, rate: float, seed: int,
                            min_shift: float = OUTLIER_MIN_PX, max_shift: float = 2 * OUTLIER_MIN_PX):
    """Ground-truth pairs with a fraction of pixels pushed ``min_shift``..``max_shift`` px away.

    Returns the corrupted set and the boolean inlier mask.
    """
    gt = scene.gt_correspondences()
    rng = np.random.default_rng([seed, 7])
    n = len(gt)
    n_out = int(round(rate * n))
    out = np.zeros(n, dtype=bool)
    out[rng.choice(n, size=n_out, replace=False)] = True
    pixels = gt.pixels.copy()
    ang = rng.uniform(0.0, 2.0 * math.pi, n_out)
    mag = rng.uniform(min_shift, max_shift, n_out)
    pixels[out] += np.stack([np.cos(ang), np.sin(ang)], axis=1) * mag[:, None]
    return CorrespondenceSet(gt.index3d, gt.index2d, gt.points3d, pixels, gt.similarity), ~out


def rigid_projection(scene: PhantomScene, pose: RigidPose | None = None) -> np.ndarray:
    """Landmark pixels of the undeformed cloud under ``pose`` (default: true pose)."""
    return project(scene.landmarks3d, pose or scene.true_pose, scene.cam)
