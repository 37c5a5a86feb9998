"""Registration metrics and the end-to-end experiment on a phantom scene."""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from liverreg.correspondence import (
    DEFAULT_LAMBDA_CFE,
    DEFAULT_OVERLAP_THRESHOLD,
    CorrespondenceSet,
    balanced_overlap_sets,
    cfe_loss,
    cosine_similarity_matrix,
    detection_loss,
    mutual_nn_match,
    rigid_loss,
    select_overlap,
)
from liverreg.deform import RtoConfig, RtoResult, rto_optimize, soft_rasterize
from liverreg.errors import DimensionMismatch, LengthMismatch, RegistrationError
from liverreg.geom import apply_pose, project_camera_frame, rotation_error_deg, translation_error_mm
from liverreg.phantom import PhantomScene
from liverreg.pnp import PoseEstimate, RansacConfig, ransac_pnp

logger = logging.getLogger(__name__)

REPORT_FIELDS = (
    "dice_rigid", "tre_a_rigid", "tre_s_rigid",
    "dice_nonrigid", "tre_a_nonrigid", "tre_s_nonrigid",
    "rre_deg", "rte_mm",
)


@dataclass(frozen=True)
class TreResult:
    mean_px: float
    std_px: float


def tre(projected, gt) -> TreResult:
    """Mean and population standard deviation of per-landmark pixel errors."""
    a = np.asarray(projected, dtype=float).reshape(-1, 2)
    b = np.asarray(gt, dtype=float).reshape(-1, 2)
    if a.shape != b.shape:
        raise LengthMismatch(f"{a.shape[0]} projected vs {b.shape[0]} ground-truth landmarks")
    if a.shape[0] == 0:
        raise LengthMismatch("tre needs at least one landmark")
    err = np.linalg.norm(a - b, axis=1)
    return TreResult(float(err.mean()), float(err.std()))


def dice_score(a, b) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionMismatch(f"mask shapes {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def silhouette(points_cam, cam, sigma_px: float) -> np.ndarray:
    return soft_rasterize(points_cam, cam, sigma_px) >= 0.5


@dataclass
class ExperimentConfig:
    overlap_threshold: float = DEFAULT_OVERLAP_THRESHOLD
    lambda_cfe: float = DEFAULT_LAMBDA_CFE
    ransac: RansacConfig = field(default_factory=RansacConfig)
    rto: RtoConfig = field(default_factory=RtoConfig)
    run_deformation: bool = True


@dataclass
class ExperimentReport:
    seed: int
    dice_rigid: float
    tre_a_rigid: float
    tre_s_rigid: float
    dice_nonrigid: float
    tre_a_nonrigid: float
    tre_s_nonrigid: float
    rre_deg: float
    rte_mm: float
    err3d_rigid_mm: float
    err3d_nonrigid_mm: float
    n_matches: int
    n_inliers: int
    match_precision: float
    match_recall: float
    loss_detection: float
    loss_cfe: float
    loss_rigid: float
    rto_steps: int
    time_rigid_s: float
    time_deform_s: float

    def to_json(self, include_timing: bool = False) -> str:
        """One JSON object; wall-clock fields are left out unless asked for
        so that equal seeds give byte-identical lines."""
        d = asdict(self)
        if not include_timing:
            d.pop("time_rigid_s")
            d.pop("time_deform_s")
        # Losses are undefined (NaN) when a term has no support, e.g. CFE with
        # every candidate matched; JSON has no NaN, so write null.
        d = {k: (None if isinstance(v, float) and v != v else v) for k, v in d.items()}
        return json.dumps(d, sort_keys=True, allow_nan=False)


@dataclass
class ExperimentRun:
    """Everything a run produced, for callers that want more than the report."""

    report: ExperimentReport
    matches: CorrespondenceSet
    estimate: PoseEstimate
    repositioned: np.ndarray
    rto: RtoResult | None


def match_quality(matches: CorrespondenceSet, gt_index3d) -> tuple[float, float]:
    """Precision and recall of ``matches`` against the phantom's true pairing."""
    gt_index3d = np.asarray(gt_index3d)
    n_true = int(np.sum(gt_index3d >= 0))
    correct = int(np.sum(gt_index3d[matches.index2d] == matches.index3d)) if len(matches) else 0
    precision = correct / len(matches) if len(matches) else 0.0
    recall = correct / n_true if n_true else 0.0
    return precision, recall


def stage_one(scene: PhantomScene, cfg: ExperimentConfig):
    """Overlap selection, mutual-NN matching and robust pose. Returns (matches, estimate)."""
    cand3 = select_overlap(scene.scores3d, cfg.overlap_threshold)
    cand2 = select_overlap(scene.scores2d, cfg.overlap_threshold)
    matches = mutual_nn_match(scene.features3d, scene.features2d, cand3, cand2,
                              scene.landmarks3d, scene.pixels2d)
    estimate = ransac_pnp(matches, scene.cam, cfg.ransac)
    return matches, estimate


def _losses(scene: PhantomScene, matches: CorrespondenceSet, cfg: ExperimentConfig):
    rng = np.random.default_rng([scene.seed, 3])
    overlap3d = np.zeros(len(scene.scores3d), dtype=bool)
    overlap3d[scene.gt_index3d[scene.gt_index3d >= 0]] = True
    sets = balanced_overlap_sets(overlap3d, scene.gt_index3d >= 0, rng)
    try:
        ld = detection_loss(sets, scene.scores3d, scene.scores2d)
    except RegistrationError:
        ld = float("nan")
    try:
        sim = cosine_similarity_matrix(scene.features3d, scene.features2d)
        lcfe = cfe_loss(sim, matches, select_overlap(scene.scores2d, cfg.overlap_threshold))
    except RegistrationError:
        lcfe = float("nan")
    return ld, lcfe, rigid_loss(ld, lcfe, cfg.lambda_cfe)


def run_experiment(scene: PhantomScene, cfg: ExperimentConfig | None = None) -> ExperimentRun:
    """Stage I then Stage II on ``scene`` and the full metric suite.

    TRE is measured on the observed 2D landmarks against the projection of
    their true 3D partners; the 3D landmark error compares the registered
    camera-frame landmarks with the true deformed ones.
    """
    cfg = cfg or ExperimentConfig()
    cam = scene.cam
    if not scene.gt_mask.any():
        warnings.warn("ground-truth mask is empty", RuntimeWarning, stacklevel=2)

    t0 = time.perf_counter()
    matches, est = stage_one(scene, cfg)
    t_rigid = time.perf_counter() - t0

    gt = scene.gt_correspondences()
    lm_cloud = scene.landmark_index[gt.index3d]
    true_cam = scene.true_camera_cloud()
    sigma = cfg.rto.splat_sigma_px

    rep = apply_pose(scene.cloud, est.pose)
    tre_r = tre(project_camera_frame(rep[lm_cloud], cam), gt.pixels)
    dice_r = dice_score(silhouette(rep, cam, sigma), scene.gt_mask)
    err3d_r = float(np.mean(np.linalg.norm(rep[lm_cloud] - true_cam[lm_cloud], axis=1)))

    rto = None
    t_def = 0.0
    if cfg.run_deformation:
        inliers = matches.subset(est.inlier_indices)
        t0 = time.perf_counter()
        rto = rto_optimize(rep, inliers, scene.gt_mask, cam, cfg.rto, point_index=scene.landmark_index)
        t_def = time.perf_counter() - t0
        warped = rep + rto.displacements
    else:
        warped = rep
    tre_w = tre(project_camera_frame(warped[lm_cloud], cam), gt.pixels)
    dice_w = dice_score(silhouette(warped, cam, sigma), scene.gt_mask)
    err3d_w = float(np.mean(np.linalg.norm(warped[lm_cloud] - true_cam[lm_cloud], axis=1)))

    precision, recall = match_quality(matches, scene.gt_index3d)
    ld, lcfe, lrigid = _losses(scene, matches, cfg)
    report = ExperimentReport(
        seed=scene.seed,
        dice_rigid=dice_r, tre_a_rigid=tre_r.mean_px, tre_s_rigid=tre_r.std_px,
        dice_nonrigid=dice_w, tre_a_nonrigid=tre_w.mean_px, tre_s_nonrigid=tre_w.std_px,
        rre_deg=rotation_error_deg(est.pose.R, scene.true_pose.R),
        rte_mm=translation_error_mm(est.pose.t, scene.true_pose.t),
        err3d_rigid_mm=err3d_r, err3d_nonrigid_mm=err3d_w,
        n_matches=len(matches), n_inliers=int(est.inlier_indices.size),
        match_precision=precision, match_recall=recall,
        loss_detection=ld, loss_cfe=lcfe, loss_rigid=lrigid,
        rto_steps=len(rto.trace) - 1 if rto else 0,
        time_rigid_s=t_rigid, time_deform_s=t_def,
    )
    return ExperimentRun(report, matches, est, rep, rto)


def format_report_table(reports) -> str:
    """Human-readable table, one row per run, Dice in percent."""
    head = ("seed", "Dice_r", "TRE_a_r", "TRE_s_r", "Dice_nr", "TRE_a_nr", "TRE_s_nr", "RRE", "RTE")
    lines = ["  ".join(f"{h:>9}" for h in head)]
    for r in reports:
        vals = (r.seed, 100 * r.dice_rigid, r.tre_a_rigid, r.tre_s_rigid, 100 * r.dice_nonrigid,
                r.tre_a_nonrigid, r.tre_s_nonrigid, r.rre_deg, r.rte_mm)
        lines.append(f"{vals[0]:>9d}  " + "  ".join(f"{v:>9.4g}" for v in vals[1:]))
    return "\n".join(lines)
