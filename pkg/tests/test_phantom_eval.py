import dataclasses
import json

import numpy as np
import pytest

from liverreg.correspondence import select_overlap
from liverreg.deform import RtoConfig
from liverreg.errors import InvalidParams, LengthMismatch
from liverreg.evaluate import (
    REPORT_FIELDS,
    ExperimentConfig,
    dice_score,
    format_report_table,
    match_quality,
    run_experiment,
    stage_one,
    tre,
)
from liverreg.geom import project, rotation_error_deg
from liverreg.phantom import PhantomParams, gen_phantom, outlier_correspondences, rigid_projection

RIGID = PhantomParams(deformation_amplitude=0.0)


def _scene_arrays(s):
    yield s.cloud
    yield s.true_pose.R
    yield s.true_pose.t
    yield s.true_deformation
    yield s.gt_pixels
    yield s.features3d
    yield s.features2d
    yield s.gt_mask
    yield s.gt_index3d
    for c in s.curves3d + s.curves2d:
        yield c.points


def test_same_seed_bit_identical():
    a, b = gen_phantom(PhantomParams(), 5), gen_phantom(PhantomParams(), 5)
    assert all(np.array_equal(x, y) for x, y in zip(_scene_arrays(a), _scene_arrays(b)))
    c = gen_phantom(PhantomParams(), 6)
    assert not np.array_equal(a.cloud, c.cloud)


def test_zero_deformation_gt_is_rigid_projection():
    s = gen_phantom(RIGID, 0)
    assert not np.any(s.true_deformation)
    assert np.array_equal(s.gt_pixels, rigid_projection(s))


def test_gt_pixels_regenerate_from_pose_and_deformation():
    s = gen_phantom(PhantomParams(deformation_amplitude=0.05), 1)
    assert np.array_equal(s.gt_pixels, project(s.deformed_cloud[s.landmark_index], s.true_pose, s.cam))
    gt = s.gt_correspondences()
    assert np.array_equal(gt.pixels, s.gt_pixels[gt.index3d])


def test_identity_correspondence_recovered():
    s = gen_phantom(RIGID, 2)
    matches, _ = stage_one(s, ExperimentConfig())
    assert matches.pairs() == s.gt_correspondences().pairs()


def test_deformation_amplitude_scale():
    p = PhantomParams(deformation_amplitude=0.05)
    s = gen_phantom(p, 3)
    mag = np.linalg.norm(s.true_deformation, axis=1)
    assert 0 < mag.max() <= 0.05 * p.radius * (1 + 1e-12)


def test_partial_overlap_and_scores():
    s = gen_phantom(PhantomParams(overlap_fraction=0.5), 4)
    seen = np.unique(s.gt_index3d[s.gt_index3d >= 0])
    assert 0 < seen.size < len(s.landmark_index)
    sel = select_overlap(s.scores3d, 0.5)
    assert set(sel.tolist()) == set(seen.tolist())


def test_distractors_marked():
    s = gen_phantom(PhantomParams(n_distractors=10), 5)
    assert np.sum(s.gt_index3d < 0) == 10
    assert any(c.kind == "silhouette" for c in s.curves2d)


def test_invalid_params():
    with pytest.raises(InvalidParams):
        PhantomParams(overlap_fraction=0.0)
    with pytest.raises(InvalidParams):
        PhantomParams(n_points=10)


def test_outlier_construct():
    s = gen_phantom(RIGID, 6)
    cs, inl = outlier_correspondences(s, 0.3, 6)
    shift = np.linalg.norm(cs.pixels - s.gt_correspondences().pixels, axis=1)
    assert np.all(shift[~inl] >= 50) and np.all(shift[inl] == 0)
    assert (~inl).sum() == round(0.3 * len(cs))


def test_tre_examples():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    r = tre(x, x)
    assert (r.mean_px, r.std_px) == (0.0, 0.0)
    r = tre([[3.0, 0.0], [0.0, 4.0]], [[0.0, 0.0], [0.0, 0.0]])
    assert (r.mean_px, r.std_px) == (3.5, 0.5)
    r = tre([[3.0, 4.0]], [[0.0, 0.0]])
    assert (r.mean_px, r.std_px) == (5.0, 0.0)
    with pytest.raises(LengthMismatch):
        tre(np.zeros((2, 2)), np.zeros((3, 2)))


def test_dice_score_examples():
    a = np.zeros((20, 20), bool)
    a[:10, :10] = True
    assert dice_score(a, a) == 1.0
    assert dice_score(a, ~a) == 0.0
    b = np.zeros((20, 20), bool)
    b[5:15, :10] = True  # 100 pixels, 50 shared with a
    assert dice_score(a, b) == 0.5
    assert dice_score(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0


def test_match_quality():
    s = gen_phantom(RIGID, 7)
    gt = s.gt_correspondences()
    assert match_quality(gt, s.gt_index3d) == (1.0, 1.0)


def test_exact_pipeline():
    s = gen_phantom(RIGID, 8)
    run = run_experiment(s, ExperimentConfig(run_deformation=False))
    r = run.report
    assert r.rre_deg < 1e-3
    assert r.rte_mm < 1e-3 * np.linalg.norm(s.true_pose.t)
    assert r.tre_a_rigid < 0.1
    assert all(hasattr(r, f) for f in REPORT_FIELDS)


def test_nonrigid_beats_rigid():
    s = gen_phantom(PhantomParams(deformation_amplitude=0.05), 9)
    run = run_experiment(s, ExperimentConfig(rto=RtoConfig(max_steps=150)))
    r = run.report
    assert r.tre_a_nonrigid < r.tre_a_rigid
    assert r.err3d_nonrigid_mm < r.err3d_rigid_mm
    assert np.all(np.diff(run.rto.objective) <= 0)


def test_report_json_and_table():
    s = gen_phantom(RIGID, 10)
    r = run_experiment(s, ExperimentConfig(run_deformation=False)).report
    d = json.loads(r.to_json())
    assert "time_rigid_s" not in d and set(REPORT_FIELDS) <= set(d)
    assert "time_rigid_s" in json.loads(r.to_json(include_timing=True))
    nan = dataclasses.replace(r, loss_cfe=float("nan"))
    assert json.loads(nan.to_json())["loss_cfe"] is None
    table = format_report_table([r])
    assert len(table.splitlines()) == 2 and "Dice_r" in table


def test_rotation_sanity_of_true_pose():
    s = gen_phantom(RIGID, 11)
    assert rotation_error_deg(s.true_pose.R, s.true_pose.R) == 0.0
    assert np.all(s.true_camera_cloud()[:, 2] > 0)
