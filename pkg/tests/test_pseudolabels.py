import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from liverreg.errors import InvariantViolation, OrientationUndetermined
from liverreg.geom import CameraModel, RigidPose, project
from liverreg.pseudolabels import (
    CurvePair,
    LandmarkCurve,
    arc_length_resample,
    build_pseudo_correspondences,
    sparse_anchor_correspondences,
)

from oracles import point_at_arclength, polyline_length

CAM = CameraModel(200.0, 200.0, 64.0, 64.0, 128, 128)
POSE = RigidPose(np.eye(3), np.array([0.0, 0.0, 10.0]))


def test_straight_segment():
    c = arc_length_resample(LandmarkCurve("ridge", [[0, 0, 0], [4, 0, 0]]), 5)
    assert np.allclose(c.points[:, 0], [0, 1, 2, 3, 4], atol=1e-15)


def test_uniform_fixed_point():
    pts = np.c_[np.arange(6.0), np.zeros(6), np.zeros(6)]
    c = arc_length_resample(LandmarkCurve("ridge", pts), 6)
    assert np.allclose(c.points, pts, atol=1e-12)


def test_l_shape_midpoint_at_corner():
    c = arc_length_resample(LandmarkCurve("ridge", [[0, 0], [1, 0], [1, 1]]), 3)
    assert np.allclose(c.points, [[0, 0], [1, 0], [1, 1]], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(2, 60), st.sampled_from([2, 3]))
def test_resample_positions_match_walk_oracle(seed, nv, n, dim):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(nv, dim)) * rng.uniform(0.01, 100)
    c = arc_length_resample(LandmarkCurve("ligament", pts), n)
    L = polyline_length(pts)
    for k in range(n):
        ref = point_at_arclength(pts, L * k / (n - 1))
        assert np.linalg.norm(c.points[k] - ref) <= 1e-9 * L


def test_curve_invariants():
    with pytest.raises(InvariantViolation):
        LandmarkCurve("ridge", [[0, 0, 0]])
    with pytest.raises(InvariantViolation):
        LandmarkCurve("ridge", [[0, 0, 0], [0, 0, 0], [1, 0, 0]])
    with pytest.raises(InvariantViolation):
        LandmarkCurve("vessel", [[0, 0], [1, 0]])
    with pytest.raises(ValueError):
        arc_length_resample(LandmarkCurve("ridge", [[0, 0], [1, 0]]), 1)


def test_closed_loop_has_length():
    loop = LandmarkCurve("ridge", [[0, 0], [1, 0], [0, 0]])
    assert arc_length_resample(loop, 3).points[1].tolist() == [1.0, 0.0]


def _pair(n2=7, reverse_2d=False, orientation=None):
    c3 = LandmarkCurve("ridge", [[-1, 0, 0], [0, 0.5, 0], [1, 0, 0]])
    dense = arc_length_resample(c3, n2)
    px = project(dense.points, POSE, CAM)
    if reverse_2d:
        px = px[::-1]
    return CurvePair(c3, LandmarkCurve("ridge", px, orientation))


def test_count_follows_pixels():
    cs = build_pseudo_correspondences([_pair(7)], POSE, CAM)
    assert len(cs) == 7
    assert np.allclose(project(cs.points3d, POSE, CAM), cs.pixels, atol=1e-9)


def test_straight_lines_affine_in_index():
    c3 = LandmarkCurve("ligament", [[0, 0, 0], [3, 0, 0]])
    c2 = LandmarkCurve("ligament", np.c_[np.linspace(10, 40, 9), np.full(9, 5.0)], "forward")
    cs = build_pseudo_correspondences([CurvePair(c3, c2)])
    assert np.allclose(np.diff(cs.points3d[:, 0], 2), 0, atol=1e-12)


def test_reversed_2d_gives_same_pairs():
    fwd = build_pseudo_correspondences([_pair(9)], POSE, CAM)
    rev = build_pseudo_correspondences([_pair(9, reverse_2d=True)], POSE, CAM)
    key = lambda cs: {(tuple(np.round(p, 9)), tuple(np.round(x, 9))) for p, x in zip(cs.points3d, cs.pixels)}  # noqa: E731
    assert key(fwd) == key(rev)


def test_orientation_token_without_pose():
    fwd = build_pseudo_correspondences([_pair(9, orientation="forward")])
    rev = build_pseudo_correspondences([_pair(9, reverse_2d=True, orientation="reversed")])
    assert np.allclose(np.sort(fwd.points3d, axis=0), np.sort(rev.points3d, axis=0))
    assert np.allclose(project(rev.points3d, POSE, CAM), rev.pixels, atol=1e-9)
    with pytest.raises(OrientationUndetermined):
        build_pseudo_correspondences([_pair(9)])


def test_sparse_anchors_one_per_vertex():
    cs = sparse_anchor_correspondences([_pair(9)], POSE, CAM)
    assert cs.index3d.tolist() == [0, 1, 2]
    assert cs.index2d.tolist() == [0, 4, 8]
    assert np.allclose(project(cs.points3d, POSE, CAM), cs.pixels, atol=1e-9)


def test_kinds_must_match():
    with pytest.raises(InvariantViolation):
        CurvePair(LandmarkCurve("ridge", [[0, 0, 0], [1, 0, 0]]), LandmarkCurve("ligament", [[0, 0], [1, 0]]))
