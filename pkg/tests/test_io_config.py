import numpy as np
import pytest

from liverreg import io
from liverreg.config import EngineConfig, format_config, load_config, parse_config
from liverreg.correspondence import CorrespondenceSet, OverlapScores
from liverreg.errors import InvalidParams, InvariantViolation, IoFailure, ParseError
from liverreg.geom import CameraModel, RigidPose
from liverreg.phantom import PhantomParams, gen_phantom
from liverreg.pseudolabels import LandmarkCurve
from liverreg.scene import load_phantom, load_scene, save_scene

from oracles import random_rotation


def _ugly(rng, shape):
    """Floats with awkward magnitudes and full 53-bit mantissas."""
    return rng.normal(size=shape) * 10.0 ** rng.integers(-12, 12, size=shape)


def test_pose_roundtrip_and_identity_format(tmp_path):
    io.save_pose(RigidPose.identity(), tmp_path / "p.txt")
    nums = (tmp_path / "p.txt").read_text().split()
    assert nums == ["1", "0", "0", "0", "1", "0", "0", "0", "1", "0", "0", "0"]
    rng = np.random.default_rng(0)
    pose = RigidPose(random_rotation(rng), _ugly(rng, 3))
    io.save_pose(pose, tmp_path / "q.txt")
    back = io.load_pose(tmp_path / "q.txt")
    assert np.array_equal(back.R, pose.R) and np.array_equal(back.t, pose.t)


def test_cloud_roundtrip_and_errors(tmp_path):
    rng = np.random.default_rng(1)
    P = _ugly(rng, (50, 3))
    io.save_cloud(P, tmp_path / "c.ply")
    assert np.array_equal(io.load_cloud(tmp_path / "c.ply"), P)
    text = (tmp_path / "c.ply").read_text().splitlines()
    end = text.index("end_header")
    text[end + 3] = "0 nan 0"
    (tmp_path / "bad.ply").write_text("\n".join(text) + "\n")
    with pytest.raises(InvariantViolation, match="index 2"):
        io.load_cloud(tmp_path / "bad.ply")


def test_features_roundtrip_and_mixed_dims(tmp_path):
    rng = np.random.default_rng(2)
    F = _ugly(rng, (7, 5))
    io.save_features(F, tmp_path / "f.txt")
    assert np.array_equal(io.load_features(tmp_path / "f.txt"), F)
    (tmp_path / "g.txt").write_text("dim 3\n1 2 3\n4 5\n6 7 8\n")
    with pytest.raises(ParseError) as exc:
        io.load_features(tmp_path / "g.txt")
    assert exc.value.line == 3


def test_curves_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    curves = [LandmarkCurve("ridge", _ugly(rng, (4, 3))),
              LandmarkCurve("ligament", _ugly(rng, (6, 2)), "reversed")]
    io.save_curves(curves, tmp_path / "c.txt")
    back = io.load_curves(tmp_path / "c.txt")
    for a, b in zip(curves, back):
        assert (a.kind, a.orientation) == (b.kind, b.orientation)
        assert np.array_equal(a.points, b.points)


def test_curves_truncated(tmp_path):
    (tmp_path / "c.txt").write_text("curve ridge 3\n0 0 0\n1 1 1\n")
    with pytest.raises(ParseError):
        io.load_curves(tmp_path / "c.txt")


def test_correspondences_roundtrip_and_empty(tmp_path):
    io.save_correspondences(CorrespondenceSet.empty(), tmp_path / "e.txt")
    assert (tmp_path / "e.txt").read_text() == "pairs 0\n"
    assert len(io.load_correspondences(tmp_path / "e.txt")) == 0
    rng = np.random.default_rng(4)
    cs = CorrespondenceSet([3, 1, 7], [0, 5, 2], _ugly(rng, (3, 3)), _ugly(rng, (3, 2)), rng.uniform(-1, 1, 3))
    io.save_correspondences(cs, tmp_path / "c.txt")
    back = io.load_correspondences(tmp_path / "c.txt")
    for f in ("index3d", "index2d", "points3d", "pixels", "similarity"):
        assert np.array_equal(getattr(back, f), getattr(cs, f))


def test_deformation_scores_trace_mask_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    D = _ugly(rng, (20, 3))
    io.save_deformation(D, tmp_path / "d.txt")
    assert np.array_equal(io.load_deformation(tmp_path / "d.txt"), D)
    s = OverlapScores(rng.random(9), rng.uniform(0.01, 1, 9))
    io.save_scores(s, tmp_path / "s.txt")
    b = io.load_scores(tmp_path / "s.txt")
    assert np.array_equal(b.score, s.score) and np.array_equal(b.uncertainty, s.uncertainty)
    trace = [(0, *rng.random(4)), (1, *rng.random(4))]
    io.save_trace(trace, tmp_path / "t.txt")
    assert np.array_equal(np.array(io.load_trace(tmp_path / "t.txt")), np.array(trace))
    m = rng.random((13, 17)) < 0.5
    io.save_mask(m, tmp_path / "m.pgm")
    assert np.array_equal(io.load_mask(tmp_path / "m.pgm"), m)


def test_missing_file_is_io_failure(tmp_path):
    with pytest.raises(IoFailure):
        io.load_pose(tmp_path / "nope.txt")


def test_config_roundtrip_and_errors(tmp_path):
    cfg = EngineConfig(camera=CameraModel(123.25, 120.0, 64.0, 63.5, 128, 128), overlap_threshold=0.4)
    text = format_config(cfg)
    assert parse_config(text) == cfg
    (tmp_path / "e.cfg").write_text(text)
    assert load_config(tmp_path / "e.cfg") == cfg
    with pytest.raises(InvalidParams, match="unknown key"):
        parse_config("[ransac]\nmax_iter = 3\n")
    with pytest.raises(InvalidParams, match="unknown section"):
        parse_config("[bogus]\n")
    with pytest.raises(InvalidParams, match="missing"):
        parse_config("[camera]\nfx = 1\n")
    with pytest.raises(InvalidParams):
        parse_config("[rto]\nstep_size = fast\n")
    with pytest.raises(InvariantViolation):
        parse_config("[rto]\nstep_size = -1\n")
    with pytest.raises(ParseError):
        parse_config("key = 1\n")
    assert parse_config("[ransac]\nrefine = no\n").ransac.refine is False


def test_with_seed():
    cfg = EngineConfig().with_seed(9)
    assert cfg.ransac.rng_seed == 9 and cfg.rto.seed == 9


def test_scene_roundtrip(tmp_path):
    s = gen_phantom(PhantomParams(), 12)
    save_scene(s, tmp_path / "a")
    b = load_phantom(tmp_path / "a")
    save_scene(b, tmp_path / "b")
    for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    assert np.array_equal(b.landmark_index, s.landmark_index)
    assert b.cam == s.cam


def test_scene_appends_missing_landmark_vertices(tmp_path):
    s = gen_phantom(PhantomParams(), 13)
    save_scene(s, tmp_path)
    io.save_cloud(s.cloud[:100], tmp_path / "cloud.ply")
    data = load_scene(tmp_path)
    assert data.cloud.shape[0] == 100 + len(s.landmark_index)
    assert np.array_equal(data.landmarks3d, s.landmarks3d)


def test_scene_feature_count_checked(tmp_path):
    s = gen_phantom(PhantomParams(), 14)
    save_scene(s, tmp_path)
    io.save_features(s.features3d[:-1], tmp_path / "features3d.txt")
    with pytest.raises(InvariantViolation):
        load_scene(tmp_path)
