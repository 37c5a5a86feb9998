import json

import numpy as np
import pytest

from liverreg import cli, io
from liverreg.errors import NoConsensus


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "scene"
    assert cli.main(["gen-phantom", "--out", str(d), "--seed", "3", "--n-points", "800"]) == 0
    return d


def test_rigid_deform_overlay_chain(scene_dir, tmp_path, capsys):
    r = tmp_path / "r"
    assert cli.main(["register-rigid", "--scene", str(scene_dir), "--out", str(r)]) == 0
    pose = io.load_pose(r / "pose.txt")
    truth = io.load_pose(scene_dir / "gt_pose.txt")
    assert np.linalg.norm(pose.t - truth.t) < 0.05 * np.linalg.norm(truth.t)
    d = tmp_path / "d"
    rc = cli.main(["register-deform", "--scene", str(scene_dir), "--pose", str(r / "pose.txt"),
                   "--matches", str(r / "inliers.txt"), "--out", str(d), "--config", str(_short_cfg(tmp_path)),
                   "--figures", str(tmp_path / "f")])
    assert rc == 0
    trace = np.array(io.load_trace(d / "trace.txt"))
    assert np.all(np.diff(trace[:, 4]) <= 0)
    assert (tmp_path / "f" / "trace.png").stat().st_size > 0
    out = tmp_path / "o.pgm"
    assert cli.main(["overlay", "--scene", str(scene_dir), "--pose", str(r / "pose.txt"),
                     "--deformation", str(d / "deformation.txt"), "--out", str(out)]) == 0
    img = io.load_pgm(out)
    assert set(np.unique(img).tolist()) <= {0, 96, 255} and np.any(img == 255)
    assert "overlay" in capsys.readouterr().out


def _short_cfg(tmp_path):
    p = tmp_path / "short.cfg"
    p.write_text("[rto]\nmax_steps = 20\nfps_count = 128\n")
    return p


def test_pseudo_labels(scene_dir, tmp_path):
    out = tmp_path / "pl.txt"
    rc = cli.main(["make-pseudo-labels", "--scene", str(scene_dir), "--pose",
                   str(scene_dir / "gt_pose.txt"), "--out", str(out)])
    assert rc == 0
    assert len(io.load_correspondences(out)) > 0
    rc = cli.main(["make-pseudo-labels", "--scene", str(scene_dir), "--sparse", "--pose",
                   str(scene_dir / "gt_pose.txt"), "--out", str(out)])
    assert rc == 0


def test_pseudo_labels_without_orientation_fails(scene_dir, tmp_path):
    rc = cli.main(["make-pseudo-labels", "--scene", str(scene_dir), "--out", str(tmp_path / "x.txt")])
    assert rc == 2


def test_eval_output(tmp_path, capsys):
    rc = cli.main(["eval", "--seeds", "4", "--rigid-only", "--deformation-amplitude", "0",
                   "--n-points", "800", "--figures", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out.splitlines()
    sep = out.index("---")
    assert out[0].split()[0] == "seed"
    row = json.loads(out[sep + 1])
    assert row["seed"] == 4 and row["rre_deg"] < 1e-3
    assert (tmp_path / "metrics.png").exists() and (tmp_path / "overlay_seed4.png").exists()


def test_exit_codes(tmp_path, scene_dir, monkeypatch, capsys):
    assert cli.main(["register-rigid", "--scene", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 4
    bad = tmp_path / "bad.cfg"
    bad.write_text("[ransac]\nconfidence = 2\n")
    assert cli.main(["register-rigid", "--scene", str(scene_dir), "--out", str(tmp_path), "--config", str(bad)]) == 2

    def boom(*a, **k):
        raise NoConsensus("no sample reached the inlier threshold")

    monkeypatch.setattr(cli, "stage_one", boom)
    assert cli.main(["register-rigid", "--scene", str(scene_dir), "--out", str(tmp_path)]) == 3
    assert "error:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        cli.main(["no-such-command"])
    assert exc.value.code == 2
