"""Scene directories: the set of files one registration run reads.

A scene directory holds

    scene.cfg              [camera] section (plus [phantom] for synthetic scenes)
    cloud.ply              model point cloud, world frame
    curves3d.txt           3D landmark curves; vertices must also be cloud vertices
    curves2d.txt           2D landmark curves (pixels)
    features3d.txt         one embedding per 3D curve vertex, in file order
    features2d.txt         one embedding per 2D curve pixel, in file order
    scores3d.txt           optional overlap scores for the 3D landmarks
    scores2d.txt           optional overlap scores for the 2D landmarks
    mask.pgm               target silhouette

and, for phantoms, ground truth in ``gt_pose.txt``, ``gt_deformation.txt``
and ``gt_correspondences.txt``.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from liverreg import io
from liverreg.config import _section_to, format_camera
from liverreg.correspondence import OverlapScores
from liverreg.errors import InvariantViolation, IoFailure, ParseError
from liverreg.geom import CameraModel
from liverreg.phantom import PhantomParams, PhantomScene


@dataclass
class SceneData:
    cam: CameraModel
    cloud: np.ndarray
    curves3d: list
    curves2d: list
    features3d: np.ndarray
    features2d: np.ndarray
    scores3d: OverlapScores | None
    scores2d: OverlapScores | None
    mask: np.ndarray
    landmark_index: np.ndarray

    @property
    def landmarks3d(self) -> np.ndarray:
        return self.cloud[self.landmark_index]

    @property
    def pixels2d(self) -> np.ndarray:
        return np.vstack([c.points for c in self.curves2d]) if self.curves2d else np.zeros((0, 2))


def landmark_cloud_index(cloud, curves3d) -> tuple[np.ndarray, np.ndarray]:
    """Map every 3D curve vertex to the cloud vertex with identical coordinates.

    Vertices missing from the cloud are appended. Returns (cloud, index).
    """
    lookup = {}
    for i, p in enumerate(map(tuple, np.asarray(cloud))):
        lookup.setdefault(p, i)
    extra = []
    index = []
    n = len(cloud)
    for c in curves3d:
        for p in map(tuple, c.points):
            if p not in lookup:
                lookup[p] = n + len(extra)
                extra.append(p)
            index.append(lookup[p])
    if extra:
        cloud = np.vstack([cloud, np.array(extra)])
    return cloud, np.array(index, dtype=np.int64)


def _read_cfg(path: Path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ParseError(path, getattr(exc, "lineno", 0) or 0, str(exc).splitlines()[0]) from exc
    return cp


def load_camera(path) -> CameraModel:
    cp = _read_cfg(Path(path))
    if not cp.has_section("camera"):
        raise ParseError(path, 1, "missing [camera] section")
    return _section_to(CameraModel, cp["camera"], f"{path}[camera]")


def load_scene(directory, cam: CameraModel | None = None) -> SceneData:
    d = Path(directory)
    if cam is None:
        cam = load_camera(d / "scene.cfg")
    cloud = io.load_cloud(d / "cloud.ply")
    curves3d = io.load_curves(d / "curves3d.txt")
    curves2d = io.load_curves(d / "curves2d.txt")
    for c in curves3d:
        if c.dim != 3:
            raise InvariantViolation("LandmarkCurve", "curves3d.txt holds a 2D curve")
    for c in curves2d:
        if c.dim != 2:
            raise InvariantViolation("LandmarkCurve", "curves2d.txt holds a 3D curve")
    f3 = io.load_features(d / "features3d.txt")
    f2 = io.load_features(d / "features2d.txt")
    n3 = sum(len(c) for c in curves3d)
    n2 = sum(len(c) for c in curves2d)
    if f3.shape[0] != n3:
        raise InvariantViolation("FeatureSet", f"{f3.shape[0]} 3D embeddings for {n3} landmark vertices")
    if f2.shape[0] != n2:
        raise InvariantViolation("FeatureSet", f"{f2.shape[0]} 2D embeddings for {n2} landmark pixels")
    if f3.shape[1] != f2.shape[1]:
        raise InvariantViolation("FeatureSet", "3D and 2D embeddings differ in dimension")
    s3 = io.load_scores(d / "scores3d.txt") if (d / "scores3d.txt").exists() else None
    s2 = io.load_scores(d / "scores2d.txt") if (d / "scores2d.txt").exists() else None
    if s3 is not None and len(s3) != n3:
        raise InvariantViolation("OverlapScores", f"{len(s3)} 3D scores for {n3} landmarks")
    if s2 is not None and len(s2) != n2:
        raise InvariantViolation("OverlapScores", f"{len(s2)} 2D scores for {n2} landmarks")
    mask = io.load_mask(d / "mask.pgm")
    if mask.shape != (cam.height, cam.width):
        raise InvariantViolation("mask", f"mask {mask.shape} does not match camera {(cam.height, cam.width)}")
    cloud, index = landmark_cloud_index(cloud, curves3d)
    return SceneData(cam, cloud, curves3d, curves2d, f3, f2, s3, s2, mask, index)


def save_scene(scene: PhantomScene, directory):
    """Write a phantom as a scene directory, ground truth included."""
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {d}: {exc}") from exc
    from liverreg.config import _section_lines

    text = format_camera(scene.cam) + "\n".join(_section_lines("phantom", scene.params))
    text += f"[seed]\nseed = {scene.seed}\n"
    io._write(d / "scene.cfg", text)
    io.save_cloud(scene.cloud, d / "cloud.ply")
    io.save_curves(scene.curves3d, d / "curves3d.txt")
    io.save_curves(scene.curves2d, d / "curves2d.txt")
    io.save_features(scene.features3d, d / "features3d.txt")
    io.save_features(scene.features2d, d / "features2d.txt")
    io.save_scores(scene.scores3d, d / "scores3d.txt")
    io.save_scores(scene.scores2d, d / "scores2d.txt")
    io.save_mask(scene.gt_mask, d / "mask.pgm")
    io.save_pose(scene.true_pose, d / "gt_pose.txt")
    io.save_deformation(scene.true_deformation, d / "gt_deformation.txt")
    io.save_correspondences(scene.gt_correspondences(), d / "gt_correspondences.txt")


def load_phantom(directory) -> PhantomScene:
    """Rebuild a :class:`PhantomScene` from a directory written by :func:`save_scene`."""
    d = Path(directory)
    cp = _read_cfg(d / "scene.cfg")
    if not cp.has_section("phantom"):
        raise ParseError(d / "scene.cfg", 1, "not a phantom scene: missing [phantom] section")
    params = _section_to(PhantomParams, cp["phantom"], f"{d / 'scene.cfg'}[phantom]")
    seed = int(cp["seed"]["seed"]) if cp.has_section("seed") else 0
    data = load_scene(d)
    if data.scores3d is None or data.scores2d is None:
        raise ParseError(d, 0, "phantom scenes need scores3d.txt and scores2d.txt")
    pose = io.load_pose(d / "gt_pose.txt")
    deformation = io.load_deformation(d / "gt_deformation.txt")
    if deformation.shape[0] != data.cloud.shape[0]:
        raise InvariantViolation("DeformationField", "length differs from the cloud")
    gt = io.load_correspondences(d / "gt_correspondences.txt")
    n2 = data.pixels2d.shape[0]
    gt_index3d = -np.ones(n2, dtype=np.int64)
    gt_index3d[gt.index2d] = gt.index3d
    from liverreg.geom import apply_pose, project_camera_frame

    cam_pts = apply_pose(data.cloud + deformation, pose)
    return PhantomScene(
        params=params, seed=seed, cloud=data.cloud, curves3d=data.curves3d,
        landmark_index=data.landmark_index, true_pose=pose, true_deformation=deformation,
        cam=data.cam, gt_pixels=project_camera_frame(cam_pts[data.landmark_index], data.cam),
        curves2d=data.curves2d, gt_index3d=gt_index3d, outlier2d=np.zeros(n2, dtype=bool),
        features3d=data.features3d, features2d=data.features2d,
        scores3d=data.scores3d, scores2d=data.scores2d, gt_mask=data.mask,
    )
