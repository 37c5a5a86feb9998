"""Dense 2D-3D supervision pairs from annotated landmark curves.

Each 3D curve is resampled at equal arc-length steps to the number of
pixels on its 2D counterpart, and the i-th resampled point is paired with
the i-th pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from liverreg.correspondence import CorrespondenceSet
from liverreg.errors import DegenerateCurve, InvariantViolation, OrientationUndetermined
from liverreg.geom import CameraModel, RigidPose, project

CURVE_KINDS = ("ridge", "ligament", "silhouette")
ORIENTATIONS = ("forward", "reversed")


@dataclass(frozen=True)
class LandmarkCurve:
    """Ordered polyline; 2D curves hold pixels, 3D curves millimeters.

    ``orientation`` is only consulted for 2D curves paired with a 3D curve
    when no pose is available to decide it.
    """

    kind: str
    points: np.ndarray
    orientation: str | None = None

    def __post_init__(self):
        if self.kind not in CURVE_KINDS:
            raise InvariantViolation("LandmarkCurve", f"unknown kind {self.kind!r}")
        if self.orientation is not None and self.orientation not in ORIENTATIONS:
            raise InvariantViolation("LandmarkCurve", f"unknown orientation {self.orientation!r}")
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise InvariantViolation("LandmarkCurve", f"points must be (n, 2) or (n, 3), got {pts.shape}")
        if pts.shape[0] < 2:
            raise InvariantViolation("LandmarkCurve", "a curve needs at least 2 points")
        if not np.all(np.isfinite(pts)):
            raise InvariantViolation("LandmarkCurve", "non-finite coordinate")
        same = np.flatnonzero(np.all(pts[1:] == pts[:-1], axis=1))
        if same.size:
            raise InvariantViolation("LandmarkCurve", f"points {same[0]} and {same[0] + 1} coincide")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def __len__(self):
        return int(self.points.shape[0])

    def reversed(self) -> "LandmarkCurve":
        return LandmarkCurve(self.kind, self.points[::-1].copy(), self.orientation)


@dataclass(frozen=True)
class CurvePair:
    curve3d: LandmarkCurve
    curve2d: LandmarkCurve

    def __post_init__(self):
        if self.curve3d.kind != self.curve2d.kind:
            raise InvariantViolation("CurvePair", f"kinds differ: {self.curve3d.kind} vs {self.curve2d.kind}")
        if self.curve3d.dim != 3 or self.curve2d.dim != 2:
            raise InvariantViolation("CurvePair", "expected a 3D curve and a 2D curve")


def cumulative_length(points) -> np.ndarray:
    seg = np.linalg.norm(np.diff(np.asarray(points, dtype=float), axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def arc_length_resample(curve: LandmarkCurve, n: int) -> LandmarkCurve:
    """Resample ``curve`` to ``n`` points equally spaced in arc length.

    Interpolation is linear within segments and both endpoints are kept
    exactly.
    """
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    pts = curve.points
    s = cumulative_length(pts)
    total = s[-1]
    if not total > 0:
        raise DegenerateCurve("curve has zero arc length")
    targets = total * np.arange(n) / (n - 1)
    seg = np.clip(np.searchsorted(s, targets, side="right") - 1, 0, len(pts) - 2)
    frac = (targets - s[seg]) / (s[seg + 1] - s[seg])
    out = pts[seg] + frac[:, None] * (pts[seg + 1] - pts[seg])
    out[0] = pts[0]
    out[-1] = pts[-1]
    return LandmarkCurve(curve.kind, out, curve.orientation)


def _needs_reversal(pair: CurvePair, pose: RigidPose | None, cam: CameraModel | None) -> bool:
    if pose is not None and cam is not None:
        ends3 = project(pair.curve3d.points[[0, -1]], pose, cam)
        ends2 = pair.curve2d.points[[0, -1]]
        keep = np.linalg.norm(ends3 - ends2, axis=1).sum()
        flip = np.linalg.norm(ends3[::-1] - ends2, axis=1).sum()
        return bool(flip < keep)
    if pair.curve2d.orientation is None:
        raise OrientationUndetermined(
            f"{pair.curve2d.kind} curve: no pose given and no orientation in the input"
        )
    return pair.curve2d.orientation == "reversed"


def build_pseudo_correspondences(pairs, pose: RigidPose | None = None, cam: CameraModel | None = None) -> CorrespondenceSet:
    """Dense pairs: every 2D pixel gets the arc-length aligned 3D point.

    ``index3d`` numbers the resampled 3D points and ``index2d`` the pixels,
    both consecutively across curves. With a pose the curve direction is
    chosen by the endpoint reprojection distance; without one the 2D
    curve's ``orientation`` decides.
    """
    X, x = [], []
    for pair in pairs:
        c3 = pair.curve3d.reversed() if _needs_reversal(pair, pose, cam) else pair.curve3d
        dense = arc_length_resample(c3, len(pair.curve2d))
        X.append(dense.points)
        x.append(pair.curve2d.points)
    if not X:
        return CorrespondenceSet.empty()
    X = np.vstack(X)
    x = np.vstack(x)
    idx = np.arange(X.shape[0])
    return CorrespondenceSet(idx, idx, X, x, np.ones(X.shape[0]))


def sparse_anchor_correspondences(pairs, pose: RigidPose | None = None, cam: CameraModel | None = None) -> CorrespondenceSet:
    """Pair each original 3D curve vertex with its arc-length aligned pixel.

    ``index3d`` numbers the original 3D vertices across curves. When several
    vertices land on the same pixel only the first one is kept.
    """
    rows = []
    off3 = off2 = 0
    for pair in pairs:
        flip = _needs_reversal(pair, pose, cam)
        pts3 = pair.curve3d.points
        n3, n2 = len(pts3), len(pair.curve2d)
        s = cumulative_length(pts3)
        if not s[-1] > 0:
            raise DegenerateCurve("curve has zero arc length")
        t = s / s[-1]
        if flip:
            t = 1.0 - t
        pix = np.rint(t * (n2 - 1)).astype(int)
        seen = set()
        for k in range(n3):
            if pix[k] in seen:
                continue
            seen.add(pix[k])
            rows.append((off3 + k, off2 + pix[k], pts3[k], pair.curve2d.points[pix[k]]))
        off3 += n3
        off2 += n2
    if not rows:
        return CorrespondenceSet.empty()
    return CorrespondenceSet(
        [r[0] for r in rows], [r[1] for r in rows],
        np.array([r[2] for r in rows]), np.array([r[3] for r in rows]), np.ones(len(rows)),
    )
