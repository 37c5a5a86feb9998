"""Two-stage 2D-3D deformable registration of a preoperative point cloud to a
single intraoperative camera view.

Stage I matches landmark embeddings and solves the camera pose with EPnP
inside RANSAC. Stage II optimizes a per-point displacement field against a
silhouette Dice term, a landmark reprojection term and a local isometry term.
"""

from liverreg.errors import RegistrationError
from liverreg.geom import (
    CameraModel,
    RigidPose,
    apply_pose,
    project,
    rotation_error_deg,
    translation_error_mm,
)

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "RegistrationError",
    "RigidPose",
    "apply_pose",
    "project",
    "rotation_error_deg",
    "translation_error_mm",
]
