from .camera import (
    PinholeCamera,
    Pose,
    distort,
    hat,
    project,
    project_points,
    rotation_angle,
    so3_exp,
    so3_log,
    undistort,
    undistort_points,
)
from .pnp import p3p, pnp_ransac, refine_pose
from .triangulation import triangulate, triangulate_many
from .twoview import Landmark, RansacConfig, TwoViewResult, init_two_view

__all__ = [
    "Landmark", "PinholeCamera", "Pose", "RansacConfig", "TwoViewResult", "distort", "hat",
    "init_two_view", "p3p", "pnp_ransac", "project", "project_points", "refine_pose",
    "rotation_angle", "so3_exp", "so3_log", "triangulate", "triangulate_many", "undistort",
    "undistort_points",
]
