"""Linear (DLT) two-view triangulation."""

from __future__ import annotations

import numpy as np

from ..errors import TriangulationFailure
from .camera import PinholeCamera, Pose

MIN_PARALLAX_DEG = 0.5


def _projection_rows(pose: Pose) -> np.ndarray:
    # normalized camera: x ~ [R^T | -R^T t] p
    return np.hstack([pose.R.T, (-pose.R.T @ pose.t)[:, None]])


def triangulate_many(pose_a: Pose, pose_b: Pose, u_a, u_b, camera: PinholeCamera,
                     min_parallax_deg: float = MIN_PARALLAX_DEG):
    """Triangulate ``(N, 2)`` pixel pairs.

    Returns ``(points, ok)`` where ``ok`` marks points with enough ray
    parallax and positive depth in both cameras.
    """
    xa = camera.normalize(np.atleast_2d(u_a))
    xb = camera.normalize(np.atleast_2d(u_b))
    Pa = _projection_rows(pose_a)
    Pb = _projection_rows(pose_b)
    n = len(xa)
    A = np.empty((n, 4, 4))
    A[:, 0] = xa[:, 0:1] * Pa[2] - Pa[0]
    A[:, 1] = xa[:, 1:2] * Pa[2] - Pa[1]
    A[:, 2] = xb[:, 0:1] * Pb[2] - Pb[0]
    A[:, 3] = xb[:, 1:2] * Pb[2] - Pb[1]
    # row scaling does not change the null vector but helps conditioning
    A /= np.linalg.norm(A, axis=2, keepdims=True)
    _, _, Vt = np.linalg.svd(A)
    X = Vt[:, -1, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        points = X[:, :3] / X[:, 3:4]

    ok = np.all(np.isfinite(points), axis=1) & (np.abs(X[:, 3]) > 1e-12)
    pts = np.where(ok[:, None], points, 0.0)
    za = pose_a.to_camera(pts)[:, 2]
    zb = pose_b.to_camera(pts)[:, 2]
    ok &= (za > 0) & (zb > 0)

    ra = pts - pose_a.t
    rb = pts - pose_b.t
    na = np.linalg.norm(ra, axis=1)
    nb = np.linalg.norm(rb, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cos = np.sum(ra * rb, axis=1) / (na * nb)
    angle = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
    ok &= np.isfinite(angle) & (angle >= min_parallax_deg)
    if np.linalg.norm(pose_a.t - pose_b.t) < 1e-12:
        ok[:] = False
    return points, ok


def ray_angles(pose_a: Pose, pose_b: Pose, points) -> np.ndarray:
    """Angle (degrees) subtended at each point by the two camera centers."""
    ra = points - pose_a.t
    rb = points - pose_b.t
    cos = np.sum(ra * rb, axis=1) / (np.linalg.norm(ra, axis=1) * np.linalg.norm(rb, axis=1))
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def triangulate(pose_a: Pose, pose_b: Pose, u_a, u_b, camera: PinholeCamera,
                min_parallax_deg: float = MIN_PARALLAX_DEG) -> np.ndarray:
    """Triangulate one correspondence into world coordinates.

    Raises :class:`TriangulationFailure` for zero baseline, parallax below
    the floor, or a point behind either camera.
    """
    if np.linalg.norm(pose_a.t - pose_b.t) < 1e-12:
        raise TriangulationFailure("zero baseline between the two poses")
    pts, ok = triangulate_many(pose_a, pose_b, np.asarray(u_a)[None], np.asarray(u_b)[None], camera,
                               min_parallax_deg)
    if not ok[0]:
        raise TriangulationFailure("insufficient parallax or negative depth")
    return pts[0]
