"""Robust reprojection residuals, analytic Jacobians and the BA variable layout."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import BehindCameraError, InvalidInputError
from ..geometry.camera import Z_MIN, PinholeCamera, Pose, hat, hat_batch
from ..tracking.robust import RobustKernel, geman_mcclure, irls_weight


def residual_and_jacobians(pixel, pose: Pose, point, camera: PinholeCamera, kernel: RobustKernel):
    """Residual ``u - phi(R^T (p - t))`` with its camera and point Jacobians.

    The camera is perturbed as ``R <- R exp(w)``, ``t <- t + dt`` with the
    6-vector ``(w, dt)``. Returns ``(r, Jc, Jp, weight)``; ``weight`` is the
    Geman-McClure reweighting factor, 1 at zero residual.
    """
    xc = pose.R.T @ (np.asarray(point, dtype=np.float64) - pose.t)
    x, y, z = xc
    if z <= Z_MIN:
        raise BehindCameraError(f"point depth {z:.3g} <= {Z_MIN}")
    u = np.array([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy])
    r = np.asarray(pixel, dtype=np.float64) - u
    Jproj = np.array([
        [camera.fx / z, 0.0, -camera.fx * x / z ** 2],
        [0.0, camera.fy / z, -camera.fy * y / z ** 2],
    ])
    Jc = -Jproj @ np.hstack([hat(xc), -pose.R.T])
    Jp = -Jproj @ pose.R.T
    return r, Jc, Jp, irls_weight(np.linalg.norm(r), kernel)


@dataclass
class BAProblem:
    """Poses, points and observations indexed by position.

    ``obs_cam[k]``/``obs_pt[k]`` index ``poses``/``points`` for the pixel
    ``obs_px[k]`` (undistorted).
    """

    camera: PinholeCamera
    kernel: RobustKernel
    poses: list
    points: np.ndarray
    obs_cam: np.ndarray
    obs_pt: np.ndarray
    obs_px: np.ndarray
    pose_fixed: np.ndarray = None
    point_fixed: np.ndarray = None
    frame_ids: list = None
    landmark_ids: list = None
    gauge_note: str | None = None

    def __post_init__(self):
        self.points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        self.obs_cam = np.asarray(self.obs_cam, dtype=np.int64)
        self.obs_pt = np.asarray(self.obs_pt, dtype=np.int64)
        self.obs_px = np.asarray(self.obs_px, dtype=np.float64).reshape(-1, 2)
        m, n = len(self.poses), len(self.points)
        if self.pose_fixed is None:
            self.pose_fixed = np.zeros(m, dtype=bool)
        if self.point_fixed is None:
            self.point_fixed = np.zeros(n, dtype=bool)
        self.pose_fixed = np.asarray(self.pose_fixed, dtype=bool)
        self.point_fixed = np.asarray(self.point_fixed, dtype=bool)
        if self.frame_ids is None:
            self.frame_ids = list(range(m))
        if self.landmark_ids is None:
            self.landmark_ids = list(range(n))
        self.validate()

    @property
    def n_obs(self) -> int:
        return len(self.obs_cam)

    def validate(self):
        m, n = len(self.poses), len(self.points)
        if not (len(self.obs_cam) == len(self.obs_pt) == len(self.obs_px)):
            raise InvalidInputError("observation arrays differ in length")
        if len(self.obs_cam) and (self.obs_cam.min() < 0 or self.obs_cam.max() >= m):
            raise InvalidInputError("observation references a missing camera")
        if len(self.obs_pt) and (self.obs_pt.min() < 0 or self.obs_pt.max() >= n):
            raise InvalidInputError("observation references a missing point")
        if len(self.pose_fixed) != m or len(self.point_fixed) != n:
            raise InvalidInputError("fixed flags do not match the variables")
        if m and not self.pose_fixed.any() and not self.gauge_note:
            raise InvalidInputError("no camera is fixed; fix one or record a gauge_note")
        counts = np.bincount(self.obs_pt, minlength=n)
        if np.any(counts[~self.point_fixed] < 2):
            raise InvalidInputError("every free point needs at least two observations")

    def copy(self) -> "BAProblem":
        return BAProblem(
            self.camera, self.kernel, list(self.poses), self.points.copy(), self.obs_cam.copy(),
            self.obs_pt.copy(), self.obs_px.copy(), self.pose_fixed.copy(), self.point_fixed.copy(),
            list(self.frame_ids), list(self.landmark_ids), self.gauge_note,
        )

    def free_cameras(self) -> np.ndarray:
        return np.nonzero(~self.pose_fixed)[0]

    def free_points(self) -> np.ndarray:
        return np.nonzero(~self.point_fixed)[0]

    def stacked_poses(self):
        R = np.array([p.R for p in self.poses]).reshape(-1, 3, 3)
        t = np.array([p.t for p in self.poses]).reshape(-1, 3)
        return R, t


@dataclass
class Linearization:
    r: np.ndarray  # (K, 2)
    Jc: np.ndarray  # (K, 2, 6)
    Jp: np.ndarray  # (K, 2, 3)
    weight: np.ndarray  # (K,)
    valid: np.ndarray  # (K,) positive depth
    cost: float = field(default=0.0)


def linearize(problem: BAProblem) -> Linearization:
    """Residuals, Jacobians and robust weights for every observation.

    Observations behind their camera get zero weight and are flagged in
    ``valid``.
    """
    cam = problem.camera
    R, t = problem.stacked_poses()
    Rk = R[problem.obs_cam]
    p = problem.points[problem.obs_pt] - t[problem.obs_cam]
    xc = np.einsum("kji,kj->ki", Rk, p)
    z = xc[:, 2]
    valid = z > Z_MIN
    zs = np.where(valid, z, 1.0)
    u = np.stack([cam.fx * xc[:, 0] / zs + cam.cx, cam.fy * xc[:, 1] / zs + cam.cy], axis=1)
    r = np.where(valid[:, None], problem.obs_px - u, 0.0)
    K = len(z)
    Jproj = np.zeros((K, 2, 3))
    Jproj[:, 0, 0] = cam.fx / zs
    Jproj[:, 0, 2] = -cam.fx * xc[:, 0] / zs ** 2
    Jproj[:, 1, 1] = cam.fy / zs
    Jproj[:, 1, 2] = -cam.fy * xc[:, 1] / zs ** 2
    RkT = np.transpose(Rk, (0, 2, 1))
    Jc = -Jproj @ np.concatenate([hat_batch(xc), -RkT], axis=2)
    Jp = -Jproj @ RkT
    s = np.linalg.norm(r, axis=1)
    w = np.where(valid, irls_weight(s, problem.kernel), 0.0)
    rho = np.where(valid, geman_mcclure(s, problem.kernel), 1.0)
    return Linearization(r, Jc, Jp, w, valid, float(np.sum(rho)))


def total_cost(problem: BAProblem) -> float:
    """Sum of Geman-McClure losses; observations behind a camera count as 1."""
    cam = problem.camera
    R, t = problem.stacked_poses()
    xc = np.einsum("kji,kj->ki", R[problem.obs_cam], problem.points[problem.obs_pt] - t[problem.obs_cam])
    z = xc[:, 2]
    valid = z > Z_MIN
    zs = np.where(valid, z, 1.0)
    u = np.stack([cam.fx * xc[:, 0] / zs + cam.cx, cam.fy * xc[:, 1] / zs + cam.cy], axis=1)
    s = np.linalg.norm(problem.obs_px - u, axis=1)
    return float(np.sum(np.where(valid, geman_mcclure(s, problem.kernel), 1.0)))


def apply_update(problem: BAProblem, dxc: np.ndarray, dxp: np.ndarray) -> BAProblem:
    """New problem with free cameras/points moved by the block updates."""
    out = problem.copy()
    for k, i in enumerate(problem.free_cameras()):
        out.poses[i] = problem.poses[i].perturbed(dxc[k])
    fp = problem.free_points()
    if len(fp):
        out.points[fp] = problem.points[fp] + dxp
    return out
