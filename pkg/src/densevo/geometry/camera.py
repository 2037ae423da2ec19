"""Pinhole camera with radial-tangential distortion, rigid poses and SO(3) helpers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import BehindCameraError, InvalidInputError, UndistortError

Z_MIN = 1e-6


def hat(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def hat_batch(w: np.ndarray) -> np.ndarray:
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def so3_exp(w) -> np.ndarray:
    """Rodrigues' formula."""
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    K = hat(w)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(theta) / theta * K + (1 - np.cos(theta)) / theta ** 2 * K @ K


def so3_log(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * v
    if np.pi - theta < 1e-6:
        # near pi: axis from the symmetric part
        M = (R + np.eye(3)) / 2.0
        axis = M[np.argmax(np.diag(M))]
        axis = axis / np.linalg.norm(axis)
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * v


def rotation_angle(Ra, Rb) -> float:
    """Geodesic distance between two rotations, radians."""
    return float(np.linalg.norm(so3_log(np.asarray(Ra).T @ np.asarray(Rb))))


def project_to_so3(M) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1
        R = U @ Vt
    return R


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform.

    A world point ``p`` has camera coordinates ``R.T @ (p - t)``; ``t`` is the
    camera center.
    """

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @property
    def rotation(self):
        return self.R

    @property
    def translation(self):
        return self.t

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.R
        return bool(
            np.all(np.isfinite(R)) and np.all(np.isfinite(self.t))
            and np.allclose(R.T @ R, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) < tol
        )

    def validate(self, tol: float = 1e-9) -> "Pose":
        if not self.is_valid(tol):
            raise InvalidInputError("rotation is not orthonormal with det +1")
        return self

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    __matmul__ = compose

    def to_camera(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (p - self.t) @ self.R

    def to_world(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.R.T + self.t

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def perturbed(self, delta) -> "Pose":
        """Apply a 6-vector local increment ``(rotation, translation)``."""
        delta = np.asarray(delta, dtype=np.float64)
        return Pose(self.R @ so3_exp(delta[:3]), self.t + delta[3:])

    def orthonormalized(self) -> "Pose":
        return Pose(project_to_so3(self.R), self.t)


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    distortion: tuple = (0.0, 0.0, 0.0, 0.0)
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("focal lengths must be positive")
        if self.width is not None and not (0 <= self.cx < self.width):
            raise InvalidInputError("principal point outside the image")
        if self.height is not None and not (0 <= self.cy < self.height):
            raise InvalidInputError("principal point outside the image")
        d = tuple(float(v) for v in self.distortion)
        if len(d) != 4:
            raise InvalidInputError("distortion must be (k1, k2, p1, p2)")
        object.__setattr__(self, "distortion", d)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def has_distortion(self) -> bool:
        return any(v != 0.0 for v in self.distortion)

    def undistorted(self) -> "PinholeCamera":
        return PinholeCamera(self.fx, self.fy, self.cx, self.cy, (0.0, 0.0, 0.0, 0.0), self.width, self.height)

    def normalize(self, pixels) -> np.ndarray:
        u = np.asarray(pixels, dtype=np.float64)
        return np.stack([(u[..., 0] - self.cx) / self.fx, (u[..., 1] - self.cy) / self.fy], axis=-1)

    def denormalize(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64)
        return np.stack([xy[..., 0] * self.fx + self.cx, xy[..., 1] * self.fy + self.cy], axis=-1)

    def bearings(self, pixels) -> np.ndarray:
        """Unit rays in the camera frame for (undistorted) pixels."""
        xy = self.normalize(pixels)
        b = np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)
        return b / np.linalg.norm(b, axis=-1, keepdims=True)

    def contains(self, pixels, margin: float = 0.0) -> np.ndarray:
        u = np.asarray(pixels, dtype=np.float64)
        ok = np.ones(u.shape[:-1], dtype=bool)
        if self.width is not None:
            ok &= (u[..., 0] >= margin) & (u[..., 0] <= self.width - 1 - margin)
        if self.height is not None:
            ok &= (u[..., 1] >= margin) & (u[..., 1] <= self.height - 1 - margin)
        return ok


def _distort_normalized(xy, dist):
    k1, k2, p1, p2 = dist
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def _distort_jacobian(xy, dist):
    k1, k2, p1, p2 = dist
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + k1 * r2 + k2 * r2 * r2
    dradial = k1 + 2.0 * k2 * r2  # d radial / d r2
    J = np.empty(xy.shape[:-1] + (2, 2))
    J[..., 0, 0] = radial + 2 * x * x * dradial + 2 * p1 * y + 6 * p2 * x
    J[..., 0, 1] = 2 * x * y * dradial + 2 * p1 * x + 2 * p2 * y
    J[..., 1, 0] = 2 * x * y * dradial + 2 * p1 * x + 2 * p2 * y
    J[..., 1, 1] = radial + 2 * y * y * dradial + 6 * p1 * y + 2 * p2 * x
    return J


def distort(camera: PinholeCamera, pixel) -> np.ndarray:
    """Forward lens model: ideal pixel -> raw (distorted) pixel."""
    xy = camera.normalize(pixel)
    return camera.denormalize(_distort_normalized(xy, camera.distortion))


def undistort(camera: PinholeCamera, raw_pixel, max_iters: int = 10, tol: float = 1e-6) -> np.ndarray:
    """Invert the radial-tangential model by Newton iteration.

    Works on a single pixel or an ``(N, 2)`` array. Raises
    :class:`UndistortError` if any point fails to reach ``tol`` pixels.
    """
    raw = np.asarray(raw_pixel, dtype=np.float64)
    if not camera.has_distortion:
        return raw.copy()
    target = camera.normalize(raw)
    xy = target.copy()
    scale = np.array([camera.fx, camera.fy])
    for _ in range(max_iters):
        err = _distort_normalized(xy, camera.distortion) - target
        if np.all(np.abs(err * scale) < tol * 0.1):
            break
        J = _distort_jacobian(xy, camera.distortion)
        step = np.linalg.solve(J, err[..., None])[..., 0]
        xy = xy - step
    err = np.abs((_distort_normalized(xy, camera.distortion) - target) * scale)
    if not np.all(np.isfinite(err)) or np.any(err >= tol):
        raise UndistortError(f"undistortion did not converge (max residual {np.nanmax(err):.3g} px)")
    return camera.denormalize(xy)


def undistort_points(camera: PinholeCamera, raw_pixels, max_iters: int = 10, tol: float = 1e-6):
    """Batch :func:`undistort` that reports failures instead of raising.

    Returns ``(pixels, ok)``; rows with ``ok == False`` did not converge.
    """
    raw = np.asarray(raw_pixels, dtype=np.float64).reshape(-1, 2)
    if not camera.has_distortion:
        return raw.copy(), np.ones(len(raw), dtype=bool)
    target = camera.normalize(raw)
    xy = target.copy()
    for _ in range(max_iters):
        err = _distort_normalized(xy, camera.distortion) - target
        J = _distort_jacobian(xy, camera.distortion)
        det = np.linalg.det(J)
        good = np.abs(det) > 1e-12
        step = np.zeros_like(xy)
        step[good] = np.linalg.solve(J[good], err[good][..., None])[..., 0]
        xy = xy - step
    err = np.abs((_distort_normalized(xy, camera.distortion) - target) * [camera.fx, camera.fy])
    ok = np.all(np.isfinite(err), axis=1) & np.all(err < tol, axis=1)
    return camera.denormalize(xy), ok


def project(camera: PinholeCamera, pose: Pose, point, z_min: float = Z_MIN) -> np.ndarray:
    """Ideal pinhole projection of a world point (no distortion)."""
    xc = pose.to_camera(point)
    if xc[2] <= z_min:
        raise BehindCameraError(f"point depth {xc[2]:.3g} <= {z_min}")
    return np.array([camera.fx * xc[0] / xc[2] + camera.cx, camera.fy * xc[1] / xc[2] + camera.cy])


def project_points(camera: PinholeCamera, pose: Pose, points):
    """Vectorized projection; returns ``(pixels, depth)``. No depth check."""
    xc = pose.to_camera(points)
    z = xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.stack([camera.fx * xc[..., 0] / z + camera.cx, camera.fy * xc[..., 1] / z + camera.cy], axis=-1)
    return u, z
