"""Essential-matrix two-view initialization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from ..errors import InitializationRetry, InvalidInputError
from .camera import PinholeCamera, Pose, hat, so3_exp
from .triangulation import MIN_PARALLAX_DEG, ray_angles, triangulate_many


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 200
    threshold: float = 1.5  # pixels
    seed: int = 0


@dataclass
class Landmark:
    landmark_id: int
    position: np.ndarray
    observing_frames: set


@dataclass
class TwoViewResult:
    pose: Pose  # pose of the second view; the first is the identity
    points: np.ndarray  # (N, 2) world points, NaN where not triangulated
    inliers: np.ndarray  # bool (N,), inlier and successfully triangulated
    landmarks: list
    median_parallax_deg: float


def _hartley(x):
    mean = x.mean(axis=0)
    d = np.sqrt(np.sum((x - mean) ** 2, axis=1)).mean()
    s = np.sqrt(2.0) / max(d, 1e-12)
    T = np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1.0]])
    return (x - mean) * s, T


def eight_point(xa, xb) -> np.ndarray:
    """Essential matrix from >= 8 normalized correspondences, ``xb^T E xa = 0``."""
    na, Ta = _hartley(xa)
    nb, Tb = _hartley(xb)
    A = np.column_stack([
        nb[:, 0] * na[:, 0], nb[:, 0] * na[:, 1], nb[:, 0],
        nb[:, 1] * na[:, 0], nb[:, 1] * na[:, 1], nb[:, 1],
        na[:, 0], na[:, 1], np.ones(len(na)),
    ])
    _, _, Vt = np.linalg.svd(A)
    E = Vt[-1].reshape(3, 3)
    E = Tb.T @ E @ Ta
    U, _, Vt = np.linalg.svd(E)
    return U @ np.diag([1.0, 1.0, 0.0]) @ Vt


def sampson_distance(E, xa, xb) -> np.ndarray:
    ha = np.column_stack([xa, np.ones(len(xa))])
    hb = np.column_stack([xb, np.ones(len(xb))])
    Ea = ha @ E.T
    Etb = hb @ E
    num = np.sum(hb * Ea, axis=1)
    den = Ea[:, 0] ** 2 + Ea[:, 1] ** 2 + Etb[:, 0] ** 2 + Etb[:, 1] ** 2
    return np.abs(num) / np.sqrt(np.maximum(den, 1e-300))


def decompose_essential(E):
    """The four ``(R, t)`` candidates with ``xb = R xa + t``."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    t = U[:, 2]
    return [(U @ W @ Vt, t), (U @ W @ Vt, -t), (U @ W.T @ Vt, t), (U @ W.T @ Vt, -t)]


def relative_to_pose(R, t) -> Pose:
    """Second-camera pose (camera-to-world, first camera = world)."""
    return Pose(R.T, -R.T @ t)


def estimate_essential_ransac(ua, ub, camera: PinholeCamera, ransac: RansacConfig):
    xa = camera.normalize(ua)
    xb = camera.normalize(ub)
    n = len(xa)
    thresh = ransac.threshold / np.sqrt(camera.fx * camera.fy)
    rng = np.random.default_rng(ransac.seed)
    best_E, best_count = None, -1
    for _ in range(ransac.iterations):
        sample = rng.choice(n, 8, replace=False)
        E = eight_point(xa[sample], xb[sample])
        count = int(np.count_nonzero(sampson_distance(E, xa, xb) < thresh))
        if count > best_count:  # strict: lowest hypothesis index wins ties
            best_E, best_count = E, count
    inliers = sampson_distance(best_E, xa, xb) < thresh
    # refit on the consensus set, but never trade consensus for the refit:
    # the linear fit is biased on narrow fields of view
    for _ in range(3):
        if inliers.sum() < 8:
            break
        E = eight_point(xa[inliers], xb[inliers])
        new = sampson_distance(E, xa, xb) < thresh
        if new.sum() < inliers.sum():
            break
        best_E = E
        if np.array_equal(new, inliers):
            break
        inliers = new
    if inliers.sum() >= 8:
        E = refine_essential(best_E, xa[inliers], xb[inliers], thresh)
        new = sampson_distance(E, xa, xb) < thresh
        if new.sum() >= inliers.sum():
            best_E, inliers = E, new
    return best_E, inliers


def refine_essential(E, xa, xb, scale):
    """Robust Sampson-error minimization over the motion ``(R, t)`` encoded by ``E``.

    Linear fits trade a little rotation for translation when the field of
    view is narrow; the nonlinear cost separates the two.
    """
    R0, t0 = decompose_essential(E)[0]

    def essential(p):
        t = t0 + p[3:]
        return hat(t / np.linalg.norm(t)) @ R0 @ so3_exp(p[:3])

    def residuals(p):
        return sampson_distance(essential(p), xa, xb)

    sol = least_squares(residuals, np.zeros(6), loss="soft_l1", f_scale=scale, method="trf")
    return essential(sol.x)


def _rotation_only_residual(ua, ub, camera):
    """Median angle (deg) left after the best pure-rotation alignment of the rays."""
    ba = camera.bearings(ua)
    bb = camera.bearings(ub)
    U, _, Vt = np.linalg.svd(bb.T @ ba)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ D @ Vt
    cos = np.sum(bb * (ba @ R.T), axis=1)
    return float(np.median(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))))


def init_two_view(ua, ub, camera: PinholeCamera, ransac: RansacConfig = RansacConfig(), *,
                  min_parallax_deg: float = 1.0, min_inlier_ratio: float = 0.5,
                  first_landmark_id: int = 0, frame_ids=(0, 1)) -> TwoViewResult:
    """Recover the second view's pose (unit baseline) and triangulate inliers.

    ``ua``/``ub`` are undistorted pixels of the same points in the two views.
    Raises :class:`InitializationRetry` on too little parallax or too few
    inliers.
    """
    ua = np.asarray(ua, dtype=np.float64)
    ub = np.asarray(ub, dtype=np.float64)
    if len(ua) != len(ub):
        raise InvalidInputError("correspondence arrays differ in length")
    if len(ua) < 8:
        raise InitializationRetry(f"need 8 correspondences, got {len(ua)}")

    if _rotation_only_residual(ua, ub, camera) < 0.25 * min_parallax_deg:
        raise InitializationRetry("motion is explained by pure rotation")

    E, inliers = estimate_essential_ransac(ua, ub, camera, ransac)
    if inliers.mean() < min_inlier_ratio:
        raise InitializationRetry(f"only {inliers.mean():.0%} essential-matrix inliers")

    first = Pose()
    best = None
    for R, t in decompose_essential(E):
        pose = relative_to_pose(R, t / np.linalg.norm(t))
        pts, ok = triangulate_many(first, pose, ua[inliers], ub[inliers], camera, 0.0)
        count = int(ok.sum())
        if best is None or count > best[0]:
            best = (count, pose)
    count, pose = best
    if count < 0.5 * inliers.sum():
        raise InitializationRetry("no decomposition passes the cheirality test")

    pts, ok = triangulate_many(first, pose, ua, ub, camera, MIN_PARALLAX_DEG)
    ok_all = np.isfinite(pts).all(axis=1)
    angles = ray_angles(first, pose, np.where(ok_all[:, None], pts, 0.0)[inliers & ok_all])
    median_parallax = float(np.median(angles)) if len(angles) else 0.0
    if median_parallax < min_parallax_deg:
        raise InitializationRetry(f"median parallax {median_parallax:.2f} deg below {min_parallax_deg}")

    # keep points that reproject within the RANSAC threshold in both views
    good = inliers & ok
    if good.any():
        from .camera import project_points
        pa, _ = project_points(camera, first, pts)
        pb, _ = project_points(camera, pose, pts)
        err = np.maximum(np.linalg.norm(pa - ua, axis=1), np.linalg.norm(pb - ub, axis=1))
        good &= err < 2.0 * ransac.threshold

    points = np.where(good[:, None], pts, np.nan)
    landmarks = [
        Landmark(first_landmark_id + k, points[i].copy(), set(frame_ids))
        for k, i in enumerate(np.nonzero(good)[0])
    ]
    return TwoViewResult(pose, points, good, landmarks, median_parallax)
