"""P3P minimal solver, RANSAC wrapper and Gauss-Newton pose refinement."""

from __future__ import annotations

import numpy as np
from numpy.polynomial import polynomial as P

from ..errors import InvalidInputError, PoseFailure
from .camera import PinholeCamera, Pose, hat_batch, project_points
from .twoview import RansacConfig


def absolute_orientation(world, cam):
    """Rigid ``(Rc, tc)`` with ``cam ~= Rc @ world + tc`` (Kabsch)."""
    mw = world.mean(axis=0)
    mc = cam.mean(axis=0)
    H = (world - mw).T @ (cam - mc)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    Rc = Vt.T @ D @ U.T
    return Rc, mc - Rc @ mw


def p3p(world, bearings) -> list[Pose]:
    """Grunert's P3P: up to four poses from three world points and unit rays.

    Depths ``s2 = u s1`` and ``s3 = v s1``; the two law-of-cosines
    equations in ``u`` are eliminated by their resultant, a quartic in ``v``.
    """
    world = np.asarray(world, dtype=np.float64)
    f = np.asarray(bearings, dtype=np.float64)
    f = f / np.linalg.norm(f, axis=1, keepdims=True)
    a2 = np.sum((world[1] - world[2]) ** 2)
    b2 = np.sum((world[0] - world[2]) ** 2)
    c2 = np.sum((world[0] - world[1]) ** 2)
    if min(a2, b2, c2) < 1e-18:
        return []
    ca = f[1] @ f[2]
    cb = f[0] @ f[2]
    cg = f[0] @ f[1]

    # polynomials in v, lowest degree first
    q = np.array([1.0, -2.0 * cb, 1.0])  # 1 + v^2 - 2 v cb
    p2 = np.array([b2])
    p1 = np.array([-2.0 * b2 * cg])
    p0 = P.polysub([b2], c2 * q)
    q2 = np.array([b2])
    q1 = np.array([0.0, -2.0 * b2 * ca])
    q0 = P.polysub([0.0, 0.0, b2], a2 * q)

    t1 = P.polysub(P.polymul(p2, q0), P.polymul(q2, p0))
    t2 = P.polysub(P.polymul(p2, q1), P.polymul(q2, p1))
    t3 = P.polysub(P.polymul(p1, q0), P.polymul(q1, p0))
    res = P.polysub(P.polymul(t1, t1), P.polymul(t2, t3))
    res = np.trim_zeros(res, "b")
    if len(res) < 2:
        return []
    roots = P.polyroots(res)
    poses = []
    for v in roots:
        if abs(v.imag) > 1e-6 * max(1.0, abs(v.real)):
            continue
        v = v.real
        if v <= 0:
            continue
        den = P.polyval(v, q1) - P.polyval(v, p1)
        if abs(den) < 1e-15:
            continue
        u = (P.polyval(v, p0) - P.polyval(v, q0)) / den
        if u <= 0:
            continue
        qv = P.polyval(v, q)
        if qv <= 0:
            continue
        s1 = np.sqrt(b2 / qv)
        cam = np.array([s1, u * s1, v * s1])[:, None] * f
        Rc, tc = absolute_orientation(world, cam)
        poses.append(Pose(Rc.T, -Rc.T @ tc))
    return poses


def reprojection_errors(camera: PinholeCamera, pose: Pose, points, pixels) -> np.ndarray:
    u, z = project_points(camera, pose, points)
    err = np.linalg.norm(u - pixels, axis=1)
    return np.where(z > 1e-6, err, np.inf)


def refine_pose(camera: PinholeCamera, pose: Pose, points, pixels, iters: int = 10) -> Pose:
    """Gauss-Newton on the camera's 6-DoF local increment (points held fixed)."""
    points = np.asarray(points, dtype=np.float64)
    pixels = np.asarray(pixels, dtype=np.float64)
    cost = np.sum(reprojection_errors(camera, pose, points, pixels) ** 2)
    for _ in range(iters):
        xc = pose.to_camera(points)
        z = xc[:, 2]
        if np.any(z <= 1e-6):
            break
        u = np.stack([camera.fx * xc[:, 0] / z + camera.cx, camera.fy * xc[:, 1] / z + camera.cy], axis=1)
        r = pixels - u
        Jproj = np.zeros((len(z), 2, 3))
        Jproj[:, 0, 0] = camera.fx / z
        Jproj[:, 0, 2] = -camera.fx * xc[:, 0] / z ** 2
        Jproj[:, 1, 1] = camera.fy / z
        Jproj[:, 1, 2] = -camera.fy * xc[:, 1] / z ** 2
        dx = np.concatenate([hat_batch(xc), np.broadcast_to(-pose.R.T, (len(z), 3, 3))], axis=2)
        J = -Jproj @ dx  # d r / d delta
        H = np.einsum("nki,nkj->ij", J, J)
        g = np.einsum("nki,nk->i", J, r)
        try:
            delta = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        cand = pose.perturbed(delta)
        new_cost = np.sum(reprojection_errors(camera, cand, points, pixels) ** 2)
        if not new_cost <= cost:
            break
        pose, cost = cand, new_cost
        if np.linalg.norm(delta) < 1e-12:
            break
    return pose.orthonormalized()


def pnp_ransac(points, pixels, camera: PinholeCamera, ransac: RansacConfig = RansacConfig(), *,
               min_inlier_ratio: float = 0.3, return_inliers: bool = False):
    """Camera pose from 3D-2D correspondences (undistorted pixels).

    Each hypothesis solves P3P on three sampled points and picks among the
    roots with a fourth. The winner is refined on its inliers.
    Raises :class:`PoseFailure` when the inlier ratio is below ``min_inlier_ratio``.
    """
    points = np.asarray(points, dtype=np.float64)
    pixels = np.asarray(pixels, dtype=np.float64)
    n = len(points)
    if n != len(pixels):
        raise InvalidInputError("points and pixels differ in length")
    if n < 4:
        raise PoseFailure(f"need 4 correspondences, got {n}")
    bearings = camera.bearings(pixels)
    rng = np.random.default_rng(ransac.seed)
    best_pose, best_count = None, -1
    for _ in range(ransac.iterations):
        s = rng.choice(n, 4, replace=False)
        cands = p3p(points[s[:3]], bearings[s[:3]])
        if not cands:
            continue
        fourth = [reprojection_errors(camera, c, points[s[3:4]], pixels[s[3:4]])[0] for c in cands]
        pose = cands[int(np.argmin(fourth))]
        count = int(np.count_nonzero(reprojection_errors(camera, pose, points, pixels) < ransac.threshold))
        if count > best_count:
            best_pose, best_count = pose, count
    if best_pose is None or best_count < min_inlier_ratio * n or best_count < 4:
        raise PoseFailure(f"PnP inlier ratio {max(best_count, 0) / n:.0%} below {min_inlier_ratio:.0%}")

    pose = best_pose
    inliers = reprojection_errors(camera, pose, points, pixels) < ransac.threshold
    for _ in range(3):
        pose = refine_pose(camera, pose, points[inliers], pixels[inliers])
        new = reprojection_errors(camera, pose, points, pixels) < ransac.threshold
        if np.array_equal(new, inliers) or new.sum() < 4:
            break
        inliers = new
    if inliers.sum() < min_inlier_ratio * n:
        raise PoseFailure(f"PnP inlier ratio {inliers.mean():.0%} below {min_inlier_ratio:.0%}")
    return (pose, inliers) if return_inliers else pose
