"""Block-structured Gauss-Newton normal equations and their Schur-complement solve."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from ..errors import RankDeficiencyError
from .problem import BAProblem, Linearization, linearize


@dataclass
class HessianBlocks:
    """``H dx = -g`` split into camera (6) and point (3) blocks.

    ``Hcp`` holds one 6x3 block per (camera, point) pair that shares an
    observation, addressed by ``pair_cam``/``pair_pt`` (indices into the
    free cameras/points). ``Hcc_off`` only appears after marginalization:
    ``{(i, l): block}`` with ``i < l`` standing for ``H[c_i, c_l]``.
    """

    Hcc: np.ndarray  # (M, 6, 6)
    Hpp: np.ndarray  # (N, 3, 3)
    Hcp: np.ndarray  # (P, 6, 3)
    pair_cam: np.ndarray  # (P,)
    pair_pt: np.ndarray  # (P,)
    gc: np.ndarray  # (M, 6)
    gp: np.ndarray  # (N, 3)
    Hcc_off: dict = field(default_factory=dict)
    camera_ids: list = field(default_factory=list)  # frame ids of the free cameras
    point_ids: list = field(default_factory=list)
    damping: float = 0.0

    @property
    def n_cameras(self) -> int:
        return len(self.Hcc)

    @property
    def n_points(self) -> int:
        return len(self.Hpp)

    def damped(self, mu: float) -> "HessianBlocks":
        """Copy with ``mu`` added to every diagonal block (on top of any existing damping)."""
        if mu == 0:
            return self
        return replace(
            self,
            Hcc=self.Hcc + mu * np.eye(6),
            Hpp=self.Hpp + mu * np.eye(3),
            damping=self.damping + mu,
        )


def assemble_normal_equations(problem: BAProblem, mu: float = 0.0,
                              lin: Linearization | None = None) -> HessianBlocks:
    """Accumulate ``J^T W J`` and ``J^T W r`` per block.

    ``g`` is the gradient of the weighted half sum of squares, so the step is
    ``dx = -H^-1 g``. Fixed variables contribute residuals but no blocks.
    """
    if lin is None:
        lin = linearize(problem)
    m, n = len(problem.poses), len(problem.points)
    free_c = problem.free_cameras()
    free_p = problem.free_points()
    cmap = np.full(m, -1)
    cmap[free_c] = np.arange(len(free_c))
    pmap = np.full(n, -1)
    pmap[free_p] = np.arange(len(free_p))
    ci = cmap[problem.obs_cam]
    pi = pmap[problem.obs_pt]

    w = lin.weight
    # the residual is u - phi, so d(0.5 |r|^2)/dx = J^T r with J = dr/dx
    wJc = w[:, None, None] * lin.Jc
    wJp = w[:, None, None] * lin.Jp

    M, N = len(free_c), len(free_p)
    Hcc = np.zeros((M, 6, 6))
    Hpp = np.zeros((N, 3, 3))
    gc = np.zeros((M, 6))
    gp = np.zeros((N, 3))

    oc = ci >= 0
    op = pi >= 0
    np.add.at(Hcc, ci[oc], np.einsum("kai,kaj->kij", wJc[oc], lin.Jc[oc]))
    np.add.at(gc, ci[oc], np.einsum("kai,ka->ki", wJc[oc], lin.r[oc]))
    np.add.at(Hpp, pi[op], np.einsum("kai,kaj->kij", wJp[op], lin.Jp[op]))
    np.add.at(gp, pi[op], np.einsum("kai,ka->ki", wJp[op], lin.r[op]))

    both = oc & op
    keys = ci[both] * max(N, 1) + pi[both]
    uniq, inv = np.unique(keys, return_inverse=True)
    Hcp = np.zeros((len(uniq), 6, 3))
    np.add.at(Hcp, inv, np.einsum("kai,kaj->kij", wJc[both], lin.Jp[both]))
    pair_cam = uniq // max(N, 1)
    pair_pt = uniq % max(N, 1)

    blocks = HessianBlocks(
        Hcc=Hcc, Hpp=Hpp, Hcp=Hcp, pair_cam=pair_cam.astype(np.int64), pair_pt=pair_pt.astype(np.int64),
        gc=gc, gp=gp,
        camera_ids=[problem.frame_ids[i] for i in free_c],
        point_ids=[problem.landmark_ids[j] for j in free_p],
    )
    return blocks.damped(mu)


def to_dense(blocks: HessianBlocks):
    """Full ``(6M + 3N)`` Hessian and gradient, cameras first."""
    M, N = blocks.n_cameras, blocks.n_points
    size = 6 * M + 3 * N
    H = np.zeros((size, size))
    for i in range(M):
        H[6 * i:6 * i + 6, 6 * i:6 * i + 6] = blocks.Hcc[i]
    for (i, l), B in blocks.Hcc_off.items():
        H[6 * i:6 * i + 6, 6 * l:6 * l + 6] = B
        H[6 * l:6 * l + 6, 6 * i:6 * i + 6] = B.T
    o = 6 * M
    for j in range(N):
        H[o + 3 * j:o + 3 * j + 3, o + 3 * j:o + 3 * j + 3] = blocks.Hpp[j]
    for B, i, j in zip(blocks.Hcp, blocks.pair_cam, blocks.pair_pt):
        H[6 * i:6 * i + 6, o + 3 * j:o + 3 * j + 3] = B
        H[o + 3 * j:o + 3 * j + 3, 6 * i:6 * i + 6] = B.T
    g = np.concatenate([blocks.gc.ravel(), blocks.gp.ravel()])
    return H, g


def dense_cameras(blocks: HessianBlocks) -> np.ndarray:
    """The ``6M x 6M`` camera block including any fill-in."""
    M = blocks.n_cameras
    H = np.zeros((6 * M, 6 * M))
    for i in range(M):
        H[6 * i:6 * i + 6, 6 * i:6 * i + 6] = blocks.Hcc[i]
    for (i, l), B in blocks.Hcc_off.items():
        H[6 * i:6 * i + 6, 6 * l:6 * l + 6] = B
        H[6 * l:6 * l + 6, 6 * i:6 * i + 6] = B.T
    return H


def _dense_hcp(blocks: HessianBlocks) -> np.ndarray:
    M, N = blocks.n_cameras, blocks.n_points
    D = np.zeros((M, 6, N, 3))
    D[blocks.pair_cam, :, blocks.pair_pt, :] = blocks.Hcp
    return D.reshape(6 * M, 3 * N)


def _invert_point_blocks(Hpp: np.ndarray):
    """Batched 3x3 inverses; returns ``(inv, ok)`` with singular blocks zeroed."""
    det = np.linalg.det(Hpp) if len(Hpp) else np.zeros(0)
    scale = np.einsum("nii->n", Hpp) ** 3 if len(Hpp) else np.zeros(0)
    ok = np.abs(det) > 1e-12 * np.maximum(np.abs(scale), 1e-300)
    inv = np.zeros_like(Hpp)
    if ok.any():
        inv[ok] = np.linalg.inv(Hpp[ok])
    return inv, ok


def _inv3(A):
    """3x3 inverse by cofactors; works in any float precision numpy supports."""
    C = np.array([[A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1], A[0, 2] * A[2, 1] - A[0, 1] * A[2, 2],
                   A[0, 1] * A[1, 2] - A[0, 2] * A[1, 1]],
                  [A[1, 2] * A[2, 0] - A[1, 0] * A[2, 2], A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0],
                   A[0, 2] * A[1, 0] - A[0, 0] * A[1, 2]],
                  [A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0], A[0, 1] * A[2, 0] - A[0, 0] * A[2, 1],
                   A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]]], dtype=A.dtype)
    return C / (A[0] @ C[:, 0])


def reduced_camera_system(blocks: HessianBlocks):
    """``S = Hcc - Hcp Hpp^-1 Hcp^T`` and ``b = -gc + Hcp Hpp^-1 gp``."""
    Hpp_inv, ok = _invert_point_blocks(blocks.Hpp)
    if not ok.all():
        raise RankDeficiencyError(f"{int((~ok).sum())} singular point blocks")
    Hcc = dense_cameras(blocks)
    if blocks.n_points == 0:
        return Hcc, -blocks.gc.ravel(), Hpp_inv
    Hcp = _dense_hcp(blocks)
    N = blocks.n_points
    W = np.einsum("anj,njk->ank", Hcp.reshape(-1, N, 3), Hpp_inv).reshape(Hcp.shape[0], 3 * N)
    S = Hcc - W @ Hcp.T
    b = -blocks.gc.ravel() + W @ blocks.gp.ravel()
    return 0.5 * (S + S.T), b, Hpp_inv


def back_substitute(blocks: HessianBlocks, dxc: np.ndarray, Hpp_inv: np.ndarray, gp=None) -> np.ndarray:
    """``dxp_j = Hpp_j^-1 (-gp_j - sum_i Hcp_ij^T dxc_i)``; ``gp`` defaults to the blocks' gradient."""
    rhs = -(blocks.gp if gp is None else gp).copy()
    if len(blocks.Hcp):
        np.add.at(rhs, blocks.pair_pt, -np.einsum("kij,ki->kj", blocks.Hcp, dxc[blocks.pair_cam]))
    return np.einsum("nij,nj->ni", Hpp_inv, rhs)


def full_matvec(blocks: HessianBlocks, xc: np.ndarray, xp: np.ndarray):
    """Apply the full block system ``H`` to ``(xc, xp)`` without densifying it."""
    yc = np.einsum("mij,mj->mi", blocks.Hcc, xc)
    for (i, l), B in blocks.Hcc_off.items():
        yc[i] += B @ xc[l]
        yc[l] += B.T @ xc[i]
    yp = np.einsum("nij,nj->ni", blocks.Hpp, xp)
    if len(blocks.Hcp):
        np.add.at(yc, blocks.pair_cam, np.einsum("kij,kj->ki", blocks.Hcp, xp[blocks.pair_pt]))
        np.add.at(yp, blocks.pair_pt, np.einsum("kij,ki->kj", blocks.Hcp, xc[blocks.pair_cam]))
    return yc, yp


def solve_schur(blocks: HessianBlocks, refinement_steps: int = 2):
    """Eliminate the points, Cholesky-solve the reduced camera system, back-substitute.

    Forming the Schur complement cancels digits when the camera system is
    poorly conditioned, so the result is polished by a few rounds of
    iterative refinement against the full block system, reusing the same
    factorization. Returns ``(dxc, dxp)`` with shapes ``(M, 6)`` and ``(N, 3)``.
    """
    S, _, Hpp_inv = reduced_camera_system(blocks)
    M = blocks.n_cameras
    factor = None
    if M:
        try:
            factor = linalg.cho_factor(S, check_finite=True)
        except linalg.LinAlgError as exc:
            raise RankDeficiencyError("reduced camera system is not positive definite") from exc

    def solve(rc, rp):
        # solve H x = (rc, rp) by elimination
        pinv_rp = np.einsum("nij,nj->ni", Hpp_inv, rp)
        b = rc.copy()
        if len(blocks.Hcp):
            np.add.at(b, blocks.pair_cam, -np.einsum("kij,kj->ki", blocks.Hcp, pinv_rp[blocks.pair_pt]))
        xc = linalg.cho_solve(factor, b.ravel()).reshape(M, 6) if M else np.zeros((0, 6))
        return xc, back_substitute(blocks, xc, Hpp_inv, -rp)

    rc, rp = -blocks.gc, -blocks.gp
    dxc, dxp = solve(rc, rp)
    for _ in range(refinement_steps):
        yc, yp = full_matvec(blocks, dxc, dxp)
        ec, ep = solve(rc - yc, rp - yp)
        dxc, dxp = dxc + ec, dxp + ep
    return dxc, dxp


def marginalize_points(blocks: HessianBlocks, point_subset):
    """Fold the selected points into the camera system.

    Returns ``(reduced, skipped)``: the new blocks without those points
    (camera blocks carry the Schur correction, including camera-camera
    fill-in) and the indices of points whose block was singular and so were
    left in place.
    """
    subset = np.unique(np.asarray(point_subset, dtype=np.int64))
    Hpp_inv, ok = _invert_point_blocks(blocks.Hpp[subset])
    skipped = subset[~ok]
    elim = subset[ok]

    # the correction nearly cancels the camera blocks along weakly constrained
    # directions, so accumulate it in extended precision before rounding
    ext = np.longdouble
    Hcc = blocks.Hcc.astype(ext)
    gc = blocks.gc.astype(ext)
    off = {k: v.astype(ext) for k, v in blocks.Hcc_off.items()}
    elim_set = set(elim.tolist())
    by_point: dict = {}
    for k, j in enumerate(blocks.pair_pt.tolist()):
        if j in elim_set:
            by_point.setdefault(j, []).append(k)
    for j, ks in by_point.items():
        Pinv = _inv3(blocks.Hpp[j].astype(ext))
        gpj = blocks.gp[j].astype(ext)
        for a in ks:
            ia = blocks.pair_cam[a]
            Wa = blocks.Hcp[a].astype(ext) @ Pinv
            gc[ia] -= Wa @ gpj
            for b in ks:
                ib = blocks.pair_cam[b]
                if ia > ib:
                    continue
                corr = Wa @ blocks.Hcp[b].astype(ext).T
                if ia == ib:
                    Hcc[ia] -= corr
                else:
                    off[(ia, ib)] = off.get((ia, ib), np.zeros((6, 6), dtype=ext)) - corr
    Hcc = Hcc.astype(np.float64)
    gc = gc.astype(np.float64)
    off = {k: v.astype(np.float64) for k, v in off.items()}

    keep = np.setdiff1d(np.arange(blocks.n_points), elim)
    remap = np.full(blocks.n_points, -1)
    remap[keep] = np.arange(len(keep))
    pair_keep = remap[blocks.pair_pt] >= 0
    reduced = HessianBlocks(
        Hcc=Hcc,
        Hpp=blocks.Hpp[keep],
        Hcp=blocks.Hcp[pair_keep],
        pair_cam=blocks.pair_cam[pair_keep],
        pair_pt=remap[blocks.pair_pt[pair_keep]],
        gc=gc,
        gp=blocks.gp[keep],
        Hcc_off=off,
        camera_ids=list(blocks.camera_ids),
        point_ids=[blocks.point_ids[j] for j in keep] if blocks.point_ids else [],
        damping=blocks.damping,
    )
    return reduced, skipped
