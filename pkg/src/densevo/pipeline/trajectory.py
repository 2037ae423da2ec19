"""Timestamped pose sequences: text I/O and absolute trajectory error."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from ..errors import EvaluationError, FormatError, InvalidInputError, LoadError
from ..geometry.camera import Pose


@dataclass
class Trajectory:
    timestamps: np.ndarray  # int64 nanoseconds, strictly increasing
    poses: list

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        self.poses = list(self.poses)
        if len(self.timestamps) != len(self.poses):
            raise InvalidInputError("one timestamp per pose expected")
        if np.any(np.diff(self.timestamps) <= 0):
            raise InvalidInputError("trajectory timestamps must strictly increase")

    def __len__(self):
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.t for p in self.poses]).reshape(-1, 3)

    def validate(self) -> "Trajectory":
        for ts, p in zip(self.timestamps, self.poses):
            if not p.is_valid():
                raise InvalidInputError(f"pose at {ts} is not a valid rigid transform")
        return self

    def path_length(self) -> float:
        return float(np.linalg.norm(np.diff(self.positions, axis=0), axis=1).sum())


def quaternion_xyzw(R) -> np.ndarray:
    """Unit quaternion ``(x, y, z, w)`` with a canonical sign (``w >= 0``)."""
    q = Rotation.from_matrix(R).as_quat()
    if q[3] < 0 or (q[3] == 0 and q[np.flatnonzero(q)[0]] < 0):
        q = -q
    return q + 0.0  # folds -0.0


def _fmt(v: float) -> str:
    s = f"{v:.9g}"
    return "0" if s in ("-0", "0") else s


def _fmt_time(ns: int) -> str:
    sign = "-" if ns < 0 else ""
    ns = abs(int(ns))
    return f"{sign}{ns // 1_000_000_000}.{ns % 1_000_000_000:09d}"


def format_pose_line(timestamp_ns: int, pose: Pose) -> str:
    q = quaternion_xyzw(pose.R)
    vals = [*pose.t, *q]
    return " ".join([_fmt_time(timestamp_ns)] + [_fmt(float(v)) for v in vals])


def export_trajectory(traj: Trajectory, path) -> None:
    """Write ``timestamp_seconds tx ty tz qx qy qz qw`` lines (9 significant digits)."""
    traj.validate()
    path = Path(path)
    try:
        with open(path, "w") as fh:
            for ts, p in zip(traj.timestamps, traj.poses):
                fh.write(format_pose_line(int(ts), p) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write trajectory {path}: {exc}") from exc


def _parse_time(tok: str) -> int:
    neg = tok.startswith("-")
    tok = tok.lstrip("+-")
    if "e" in tok.lower():
        value = round(float(tok) * 1e9)
    else:
        whole, _, frac = tok.partition(".")
        value = int(whole or 0) * 1_000_000_000 + int((frac + "0" * 9)[:9])
    return -value if neg else value


def load_trajectory(path) -> Trajectory:
    """Parse a file written by :func:`export_trajectory` (``#`` comments allowed)."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise LoadError(f"cannot read trajectory {path}: {exc}") from exc
    ts, poses = [], []
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.replace(",", " ").split()
        if len(tok) != 8:
            raise FormatError(f"{path}:{n}: expected 8 values, got {len(tok)}")
        try:
            t = _parse_time(tok[0])
            vals = np.array([float(v) for v in tok[1:]])
        except ValueError as exc:
            raise FormatError(f"{path}:{n}: {exc}") from exc
        q = vals[3:]
        if not np.isfinite(vals).all() or np.linalg.norm(q) < 1e-9:
            raise FormatError(f"{path}:{n}: invalid pose values")
        ts.append(t)
        poses.append(Pose(Rotation.from_quat(q / np.linalg.norm(q)).as_matrix(), vals[:3]))
    try:
        return Trajectory(np.array(ts, dtype=np.int64), poses)
    except InvalidInputError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def associate(est: Trajectory, gt: Trajectory, max_dt_ns: int = 10_000_000):
    """Index pairs ``(i_est, i_gt)`` matching each estimate to the nearest ground-truth time.

    Estimates with no ground truth within ``max_dt_ns`` are dropped.
    """
    if len(gt) == 0 or len(est) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    g = gt.timestamps
    pos = np.searchsorted(g, est.timestamps)
    lo = np.clip(pos - 1, 0, len(g) - 1)
    hi = np.clip(pos, 0, len(g) - 1)
    pick = np.where(np.abs(g[hi] - est.timestamps) < np.abs(g[lo] - est.timestamps), hi, lo)
    ok = np.abs(g[pick] - est.timestamps) <= max_dt_ns
    return np.nonzero(ok)[0], pick[ok]


@dataclass
class Alignment:
    scale: float
    R: np.ndarray
    t: np.ndarray
    rmse: float
    n_pairs: int

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points) @ self.R.T + self.t


def align_similarity(src, dst) -> Alignment:
    """Closed-form ``s, R, t`` minimizing ``sum |s R src + t - dst|^2`` (Umeyama)."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - ms, dst - md
    var = np.mean(np.sum(xs ** 2, axis=1))
    C = xd.T @ xs / len(src)
    U, S, Vt = np.linalg.svd(C)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    s = float(np.trace(np.diag(S) @ D) / var) if var > 0 else 0.0
    t = md - s * R @ ms
    res = s * src @ R.T + t - dst
    rmse = float(np.sqrt(np.mean(np.sum(res ** 2, axis=1))))
    return Alignment(s, R, t, rmse, len(src))


def evaluate_ate(estimated: Trajectory, ground_truth: Trajectory, *, max_dt_ns: int = 10_000_000,
                 return_alignment: bool = False):
    """Position RMSE after the best similarity alignment of ``estimated`` onto ``ground_truth``."""
    ie, ig = associate(estimated, ground_truth, max_dt_ns)
    if len(ie) < 3:
        raise EvaluationError(f"only {len(ie)} associated poses; at least 3 are needed")
    al = align_similarity(estimated.positions[ie], ground_truth.positions[ig])
    return (al.rmse, al) if return_alignment else al.rmse
