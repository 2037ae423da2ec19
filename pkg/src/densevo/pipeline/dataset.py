"""Image sequences on disk: EuRoC camera folders and plain timestamp-named directories."""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.spatial.transform import Rotation

from ..errors import FormatError, LoadError
from ..geometry.camera import PinholeCamera, Pose
from ..imaging import GrayImage, load_image
from .trajectory import Trajectory, load_trajectory

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".pgm", ".ppm", ".bmp", ".tif", ".tiff"}


@dataclass
class FrameRecord:
    """One frame; the image is decoded on first access."""

    frame_id: int
    timestamp: int  # nanoseconds
    path: Path | None = None
    _image: GrayImage | None = field(default=None, repr=False)

    @property
    def image(self) -> GrayImage:
        if self._image is None:
            if self.path is None:
                raise LoadError(f"frame {self.frame_id} has neither an image nor a path")
            self._image = load_image(self.path)
        return self._image

    def release(self) -> None:
        """Drop the decoded image (it is re-read on the next access)."""
        if self.path is not None:
            self._image = None


def find_camera_folder(root) -> Path | None:
    """The EuRoC ``cam0`` folder under ``root``, if there is one."""
    root = Path(root)
    for cand in (root / "mav0" / "cam0", root / "cam0", root):
        if (cand / "data.csv").is_file():
            return cand
    return None


def _euroc_rows(cam: Path):
    csv_path = cam / "data.csv"
    try:
        with open(csv_path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise LoadError(f"cannot read {csv_path}: {exc}") from exc
    out = []
    for r in rows:
        if len(r) < 2:
            raise FormatError(f"{csv_path}: malformed row {r}")
        try:
            ts = int(r[0].strip())
        except ValueError as exc:
            raise FormatError(f"{csv_path}: bad timestamp {r[0]!r}") from exc
        out.append((ts, cam / "data" / r[1].strip()))
    return out


def _parse_stem(stem: str) -> int:
    if re.fullmatch(r"\d+", stem):
        return int(stem)
    if re.fullmatch(r"\d+\.\d+", stem):
        whole, frac = stem.split(".")
        return int(whole) * 1_000_000_000 + int((frac + "0" * 9)[:9])
    raise FormatError(f"image name {stem!r} is not a timestamp")


def _plain_rows(root: Path):
    files = sorted(p for p in root.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    rows = sorted((_parse_stem(p.stem), p) for p in files)
    return rows


def load_sequence(dataset_root) -> Iterator[FrameRecord]:
    """Yield the sequence's frames in timestamp order.

    Raises :class:`LoadError` for a missing root or a listed image that does
    not exist, and :class:`FormatError` for timestamps that do not strictly
    increase.
    """
    root = Path(dataset_root)
    if not root.is_dir():
        raise LoadError(f"dataset root {root} is not a directory")
    cam = find_camera_folder(root)
    rows = _euroc_rows(cam) if cam is not None else _plain_rows(root)
    prev = None
    for i, (ts, path) in enumerate(rows):
        if prev is not None and ts <= prev:
            raise FormatError(f"timestamps not strictly increasing at {path} ({ts} after {prev})")
        if not path.is_file():
            raise LoadError(f"missing image file {path}")
        prev = ts
        yield FrameRecord(i, ts, path)


def read_camera_yaml(dataset_root) -> PinholeCamera | None:
    """Intrinsics and radial-tangential distortion from EuRoC's ``sensor.yaml``."""
    cam = find_camera_folder(dataset_root)
    if cam is None or not (cam / "sensor.yaml").is_file():
        return None
    text = (cam / "sensor.yaml").read_text()

    def vector(key):
        m = re.search(rf"^{key}\s*:\s*\[([^\]]*)\]", text, re.MULTILINE)
        if not m:
            raise FormatError(f"{cam / 'sensor.yaml'}: no '{key}' entry")
        return [float(v) for v in m.group(1).split(",") if v.strip()]

    fx, fy, cx, cy = vector("intrinsics")
    dist = tuple(vector("distortion_coefficients")[:4])
    w, h = (int(v) for v in vector("resolution"))
    return PinholeCamera(fx, fy, cx, cy, dist, w, h)


def load_ground_truth(path):
    """Trajectory from an EuRoC ground-truth CSV or a trajectory text file.

    ``path`` may be a dataset root, in which case the standard EuRoC
    ground-truth location is used.
    """
    p = Path(path)
    if p.is_dir():
        for cand in (p / "mav0" / "state_groundtruth_estimate0" / "data.csv",
                     p / "state_groundtruth_estimate0" / "data.csv"):
            if cand.is_file():
                p = cand
                break
        else:
            raise LoadError(f"no ground truth found under {path}")
    if not p.is_file():
        raise LoadError(f"ground truth file {p} does not exist")
    if p.suffix.lower() != ".csv":
        return load_trajectory(p)
    try:
        with open(p, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    except OSError as exc:
        raise LoadError(f"cannot read {p}: {exc}") from exc
    if any(len(r) < 8 for r in rows):
        raise FormatError(f"{p}: expected timestamp, position and quaternion columns")
    try:
        ts = np.array([int(r[0].strip()) for r in rows], dtype=np.int64)
        vals = np.array([[float(v) for v in r[1:8]] for r in rows]).reshape(-1, 7)
    except ValueError as exc:
        raise FormatError(f"{p}: {exc}") from exc
    # EuRoC stores the quaternion w-first
    rot = Rotation.from_quat(vals[:, [4, 5, 6, 3]]).as_matrix()
    return Trajectory(ts, [Pose(R, t) for R, t in zip(rot, vals[:, :3])])
