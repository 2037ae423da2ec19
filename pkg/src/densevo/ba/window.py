"""Sliding-window bundle adjustment over the live map."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError
from ..geometry.camera import PinholeCamera, Pose
from ..tracking.robust import RobustKernel
from .problem import BAProblem, linearize
from .subspace import SolverReport, SweepSchedule, solve_subspace_gn


@dataclass
class MapState:
    """Keyed poses, landmarks and their undistorted observations.

    ``observations[landmark_id][frame_id]`` is the pixel where the landmark
    was seen. Only :func:`run_windowed_ba` and the pipeline front-end write
    to it; readers should take a :meth:`snapshot`.
    """

    poses: dict = field(default_factory=dict)
    landmarks: dict = field(default_factory=dict)
    observations: dict = field(default_factory=dict)
    flagged_frames: set = field(default_factory=set)

    def add_observation(self, landmark_id: int, frame_id: int, pixel) -> None:
        self.observations.setdefault(landmark_id, {})[frame_id] = np.asarray(pixel, dtype=np.float64)

    def remove_landmark(self, landmark_id: int) -> None:
        self.landmarks.pop(landmark_id, None)
        self.observations.pop(landmark_id, None)

    def frame_landmarks(self, frame_id: int) -> list:
        return [lid for lid, obs in self.observations.items() if frame_id in obs and lid in self.landmarks]

    def snapshot(self) -> "MapState":
        return MapState(
            dict(self.poses),
            {k: v.copy() for k, v in self.landmarks.items()},
            {k: dict(v) for k, v in self.observations.items()},
            set(self.flagged_frames),
        )


@dataclass
class WindowConfig:
    window_size: int = 10
    kernel_sigma: float = 2.0  # pixels
    anchor_frames: int = 10  # older frames kept fixed to pin the window's scale
    cull_threshold: float = 6.0  # pixels; larger residuals are dropped after BA
    schedule: SweepSchedule = field(default_factory=SweepSchedule)

    def __post_init__(self):
        if self.window_size < 2:
            raise InvalidInputError("window_size must be at least 2")
        if self.kernel_sigma <= 0 or self.cull_threshold <= 0:
            raise InvalidInputError("kernel_sigma and cull_threshold must be positive")
        if self.anchor_frames < 0:
            raise InvalidInputError("anchor_frames must be non-negative")


@dataclass
class WindowResult:
    report: SolverReport
    window: list
    n_points: int
    n_observations: int
    culled: int = 0
    written: bool = True


def build_window_problem(state: MapState, window, camera: PinholeCamera, config: WindowConfig):
    """BA problem over ``window`` frames, with the oldest one and older anchors fixed.

    Returns ``None`` when the window holds no adjustable point.
    """
    window = sorted(f for f in window if f in state.poses)
    if len(window) < 2:
        raise InvalidInputError("window needs at least two posed frames")
    in_window = set(window)
    older = sorted(f for f in state.poses if f < window[0])
    anchors = set(older[len(older) - config.anchor_frames:]) if config.anchor_frames else set()
    allowed = in_window | anchors

    frames: list = []
    fidx: dict = {}
    lids, cams, pts, pixels = [], [], [], []
    for lid, obs in state.observations.items():
        if lid not in state.landmarks or not in_window.intersection(obs):
            continue
        seen = [f for f in obs if f in allowed]
        if len(seen) < 2:
            continue
        j = len(lids)
        lids.append(lid)
        for f in seen:
            if f not in fidx:
                fidx[f] = len(frames)
                frames.append(f)
            cams.append(fidx[f])
            pts.append(j)
            pixels.append(obs[f])
    if not lids:
        return None
    # cameras in frame order makes the layout independent of dict iteration history
    order = sorted(range(len(frames)), key=lambda k: frames[k])
    remap = np.empty(len(frames), dtype=np.int64)
    remap[order] = np.arange(len(frames))
    frames = [frames[k] for k in order]
    fixed = np.array([f not in in_window or f == window[0] for f in frames])
    return BAProblem(
        camera=camera,
        kernel=RobustKernel(config.kernel_sigma),
        poses=[state.poses[f] for f in frames],
        points=np.array([state.landmarks[lid] for lid in lids]),
        obs_cam=remap[np.asarray(cams)],
        obs_pt=np.asarray(pts),
        obs_px=np.array(pixels),
        pose_fixed=fixed,
        frame_ids=frames,
        landmark_ids=lids,
    )


def run_windowed_ba(state: MapState, window, camera: PinholeCamera,
                    config: WindowConfig | None = None) -> WindowResult:
    """Adjust the window's poses and points in place.

    The oldest window frame and up to ``anchor_frames`` older frames are held
    fixed. Because older frames stay in the problem as fixed anchors, points
    that leave the window need no separate elimination: their information
    about the free cameras is already carried by the anchored residuals.
    After a successful solve, observations with residual above
    ``cull_threshold`` are removed, and landmarks left with fewer than two
    observations are deleted. A stalled solve leaves ``state`` untouched and
    flags the newest frame.
    """
    config = config or WindowConfig()
    window = sorted(window)
    problem = build_window_problem(state, window, camera, config)
    if problem is None:
        empty = SolverReport(0, 0.0, 0.0, True, 0.0)
        return WindowResult(empty, window, 0, 0, 0, False)

    report = solve_subspace_gn(problem, config.schedule)
    if report.stalled:
        state.flagged_frames.add(window[-1])
        return WindowResult(report, window, len(problem.points), problem.n_obs, 0, False)

    for f, pose, fixed in zip(problem.frame_ids, problem.poses, problem.pose_fixed):
        if not fixed:
            state.poses[f] = pose.orthonormalized()
    for lid, p in zip(problem.landmark_ids, problem.points):
        state.landmarks[lid] = p.copy()

    lin = linearize(problem)
    err = np.linalg.norm(lin.r, axis=1)
    bad = np.nonzero(~lin.valid | (err > config.cull_threshold))[0]
    culled = 0
    for k in bad:
        lid = problem.landmark_ids[problem.obs_pt[k]]
        f = problem.frame_ids[problem.obs_cam[k]]
        obs = state.observations.get(lid)
        if obs is not None and obs.pop(f, None) is not None:
            culled += 1
            if len(obs) < 2:
                state.remove_landmark(lid)
    return WindowResult(report, window, len(problem.points), problem.n_obs, culled, True)
