"""Frame-by-frame orchestration: tracking, initialization, localization, BA and meshing."""

from __future__ import annotations

import logging
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..ba.window import MapState, run_windowed_ba
from ..errors import DatasetError, InitializationRetry, InvalidInputError, PoseFailure
from ..geometry.camera import PinholeCamera, Pose, project_points, undistort_points
from ..geometry.pnp import pnp_ransac
from ..geometry.triangulation import triangulate_many
from ..geometry.twoview import RansacConfig, init_two_view
from ..imaging import as_gray, curvature_of
from ..recon.mesh import TriangleMesh, mesh_frame, smooth_mesh
from ..recon.tsdf import TsdfVolume, extract_surface, integrate_mesh
from ..tracking.tracker import TrackSet, advance_tracks, seed_tracks
from .config import PipelineConfig
from .dataset import FrameRecord
from .trajectory import Trajectory

log = logging.getLogger(__name__)

STAGES = ("tracking", "initialization", "localization", "triangulation", "ba", "meshing", "extraction")


@dataclass
class RunStats:
    frames: int = 0
    localized: int = 0
    lost_frames: list = field(default_factory=list)
    init_retries: int = 0
    reference_resets: int = 0
    initialized_frame: int | None = None
    ba_runs: int = 0
    ba_stalled: int = 0
    culled_observations: int = 0
    landmarks: int = 0
    mesh_passes: int = 0
    mesh_dropped: int = 0
    stage_ms: dict = field(default_factory=lambda: defaultdict(list))

    @property
    def success_rate(self) -> float:
        return self.localized / self.frames if self.frames else 0.0

    @property
    def initialized(self) -> bool:
        return self.initialized_frame is not None

    def mean_ms(self, stage: str) -> float:
        v = self.stage_ms.get(stage, [])
        return float(np.mean(v)) if v else 0.0

    def summary(self) -> dict:
        """Everything except wall-clock timings (deterministic for a fixed config)."""
        return {
            "frames": self.frames,
            "localized": self.localized,
            "success_rate": self.success_rate,
            "lost_frames": list(self.lost_frames),
            "init_retries": self.init_retries,
            "reference_resets": self.reference_resets,
            "initialized_frame": self.initialized_frame,
            "ba_runs": self.ba_runs,
            "ba_stalled": self.ba_stalled,
            "culled_observations": self.culled_observations,
            "landmarks": self.landmarks,
            "mesh_passes": self.mesh_passes,
            "mesh_dropped": self.mesh_dropped,
        }

    def report(self) -> str:
        lines = [f"{k}: {v}" for k, v in self.summary().items() if k != "lost_frames"]
        lines.append(f"lost_frame_count: {len(self.lost_frames)}")
        for s in STAGES:
            lines.append(f"mean_ms.{s}: {self.mean_ms(s):.3f}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class MeshSnapshot:
    """Immutable hand-off from the front-end to the reconstruction back-end."""

    frame_id: int
    pose: Pose
    points: np.ndarray


class ReconstructionBackend:
    """Mesh, smooth and fuse snapshots; optionally on a worker thread.

    The hand-off slot holds one snapshot: submitting while the worker is busy
    replaces the waiting snapshot (counted as dropped) instead of blocking.
    """

    def __init__(self, camera: PinholeCamera, shape, config: PipelineConfig, stats: RunStats,
                 threaded: bool = True):
        rc = config.recon
        self.camera = camera
        self.shape = shape
        self.rc = rc
        self.stats = stats
        self.volume = TsdfVolume(rc.voxel_size, rc.truncation_voxels * rc.voxel_size, rc.max_weight)
        self.threaded = threaded
        self._cv = threading.Condition()
        self._slot: MeshSnapshot | None = None
        self._stop = False
        self._thread = None
        self.error: BaseException | None = None
        if threaded:
            self._thread = threading.Thread(target=self._loop, name="recon-backend", daemon=True)
            self._thread.start()

    def submit(self, snap: MeshSnapshot) -> None:
        if not self.threaded:
            self._process(snap)
            return
        with self._cv:
            if self._slot is not None:
                self.stats.mesh_dropped += 1
            self._slot = snap
            self._cv.notify()

    def _loop(self):
        while True:
            with self._cv:
                while self._slot is None and not self._stop:
                    self._cv.wait()
                if self._slot is None and self._stop:
                    return
                snap, self._slot = self._slot, None
            try:
                self._process(snap)
            except Exception as exc:  # surfaced by close()
                self.error = exc
                return

    def _process(self, snap: MeshSnapshot) -> None:
        t0 = time.perf_counter()
        rc = self.rc
        mesh = mesh_frame(snap.points, snap.pose, self.camera, voxel_size=rc.voxel_size,
                          max_edge_voxels=rc.max_edge_voxels, max_depth_ratio=rc.max_depth_ratio)
        if not mesh.is_empty():
            mesh = smooth_mesh(mesh, rc.smoothing_iterations, rc.smoothing_strength)
            integrate_mesh(self.volume, mesh, snap.pose, self.camera, self.shape)
        self.stats.mesh_passes += 1
        self.stats.stage_ms["meshing"].append(1e3 * (time.perf_counter() - t0))

    def close(self) -> TsdfVolume:
        if self._thread is not None:
            with self._cv:
                self._stop = True
                self._cv.notify()
            self._thread.join()
            self._thread = None
        if self.error is not None:
            raise self.error
        return self.volume


@dataclass
class PipelineResult:
    trajectory: Trajectory
    mesh: TriangleMesh
    stats: RunStats
    volume: TsdfVolume | None
    map: MapState


class Pipeline:
    """Stateful front-end; feed frames with :meth:`process`, then call :meth:`finish`."""

    def __init__(self, config: PipelineConfig, camera: PinholeCamera):
        self.cfg = config
        self.camera = camera
        self.ideal = camera.undistorted()
        self.tcfg = config.tracker.to_tracker()
        self.wcfg = config.ba.to_window()
        self.tracks = TrackSet()
        self.map = MapState()
        self.stats = RunStats()
        self.timestamps: dict = {}
        self.upx: dict = {}  # track_id -> {frame_id: undistorted pixel}
        self.prev_image = None
        self.shape = None
        self.reference: int | None = None
        self.reference_count = 0
        self.pending: list = []
        self.next_landmark = 0
        self.last_ts = None
        self.backend: ReconstructionBackend | None = None

    # -- helpers --------------------------------------------------------------------
    def _timed(self, stage, t0):
        self.stats.stage_ms[stage].append(1e3 * (time.perf_counter() - t0))

    @property
    def initialized(self) -> bool:
        return self.stats.initialized_frame is not None

    def _record_positions(self, fid: int) -> None:
        live = [t for t in self.tracks.tracks.values() if t.live and t.last_frame == fid]
        if not live:
            return
        raw = np.array([t.last_position for t in live], dtype=np.float64)
        und, ok = undistort_points(self.camera, raw)
        for t, p, good in zip(live, und, ok):
            if good:
                self.upx.setdefault(t.track_id, {})[fid] = p

    def _drop_lost_tracks(self) -> None:
        lost = [tid for tid, t in self.tracks.tracks.items() if not t.live]
        for tid in lost:
            self.upx.pop(tid, None)
        self.tracks.prune_lost()

    # -- per frame ------------------------------------------------------------------
    def process(self, frame: FrameRecord) -> bool:
        """Handle one frame; returns whether it received a pose."""
        if self.last_ts is not None and frame.timestamp <= self.last_ts:
            raise DatasetError(f"frame {frame.frame_id}: timestamp does not increase")
        self.last_ts = frame.timestamp
        fid = frame.frame_id
        self.timestamps[fid] = frame.timestamp
        self.stats.frames += 1

        t0 = time.perf_counter()
        img = as_gray(frame.image)
        if self.shape is None:
            self.shape = img.shape
            if self.cfg.recon.enabled:
                self.backend = ReconstructionBackend(self.ideal, self.shape, self.cfg, self.stats,
                                                     threaded=not self.cfg.run.sync_backend)
        elif img.shape != self.shape:
            raise InvalidInputError(f"frame {fid}: image size changed to {img.shape}")
        kmap = curvature_of(img, self.tcfg.blur_sigma)
        if self.prev_image is None:
            seed_tracks(self.tracks, fid, img, kmap, self.tcfg)
        else:
            advance_tracks(self.tracks, self.prev_image, img, kmap, self.tcfg, fid)
        self._record_positions(fid)
        self.prev_image = img
        self._timed("tracking", t0)

        if not self.initialized:
            self._initialize(fid)
        else:
            self._localize(fid)

        if fid in self.map.poses:
            if self.backend is not None and fid % self.cfg.run.mesh_interval == 0:
                pts = [self.map.landmarks[l] for l in self.map.frame_landmarks(fid)]
                if len(pts) >= 3:
                    self.backend.submit(MeshSnapshot(fid, self.map.poses[fid], np.array(pts)))
        self._drop_lost_tracks()
        return fid in self.map.poses

    def _initialize(self, fid: int) -> None:
        t0 = time.perf_counter()
        self.pending.append(fid)
        if self.reference is None:
            self._set_reference(fid)
            self.stats.init_retries += 1
            self._timed("initialization", t0)
            return
        ref = self.reference
        pairs = [(t, self.upx[t.track_id]) for t in self.tracks.tracks.values()
                 if t.live and t.track_id in self.upx and ref in self.upx[t.track_id] and fid in self.upx[t.track_id]]
        icfg = self.cfg.init
        if len(pairs) < max(icfg.min_correspondences, icfg.reference_survival * self.reference_count):
            self.stats.init_retries += 1
            self.stats.reference_resets += 1
            self._set_reference(fid)
            self._timed("initialization", t0)
            return
        ua = np.array([p[ref] for _, p in pairs])
        ub = np.array([p[fid] for _, p in pairs])
        ransac = RansacConfig(icfg.ransac_iterations, icfg.ransac_threshold, self.cfg.run.seed + fid)
        try:
            res = init_two_view(ua, ub, self.ideal, ransac, min_parallax_deg=icfg.min_parallax_deg,
                                min_inlier_ratio=icfg.min_inlier_ratio, first_landmark_id=self.next_landmark,
                                frame_ids=(ref, fid))
        except InitializationRetry as exc:
            log.debug("frame %d: initialization retry (%s)", fid, exc)
            self.stats.init_retries += 1
            self._timed("initialization", t0)
            return

        self.map.poses[ref] = Pose()
        self.map.poses[fid] = res.pose
        for (t, p), good, X in zip(pairs, res.inliers, res.points):
            if not good:
                continue
            lid = self.next_landmark
            self.next_landmark += 1
            t.landmark_id = lid
            self.map.landmarks[lid] = X.copy()
            self.map.add_observation(lid, ref, p[ref])
            self.map.add_observation(lid, fid, p[fid])
        self.stats.initialized_frame = fid
        self._timed("initialization", t0)
        log.info("initialized at frame %d against frame %d with %d landmarks", fid, ref,
                 int(res.inliers.sum()))

        # frames seen while waiting for parallax are localized against the new map
        for f in self.pending:
            if f in (ref, fid):
                continue
            if self._pnp(f) is None:
                self.stats.lost_frames.append(f)
        self.stats.localized += sum(1 for f in self.pending if f in self.map.poses)
        self.pending = []
        self._triangulate(fid)
        self._bundle_adjust()

    def _set_reference(self, fid: int) -> None:
        self.reference = fid
        self.reference_count = sum(1 for t in self.tracks.tracks.values()
                                   if t.live and fid in self.upx.get(t.track_id, {}))

    def _pnp(self, fid: int) -> Pose | None:
        """Localize ``fid`` against the map; records inlier observations on success."""
        t0 = time.perf_counter()
        lc = self.cfg.localization
        tracks, lids, px = [], [], []
        for t in self.tracks.tracks.values():
            lid = t.landmark_id
            if lid is None or lid not in self.map.landmarks:
                continue
            p = self.upx.get(t.track_id, {}).get(fid)
            if p is None:
                continue
            tracks.append(t)
            lids.append(lid)
            px.append(p)
        try:
            if len(lids) < lc.min_points:
                raise PoseFailure(f"only {len(lids)} map points visible")
            pts = np.array([self.map.landmarks[l] for l in lids])
            ransac = RansacConfig(lc.ransac_iterations, lc.ransac_threshold, self.cfg.run.seed + fid)
            pose, inliers = pnp_ransac(pts, np.array(px), self.ideal, ransac,
                                       min_inlier_ratio=lc.min_inlier_ratio, return_inliers=True)
        except PoseFailure as exc:
            log.debug("frame %d: %s", fid, exc)
            self._timed("localization", t0)
            return None
        self.map.poses[fid] = pose
        for t, lid, p, ok in zip(tracks, lids, px, inliers):
            if ok:
                self.map.add_observation(lid, fid, p)
            elif t.live and t.last_frame == fid:
                t.mark_lost()  # the track slid off its landmark
        self._timed("localization", t0)
        return pose

    def _localize(self, fid: int) -> None:
        if self._pnp(fid) is None:
            self.stats.lost_frames.append(fid)
            return
        self.stats.localized += 1
        self._triangulate(fid)
        self._bundle_adjust()

    def _triangulate(self, fid: int) -> None:
        """New landmarks from live tracks seen in ``fid`` and in an earlier posed frame."""
        t0 = time.perf_counter()
        lc = self.cfg.localization
        groups = defaultdict(list)
        for t in self.tracks.tracks.values():
            if not t.live or (t.landmark_id is not None and t.landmark_id in self.map.landmarks):
                continue
            obs = self.upx.get(t.track_id, {})
            if fid not in obs:
                continue
            first = next((f for f in sorted(obs) if f != fid and f in self.map.poses), None)
            if first is not None:
                groups[first].append(t)
        pose_b = self.map.poses[fid]
        created = 0
        for fa in sorted(groups):
            ts = groups[fa]
            pose_a = self.map.poses[fa]
            ua = np.array([self.upx[t.track_id][fa] for t in ts])
            ub = np.array([self.upx[t.track_id][fid] for t in ts])
            pts, ok = triangulate_many(pose_a, pose_b, ua, ub, self.ideal, lc.triangulation_parallax_deg)
            if not ok.any():
                continue
            ea = np.linalg.norm(project_points(self.ideal, pose_a, pts)[0] - ua, axis=1)
            eb = np.linalg.norm(project_points(self.ideal, pose_b, pts)[0] - ub, axis=1)
            ok &= (ea < lc.triangulation_max_error) & (eb < lc.triangulation_max_error)
            for t, X, good in zip(ts, pts, ok):
                if not good:
                    continue
                lid = self.next_landmark
                self.next_landmark += 1
                t.landmark_id = lid
                self.map.landmarks[lid] = X.copy()
                for f, p in self.upx[t.track_id].items():
                    pose = self.map.poses.get(f)
                    if pose is None:
                        continue
                    u, z = project_points(self.ideal, pose, X[None])
                    if f in (fa, fid) or (z[0] > 0 and np.linalg.norm(u[0] - p) < lc.triangulation_max_error):
                        self.map.add_observation(lid, f, p)
                created += 1
        self._timed("triangulation", t0)

    def _bundle_adjust(self) -> None:
        t0 = time.perf_counter()
        posed = sorted(self.map.poses)
        window = posed[-self.wcfg.window_size:]
        if len(window) >= 2:
            res = run_windowed_ba(self.map, window, self.ideal, self.wcfg)
            self.stats.ba_runs += 1
            self.stats.culled_observations += res.culled
            if res.report.stalled:
                self.stats.ba_stalled += 1
        for t in self.tracks.tracks.values():
            if t.landmark_id is not None and t.landmark_id not in self.map.landmarks:
                t.landmark_id = None
        self._timed("ba", t0)

    # -- end of sequence ------------------------------------------------------------
    def finish(self) -> PipelineResult:
        self.stats.landmarks = len(self.map.landmarks)
        # frames never localized after initialization already sit in lost_frames;
        # frames still waiting for initialization are lost as well
        for f in self.pending:
            if f not in self.map.poses and f not in self.stats.lost_frames:
                self.stats.lost_frames.append(f)
        self.pending = []
        self.stats.lost_frames.sort()
        volume = self.backend.close() if self.backend is not None else None
        mesh = TriangleMesh()
        if volume is not None:
            t0 = time.perf_counter()
            mesh = extract_surface(volume)
            self._timed("extraction", t0)
        frames = sorted(self.map.poses)
        traj = Trajectory([self.timestamps[f] for f in frames], [self.map.poses[f] for f in frames])
        traj.validate()
        return PipelineResult(traj, mesh, self.stats, volume, self.map)


def run_pipeline(config: PipelineConfig, frames, camera: PinholeCamera) -> PipelineResult:
    """Run the whole pipeline over an iterable of :class:`FrameRecord`."""
    pipe = Pipeline(config, camera)
    limit = config.run.max_frames
    try:
        for k, frame in enumerate(frames):
            if limit and k >= limit:
                break
            pipe.process(frame)
            frame.release()
    except BaseException:
        if pipe.backend is not None:
            pipe.backend.close()
        raise
    return pipe.finish()
