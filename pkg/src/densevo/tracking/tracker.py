"""Dominant-flow-guided hill climbing on the curvature map."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateConfigurationError, InsufficientMatchesError, InvalidInputError
from ..imaging import CurvatureMap, adaptive_threshold, extrema_xy
from .features import FrameFeatures, describe_with, match_features
from .flow import DominantFlow, estimate_dominant_flow
from .robust import RobustKernel

LIVE = "live"
LOST = "lost"

_STEPS = np.array([(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0)])


@dataclass
class TrackerConfig:
    lam: float | None = None  # None: 0.1 x median extremum curvature of the frame
    lam_scale: float = 0.1
    kernel: RobustKernel = field(default_factory=lambda: RobustKernel(5.0))
    flow_sigma_lowres: float = 2.0
    subsample_factor: int = 6
    max_hill_climb_steps: int = 10
    gn_max_iters: int = 30
    gn_tol: float = 1e-6
    blur_sigma: float = 1.0
    kappa_quantile: float = 0.5
    min_kappa: float = 0.0
    lost_floor_ratio: float = 0.25
    spawn_radius: int = 2
    border: int = 2
    brief_patch_size: int = 31
    brief_seed: int = 0x5EED
    fast_threshold: float = 0.02
    max_corners: int = 300
    max_match_distance: int = 80

    def __post_init__(self):
        if self.subsample_factor < 1:
            raise InvalidInputError("subsample_factor must be >= 1")
        if self.max_hill_climb_steps < 1:
            raise InvalidInputError("max_hill_climb_steps must be >= 1")
        if self.lam is not None and self.lam < 0:
            raise InvalidInputError("lambda must be non-negative")
        if not 0.0 <= self.kappa_quantile < 1.0:
            raise InvalidInputError("kappa_quantile must lie in [0, 1)")


@dataclass
class FeatureTrack:
    track_id: int
    observations: list = field(default_factory=list)
    status: str = LIVE
    landmark_id: int | None = None

    @property
    def live(self) -> bool:
        return self.status == LIVE

    @property
    def last_frame(self):
        return self.observations[-1][0]

    @property
    def last_position(self):
        return self.observations[-1][1]

    def add(self, frame_id: int, position) -> None:
        if self.status != LIVE:
            raise InvalidInputError(f"track {self.track_id} is lost")
        if self.observations and frame_id <= self.last_frame:
            raise InvalidInputError(
                f"track {self.track_id}: frame {frame_id} after {self.last_frame}")
        self.observations.append((frame_id, (int(position[0]), int(position[1]))))

    def position_at(self, frame_id):
        for f, p in self.observations:
            if f == frame_id:
                return p
        return None

    def mark_lost(self) -> None:
        self.status = LOST


@dataclass
class TrackSet:
    tracks: dict = field(default_factory=dict)
    frame_id: int | None = None
    next_id: int = 0
    last_flow: DominantFlow = field(default_factory=DominantFlow)
    features: FrameFeatures | None = None

    def __len__(self):
        return len(self.tracks)

    def live_tracks(self) -> list[FeatureTrack]:
        return [t for t in self.tracks.values() if t.live]

    def spawn(self, frame_id: int, position) -> FeatureTrack:
        t = FeatureTrack(self.next_id)
        t.add(frame_id, position)
        self.tracks[t.track_id] = t
        self.next_id += 1
        return t

    def prune_lost(self, keep=lambda t: False) -> None:
        """Forget lost tracks unless ``keep(track)`` says otherwise."""
        self.tracks = {i: t for i, t in self.tracks.items() if t.live or keep(t)}


@dataclass
class AdvanceReport:
    flow: DominantFlow
    flow_reused: bool
    n_matches: int
    n_tracked: int
    n_lost: int
    n_spawned: int
    lam: float
    spawn_floor: float


def frame_lambda(kappa_values: np.ndarray, config: TrackerConfig) -> float:
    if config.lam is not None:
        return float(config.lam)
    if len(kappa_values) == 0:
        return 0.0
    return float(config.lam_scale * np.median(kappa_values))


def hill_climb(preds, kappa: np.ndarray, lam: float, sigma: float, max_steps: int):
    """Vectorized greedy ascent of F = kappa(x) + lam * w(|x - pred|).

    Returns ``(positions, F)``; each point stops as soon as no 8-neighbor
    strictly improves F or after ``max_steps`` moves.
    """
    preds = np.atleast_2d(np.asarray(preds, dtype=np.int64))
    h, w = kappa.shape
    s2 = sigma * sigma

    def score(p):
        d2 = np.sum((p - preds) ** 2, axis=-1).astype(np.float64)
        return kappa[p[..., 1], p[..., 0]] + lam * s2 / (d2 + s2)

    pos = preds.copy()
    best = score(pos)
    active = np.ones(len(pos), dtype=bool)
    for _ in range(max_steps):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        cand = pos[idx, None, :] + _STEPS[None, :, :]
        inside = (cand[..., 0] >= 0) & (cand[..., 0] < w) & (cand[..., 1] >= 0) & (cand[..., 1] < h)
        cand[..., 0] = np.clip(cand[..., 0], 0, w - 1)
        cand[..., 1] = np.clip(cand[..., 1], 0, h - 1)
        d2 = np.sum((cand - preds[idx, None, :]) ** 2, axis=-1).astype(np.float64)
        f = kappa[cand[..., 1], cand[..., 0]] + lam * s2 / (d2 + s2)
        f = np.where(inside, f, -np.inf)
        k = np.argmax(f, axis=1)
        fk = f[np.arange(len(idx)), k]
        moved = fk > best[idx]
        mi = idx[moved]
        pos[mi] = cand[moved, k[moved]]
        best[mi] = fk[moved]
        active[idx[~moved]] = False
    return pos, best


def track_extremum(pred, kmap: CurvatureMap, config: TrackerConfig, *, lam: float | None = None,
                   floor: float | None = None):
    """Correct one predicted position by hill climbing.

    Returns ``((x, y), F)`` or ``None`` when the converged curvature is below
    the floor or not positive (the track is lost).
    """
    if lam is None:
        lam = config.lam if config.lam is not None else frame_lambda(
            kmap.kappa[tuple(extrema_xy(kmap.kappa)[:, ::-1].T)], config)
    floor = config.min_kappa if floor is None else floor
    h, w = kmap.shape
    x, y = int(pred[0]), int(pred[1])
    if not (0 <= x < w and 0 <= y < h):
        raise InvalidInputError(f"prediction {pred} outside the image")
    pos, f = hill_climb([[x, y]], kmap.kappa, lam, config.kernel.sigma, config.max_hill_climb_steps)
    px, py = int(pos[0, 0]), int(pos[0, 1])
    k = kmap.kappa[py, px]
    if k < floor or k <= 0:
        return None
    return (px, py), float(f[0])


def estimate_frame_flow(tracks: TrackSet, prev, curr, config: TrackerConfig):
    """Match BRIEF features of ``prev``/``curr`` and fit the dominant flow.

    Falls back to the previous flow when matching or the fit fails. Returns
    ``(flow, reused, n_matches, curr_features)``.
    """
    prev_feats = tracks.features if tracks.features is not None else describe_with(prev, config)
    curr_feats = describe_with(curr, config)
    try:
        x_prev, x_curr = match_features(prev_feats, curr_feats, config.max_match_distance)
        flow = estimate_dominant_flow((x_prev, x_curr), config)
        return flow, False, len(x_prev), curr_feats
    except (InsufficientMatchesError, DegenerateConfigurationError):
        return tracks.last_flow, True, 0, curr_feats


def seed_tracks(tracks: TrackSet, frame_id: int, image, kmap: CurvatureMap, config: TrackerConfig) -> int:
    """Start tracks on every extremum of the first frame."""
    floor = max(config.min_kappa, adaptive_threshold(kmap, config.kappa_quantile))
    xy = extrema_xy(kmap.kappa, floor)
    xy = _inside(xy, kmap.shape, config.border)
    for p in xy:
        tracks.spawn(frame_id, p)
    tracks.frame_id = frame_id
    tracks.features = describe_with(image, config)
    return len(xy)


def _inside(xy, shape, border):
    h, w = shape
    ok = (xy[:, 0] >= border) & (xy[:, 0] < w - border) & (xy[:, 1] >= border) & (xy[:, 1] < h - border)
    return xy[ok]


def advance_tracks(tracks: TrackSet, prev, curr, curr_kmap: CurvatureMap, config: TrackerConfig,
                   frame_id: int | None = None, *, flow: DominantFlow | None = None) -> AdvanceReport:
    """Move every live track from ``prev`` to ``curr`` and spawn new ones.

    Mutates ``tracks`` in place (single writer) and returns a report.
    """
    if frame_id is None:
        frame_id = 0 if tracks.frame_id is None else tracks.frame_id + 1
    if tracks.frame_id is not None and frame_id <= tracks.frame_id:
        raise InvalidInputError(f"frame {frame_id} does not follow {tracks.frame_id}")

    if flow is None:
        flow, reused, n_matches, feats = estimate_frame_flow(tracks, prev, curr, config)
    else:
        reused, n_matches, feats = False, 0, describe_with(curr, config)

    kappa = curr_kmap.kappa
    h, w = kappa.shape
    spawn_floor = max(config.min_kappa, adaptive_threshold(curr_kmap, config.kappa_quantile))
    lost_floor = max(config.min_kappa, config.lost_floor_ratio * spawn_floor)
    extrema = extrema_xy(kappa, spawn_floor)
    lam = frame_lambda(kappa[extrema[:, 1], extrema[:, 0]], config)

    live = [t for t in tracks.tracks.values() if t.live and t.last_frame == tracks.frame_id]
    n_lost = 0
    n_tracked = 0
    if live:
        last = np.array([t.last_position for t in live], dtype=np.float64)
        raw = flow.apply(last)
        b = config.border
        in_view = (raw[:, 0] >= b - 0.5) & (raw[:, 0] < w - b - 0.5) & \
                  (raw[:, 1] >= b - 0.5) & (raw[:, 1] < h - b - 0.5)
        preds = np.rint(raw).astype(np.int64)
        preds[:, 0] = np.clip(preds[:, 0], 0, w - 1)
        preds[:, 1] = np.clip(preds[:, 1], 0, h - 1)
        pos, score = hill_climb(preds, kappa, lam, config.kernel.sigma, config.max_hill_climb_steps)
        k_at = kappa[pos[:, 1], pos[:, 0]]
        ok = in_view & (k_at >= lost_floor) & (k_at > 0)
        ok &= (pos[:, 0] >= b) & (pos[:, 0] < w - b) & (pos[:, 1] >= b) & (pos[:, 1] < h - b)

        # collisions: keep the highest F per pixel (ties -> lowest track id)
        keys = pos[:, 1] * w + pos[:, 0]
        idx = np.nonzero(ok)[0]
        order = idx[np.lexsort((idx, -score[idx], keys[idx]))]
        first = np.ones(len(order), dtype=bool)
        first[1:] = keys[order][1:] != keys[order][:-1]
        winners = np.zeros(len(live), dtype=bool)
        winners[order[first]] = True

        for i, t in enumerate(live):
            if winners[i]:
                t.add(frame_id, pos[i])
                n_tracked += 1
            else:
                t.mark_lost()
                n_lost += 1
        occupied = pos[winners]
    else:
        occupied = np.empty((0, 2), dtype=np.int64)

    # stale live tracks that skipped a frame cannot continue
    for t in tracks.tracks.values():
        if t.live and t.last_frame != frame_id and t.last_frame != tracks.frame_id:
            t.mark_lost()

    n_spawned = 0
    candidates = _inside(extrema, (h, w), config.border)
    if len(candidates):
        taken = np.zeros((h, w), dtype=bool)
        r = config.spawn_radius
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                yy = np.clip(occupied[:, 1] + dy, 0, h - 1)
                xx = np.clip(occupied[:, 0] + dx, 0, w - 1)
                taken[yy, xx] = True
        for p in candidates[~taken[candidates[:, 1], candidates[:, 0]]]:
            tracks.spawn(frame_id, p)
            n_spawned += 1

    tracks.frame_id = frame_id
    tracks.features = feats
    if not reused:
        tracks.last_flow = flow
    return AdvanceReport(flow, reused, n_matches, n_tracked, n_lost, n_spawned, lam, spawn_floor)
