"""Dominant flow and dense track advancement.

Between two frames a single affine motion is fitted to sparse corner
matches with a bounded robust loss, so a minority of wrong matches does not
pull it. Each track then predicts its next position with that motion and
climbs the curvature map to the nearest extremum.

Run: python demos/02_dominant_flow_and_tracking.py
"""

import numpy as np
from scipy import ndimage

from densevo.imaging import curvature_of
from densevo.tracking import (RobustKernel, TrackerConfig, TrackSet, advance_tracks, estimate_dominant_flow,
                              seed_tracks)

# Robust affine fit: 70 correct pairs moved by (3, -2) and 30 random ones.
rng = np.random.default_rng(1)
x = rng.uniform(0, [752, 480], (100, 2))
y = x + [3.0, -2.0] + rng.normal(0, 0.3, x.shape)
y[:30] = rng.uniform(0, [752, 480], (30, 2))
flow = estimate_dominant_flow((x, y), kernel=RobustKernel(2.0))
plain = np.linalg.lstsq(np.column_stack([x, np.ones(100)]), y, rcond=None)[0][2]
print(f"robust fit b = ({flow.b[0]:.3f}, {flow.b[1]:.3f}); plain least squares b = ({plain[0]:.1f}, {plain[1]:.1f})")

# Track a texture drifting 3 px to the right per frame.
canvas = ndimage.gaussian_filter(rng.random((480, 800)), 2.0)
canvas = (canvas - canvas.min()) / np.ptp(canvas)
frames = [canvas[:, 40 - 3 * k:40 - 3 * k + 752] for k in range(6)]

config = TrackerConfig()
tracks = TrackSet()
seed_tracks(tracks, 0, frames[0], curvature_of(frames[0], config.blur_sigma), config)
print(f"frame 0: {len(tracks.live_tracks())} tracks seeded")
for k in range(1, len(frames)):
    before = {t.track_id: t.last_position for t in tracks.live_tracks()}
    result = advance_tracks(tracks, frames[k - 1], frames[k], curvature_of(frames[k], config.blur_sigma), config, k)
    moved = [tracks.tracks[i].last_position[0] - p[0] for i, p in before.items()
             if tracks.tracks[i].live and tracks.tracks[i].last_frame == k]
    print(f"frame {k}: {result.n_tracked} followed, {result.n_lost} lost, {result.n_spawned} new, "
          f"median step {np.median(moved):.1f} px, flow b = ({result.flow.b[0]:.2f}, {result.flow.b[1]:.2f})")
    tracks.prune_lost()
