"""Textured images and translated sequences for the tracker tests."""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def texture(height: int, width: int, seed: int = 3, blur: float = 2.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.random((height, width)), blur)
    return (img - img.min()) / (img.max() - img.min())


def translated_sequence(n_frames: int, step: int, height: int = 480, width: int = 752, seed: int = 3):
    """Frames whose content moves ``step`` pixels to the right per frame."""
    canvas = texture(height, width + n_frames * step + 20, seed)
    x0 = 20 + n_frames * step
    return [canvas[:, x0 - k * step:x0 - k * step + width] for k in range(n_frames)]


def follow_fraction(frames, step: int, config, border_slack: int = 0):
    """Fraction of live tracks that land within 1 px of their true shifted position.

    Tracks whose true position leaves the image are excluded; lost tracks
    count as failures.
    """
    from densevo.imaging import curvature_of
    from densevo.tracking import TrackSet, advance_tracks, seed_tracks

    tracks = TrackSet()
    width = frames[0].shape[1]
    good = total = 0
    prev = None
    for k, img in enumerate(frames):
        kmap = curvature_of(img, config.blur_sigma)
        if prev is None:
            seed_tracks(tracks, k, img, kmap, config)
        else:
            before = {t.track_id: t.last_position for t in tracks.live_tracks()}
            advance_tracks(tracks, prev, img, kmap, config, k)
            for tid, (x, y) in before.items():
                if x + step >= width - config.border - border_slack:
                    continue
                total += 1
                t = tracks.tracks[tid]
                if t.live and t.last_frame == k:
                    px, py = t.last_position
                    good += abs(px - x - step) <= 1 and abs(py - y) <= 1
        tracks.prune_lost()
        prev = img
    return good / max(total, 1), total
