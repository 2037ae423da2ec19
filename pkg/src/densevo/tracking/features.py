"""Coarse FAST-9 + BRIEF matching on subsampled frames.

Only used to seed the dominant-flow fit, so there is no scale/rotation
invariance and no subpixel refinement.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import ndimage

from ..errors import InsufficientMatchesError
from ..imaging import as_gray

# Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy).
_CIRCLE = np.array([
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
])
_ARC = 9


@dataclass(frozen=True)
class FrameFeatures:
    """Keypoints (low-res integer x, y) and packed 256-bit descriptors."""

    keypoints: np.ndarray  # (N, 2) int
    bits: np.ndarray  # (N, 256) bool
    factor: int

    def __len__(self):
        return len(self.keypoints)

    def full_resolution(self, idx=None) -> np.ndarray:
        kp = self.keypoints if idx is None else self.keypoints[idx]
        return (kp.astype(np.float64) + 0.5) * self.factor - 0.5


def downsample(data: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean subsampling; trailing rows/cols that don't fill a block are dropped."""
    if factor == 1:
        return data.copy()
    h = data.shape[0] // factor * factor
    w = data.shape[1] // factor * factor
    d = data[:h, :w]
    return d.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def fast9(img: np.ndarray, threshold: float, border: int = 3, max_corners: int = 300) -> np.ndarray:
    """FAST-9 corners with 3x3 non-max suppression, strongest first.

    Returns an ``(N, 2)`` int array of ``(x, y)``.
    """
    h, w = img.shape
    border = max(border, 3)
    if h <= 2 * border or w <= 2 * border:
        return np.empty((0, 2), dtype=np.int64)
    c = img[border:h - border, border:w - border]
    ring = np.stack([
        img[border + dy:h - border + dy, border + dx:w - border + dx] for dx, dy in _CIRCLE
    ], axis=-1)
    diff = ring - c[..., None]
    score = np.zeros(c.shape)
    is_corner = np.zeros(c.shape, dtype=bool)
    for side in (diff > threshold, diff < -threshold):
        wrapped = np.concatenate([side, side[..., :_ARC - 1]], axis=-1).astype(np.int32)
        csum = np.cumsum(np.pad(wrapped, ((0, 0), (0, 0), (1, 0))), axis=-1)
        runs = csum[..., _ARC:] - csum[..., :-_ARC]
        hit = (runs == _ARC).any(axis=-1)
        s = np.where(side, np.abs(diff) - threshold, 0.0).sum(axis=-1)
        score = np.where(hit, np.maximum(score, s), score)
        is_corner |= hit
    score = np.where(is_corner, score, 0.0)
    local_max = ndimage.maximum_filter(score, size=3, mode="constant") == score
    ys, xs = np.nonzero(is_corner & local_max)
    s = score[ys, xs]
    order = np.lexsort((xs, ys, -s))[:max_corners]
    return np.column_stack([xs[order] + border, ys[order] + border]).astype(np.int64)


@lru_cache(maxsize=8)
def brief_pattern(patch_size: int, seed: int) -> np.ndarray:
    """256 fixed point pairs ``(dx1, dy1, dx2, dy2)`` inside the patch."""
    half = patch_size // 2
    rng = np.random.default_rng(seed)
    pts = np.rint(rng.normal(0.0, patch_size / 5.0, size=(256, 4)))
    return np.clip(pts, -half, half).astype(np.int64)


def describe(image, factor: int = 6, *, patch_size: int = 31, fast_threshold: float = 0.02,
             max_corners: int = 300, seed: int = 0x5EED) -> FrameFeatures:
    data = as_gray(image).data
    low = downsample(data, factor)
    low = ndimage.gaussian_filter(low, 1.0, mode="nearest")
    half = patch_size // 2
    kp = fast9(low, fast_threshold, border=half, max_corners=max_corners)
    pattern = brief_pattern(patch_size, seed)
    if len(kp) == 0:
        return FrameFeatures(kp, np.zeros((0, 256), dtype=bool), factor)
    x, y = kp[:, 0:1], kp[:, 1:2]
    a = low[y + pattern[None, :, 1], x + pattern[None, :, 0]]
    b = low[y + pattern[None, :, 3], x + pattern[None, :, 2]]
    return FrameFeatures(kp, a < b, factor)


def hamming_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    fa = a.astype(np.float32)
    fb = b.astype(np.float32)
    return fa @ (1.0 - fb).T + (1.0 - fa) @ fb.T


def match_features(prev: FrameFeatures, curr: FrameFeatures, max_distance: int = 80):
    """Mutual nearest neighbors in Hamming distance.

    Returns ``(x_prev, x_curr)`` as two ``(K, 2)`` float arrays in full-resolution pixels.
    """
    if len(prev) == 0 or len(curr) == 0:
        raise InsufficientMatchesError("no corners detected")
    d = hamming_matrix(prev.bits, curr.bits)
    fwd = np.argmin(d, axis=1)
    bwd = np.argmin(d, axis=0)
    i = np.arange(len(prev))
    mutual = (bwd[fwd] == i) & (d[i, fwd] <= max_distance)
    i = i[mutual]
    j = fwd[mutual]
    if len(i) < 3:
        raise InsufficientMatchesError(f"only {len(i)} BRIEF matches; the affine fit needs 3")
    return prev.full_resolution(i), curr.full_resolution(j)


def match_brief(prev, curr, config):
    """Match two full-resolution frames through their subsampled versions."""
    a = describe_with(prev, config)
    b = describe_with(curr, config)
    return match_features(a, b, config.max_match_distance)


def describe_with(image, config) -> FrameFeatures:
    return describe(
        image,
        config.subsample_factor,
        patch_size=config.brief_patch_size,
        fast_threshold=config.fast_threshold,
        max_corners=config.max_corners,
        seed=config.brief_seed,
    )
