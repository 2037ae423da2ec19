"""Image loading, Sobel derivatives, intensity curvature and its local maxima."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import InvalidInputError, LoadError

# 3x3 Sobel normalized so that a unit-slope ramp has derivative 1.
_SOBEL_DERIV = np.array([-1.0, 0.0, 1.0]) / 2.0
_SOBEL_SMOOTH = np.array([1.0, 2.0, 1.0]) / 4.0


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image, row-major ``(height, width)`` float64 grid."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise InvalidInputError(f"expected a 2-D intensity grid, got shape {data.shape}")
        if data.shape[0] < 3 or data.shape[1] < 3:
            raise InvalidInputError(f"image must be at least 3x3, got {data.shape[1]}x{data.shape[0]}")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("image contains non-finite intensities")
        object.__setattr__(self, "data", data)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class DerivativeStack:
    fx: np.ndarray
    fy: np.ndarray
    fxx: np.ndarray
    fxy: np.ndarray
    fyy: np.ndarray


@dataclass(frozen=True)
class CurvatureMap:
    kappa: np.ndarray

    @property
    def shape(self):
        return self.kappa.shape


class ExtremumPoint(NamedTuple):
    x: int
    y: int
    kappa_value: float

    @property
    def position(self):
        return (self.x, self.y)


def load_image(path) -> GrayImage:
    """Read an 8/16-bit PNG (or anything Pillow decodes) into [0, 1] grayscale.

    Color images are reduced with luma = 0.299 R + 0.587 G + 0.114 B.
    """
    from PIL import Image

    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            arr = np.asarray(img)
    except (OSError, ValueError) as exc:
        raise LoadError(f"cannot read image {path}: {exc}") from exc

    if arr.ndim == 3:
        rgb = arr[..., :3].astype(np.float64)
        scale = 65535.0 if arr.dtype == np.uint16 else 255.0
        gray = (0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]) / scale
    elif arr.dtype == np.uint8:
        gray = arr.astype(np.float64) / 255.0
    elif arr.dtype in (np.uint16, np.int32, np.int16) or mode.startswith("I"):
        gray = arr.astype(np.float64) / 65535.0
    elif arr.dtype == bool:
        gray = arr.astype(np.float64)
    else:
        gray = arr.astype(np.float64)
    return GrayImage(gray)


def as_gray(image) -> GrayImage:
    return image if isinstance(image, GrayImage) else GrayImage(image)


def smooth(image: GrayImage, sigma: float) -> GrayImage:
    """Gaussian pre-blur with replicate-edge padding; ``sigma <= 0`` is a no-op."""
    if sigma <= 0:
        return image
    return GrayImage(ndimage.gaussian_filter(image.data, sigma, mode="nearest"))


def _sobel(grid: np.ndarray, axis: int) -> np.ndarray:
    # axis=1 differentiates along x (columns), axis=0 along y (rows)
    out = ndimage.correlate1d(grid, _SOBEL_DERIV, axis=axis, mode="nearest")
    return ndimage.correlate1d(out, _SOBEL_SMOOTH, axis=1 - axis, mode="nearest")


def compute_derivatives(image) -> DerivativeStack:
    """First and second derivatives by (cascaded) 3x3 Sobel filtering."""
    image = as_gray(image)
    f = image.data
    fx = _sobel(f, 1)
    fy = _sobel(f, 0)
    return DerivativeStack(
        fx=fx,
        fy=fy,
        fxx=_sobel(fx, 1),
        fxy=_sobel(fx, 0),
        fyy=_sobel(fy, 0),
    )


def compute_curvature(derivs: DerivativeStack) -> CurvatureMap:
    """kappa = fy^2 fxx - 2 fx fy fxy + fx^2 fyy, pixel-wise."""
    d = derivs
    kappa = d.fy * d.fy * d.fxx - 2.0 * d.fx * d.fy * d.fxy + d.fx * d.fx * d.fyy
    return CurvatureMap(kappa)


def curvature_of(image, blur_sigma: float = 0.0) -> CurvatureMap:
    image = as_gray(image)
    return compute_curvature(compute_derivatives(smooth(image, blur_sigma)))


def adaptive_threshold(kmap: CurvatureMap, quantile: float = 0.5) -> float:
    """Quantile of the strictly positive curvature values (0 when there are none)."""
    k = kmap.kappa
    pos = k[k > 0]
    if pos.size == 0:
        return 0.0
    return float(np.quantile(pos, quantile))


_NEIGHBORS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


def extrema_xy(kappa: np.ndarray, min_kappa: float = 0.0) -> np.ndarray:
    """Integer ``(x, y)`` of strict 8-neighborhood maxima above ``min_kappa``.

    Rows are sorted by ``(y, x)``. A plateau of equal maximal values
    contributes only its first pixel in raster order.
    """
    if min_kappa < 0:
        raise InvalidInputError("min_kappa must be non-negative")
    k = np.asarray(kappa, dtype=np.float64)
    h, w = k.shape
    if h < 3 or w < 3:
        return np.empty((0, 2), dtype=np.int64)
    c = k[1:-1, 1:-1]
    nmax = np.full(c.shape, -np.inf)
    ties = np.zeros(c.shape, dtype=bool)
    for dy, dx in _NEIGHBORS:
        nb = k[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
        np.maximum(nmax, nb, out=nmax)
        ties |= nb == c
    cand = (c >= nmax) & (c > min_kappa)
    strict = cand & ~ties
    tied = cand & ties

    if tied.any():
        strict |= _resolve_plateaus(c, cand, tied)

    ys, xs = np.nonzero(strict)
    return np.column_stack([xs + 1, ys + 1]).astype(np.int64)


def _resolve_plateaus(c, cand, tied):
    """Keep the raster-first pixel of each plateau that is a true maximum."""
    keep = np.zeros_like(tied)
    labels, n = ndimage.label(tied, structure=np.ones((3, 3), dtype=bool))
    h, w = c.shape
    padded_c = np.pad(c, 1, constant_values=np.nan)
    padded_cand = np.pad(cand, 1, constant_values=False)
    objects = ndimage.find_objects(labels)
    for lab in range(1, n + 1):
        ys, xs = np.nonzero(labels[objects[lab - 1]] == lab)
        ys = ys + objects[lab - 1][0].start
        xs = xs + objects[lab - 1][1].start
        value = c[ys[0], xs[0]]
        ok = True
        for dy, dx in _NEIGHBORS:
            nv = padded_c[ys + 1 + dy, xs + 1 + dx]
            ncand = padded_cand[ys + 1 + dy, xs + 1 + dx]
            # an equal-valued neighbor that is not itself a candidate has a higher neighbor
            if np.any((nv == value) & ~ncand):
                ok = False
                break
        if ok:
            order = np.lexsort((xs, ys))
            keep[ys[order[0]], xs[order[0]]] = True
    return keep


def detect_extrema(kmap: CurvatureMap, min_kappa: float) -> list[ExtremumPoint]:
    xy = extrema_xy(kmap.kappa, min_kappa)
    k = kmap.kappa
    return [ExtremumPoint(int(x), int(y), float(k[y, x])) for x, y in xy]
