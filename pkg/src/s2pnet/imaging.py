"""Grayscale raster primitives.

Images are 2-D float64 numpy arrays with values in [0, 1], indexed
``img[row, col]``. The rotation/resampling center of an H x W image is
``((W - 1) / 2, (H - 1) / 2)`` so that 90-degree rotations of square images
are exact lattice permutations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Rec.601 luma weights.
_LUMA = np.array([0.299, 0.587, 0.114])

# Quarter-turn rotations are dispatched to an exact index permutation when
# the angle is within this tolerance of a multiple of pi/2.
_QUARTER_TURN_EPS = 1e-12


class EmptyMaskError(ValueError):
    """Raised when a binary mask has no foreground pixels."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle: top-left corner (x0, y0), extents (w, h)."""

    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"degenerate rect {self}")


def check_image(img: np.ndarray) -> np.ndarray:
    """Validate an image array: 2-D, finite, values in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values outside [0, 1]")
    return img


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Convert an (H, W, 3) raster in [0, 1] to a single luma channel."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) raster, got shape {rgb.shape}")
    return rgb @ _LUMA


def bilinear_sample(img: np.ndarray, x, y):
    """Bilinearly interpolate ``img`` at continuous coordinates (x, y).

    ``x`` indexes columns and ``y`` rows; both may be scalars or arrays of
    matching shape. Contributions from outside [0, W-1] x [0, H-1] are zero.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    h, w = img.shape
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx = x - x0
    fy = y - y0

    def corner(yy, xx):
        inside = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        v = img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        return np.where(inside, v, 0.0)

    out = (
        (1.0 - fy) * (1.0 - fx) * corner(y0, x0)
        + (1.0 - fy) * fx * corner(y0, x0 + 1)
        + fy * (1.0 - fx) * corner(y0 + 1, x0)
        + fy * fx * corner(y0 + 1, x0 + 1)
    )
    return float(out) if out.ndim == 0 else out


def rotate(img: np.ndarray, phi: float, center: tuple[float, float] | None = None) -> np.ndarray:
    """Rotate ``img`` by ``phi`` radians CCW about ``center``.

    Output pixel q takes the bilinear sample of the input at the rotated
    coordinate R(phi)(q - c) + c. On square images with the default center,
    multiples of pi/2 are handled by an exact index permutation.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    default_center = center is None
    if default_center:
        center = ((w - 1) / 2.0, (h - 1) / 2.0)

    if default_center and h == w:
        k = phi / (np.pi / 2.0)
        k_round = int(np.round(k))
        if abs(k - k_round) < _QUARTER_TURN_EPS:
            return np.rot90(img, k_round % 4).copy()

    cx, cy = center
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    c, s = np.cos(phi), np.sin(phi)
    dx = xx - cx
    dy = yy - cy
    sx = cx + c * dx - s * dy
    sy = cy + s * dx + c * dy
    return bilinear_sample(img, sx, sy)


def otsu_threshold(img: np.ndarray) -> float:
    """Otsu threshold on a 256-bin histogram, returned in [0, 1].

    Ties in between-class variance resolve to the lowest threshold. A
    constant image returns its own value.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.max() == img.min():
        return float(img.flat[0])
    levels = np.round(img * 255.0).astype(np.int64)
    hist = np.bincount(levels.ravel(), minlength=256).astype(np.float64)
    n = hist.sum()
    w0 = np.cumsum(hist)  # pixels at level <= t
    w1 = n - w0
    cum = np.cumsum(hist * np.arange(256))
    total = cum[-1]
    with np.errstate(invalid="ignore", divide="ignore"):
        mu0 = cum / w0
        mu1 = (total - cum) / w1
        var_b = w0 * w1 * (mu0 - mu1) ** 2
    var_b[(w0 == 0) | (w1 == 0)] = 0.0
    t = int(np.argmax(var_b))  # argmax takes the first (lowest) maximizer
    return t / 255.0


def binarize(img: np.ndarray, t: float) -> np.ndarray:
    """Threshold at ``t``; foreground polarity is the minority side."""
    img = np.asarray(img, dtype=np.float64)
    above = img > t
    if above.sum() * 2 > above.size:
        return ~above
    return above


def dilate(mask: np.ndarray, iterations: int = 1) -> np.ndarray:
    """Binary dilation with a full 3x3 structuring element."""
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    for _ in range(iterations):
        padded = np.pad(mask, 1, mode="constant", constant_values=False)
        out = np.zeros_like(mask)
        for di in range(3):
            for dj in range(3):
                out |= padded[di : di + mask.shape[0], dj : dj + mask.shape[1]]
        mask = out
    return mask


def bounding_box(mask: np.ndarray) -> Rect:
    """Tightest axis-aligned rectangle covering all set bits."""
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise EmptyMaskError("mask has no foreground pixels")
    return Rect(
        x0=int(cols[0]),
        y0=int(rows[0]),
        w=int(cols[-1] - cols[0] + 1),
        h=int(rows[-1] - rows[0] + 1),
    )


def center_resize(img: np.ndarray, box: Rect, side: int = 128) -> np.ndarray:
    """Crop ``box``, scale the longer side to ``side`` preserving aspect
    ratio, and paste centered on a ``side`` x ``side`` zero canvas."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if box.x0 < 0 or box.y0 < 0 or box.x0 + box.w > w or box.y0 + box.h > h:
        raise ValueError(f"{box} outside image bounds {h}x{w}")
    crop = img[box.y0 : box.y0 + box.h, box.x0 : box.x0 + box.w]

    scale = side / max(box.w, box.h)
    out_w = side if box.w >= box.h else max(1, round(box.w * scale))
    out_h = side if box.h >= box.w else max(1, round(box.h * scale))

    # Pixel-center aligned resampling of the crop to (out_h, out_w).
    u = (np.arange(out_w) + 0.5) * (box.w / out_w) - 0.5
    v = (np.arange(out_h) + 0.5) * (box.h / out_h) - 0.5
    xx, yy = np.meshgrid(u, v)
    scaled = bilinear_sample(crop, xx, yy)

    canvas = np.zeros((side, side), dtype=np.float64)
    oy = (side - out_h) // 2
    ox = (side - out_w) // 2
    canvas[oy : oy + out_h, ox : ox + out_w] = scaled
    return canvas


def preprocess(raw: np.ndarray, side: int = 128, dilate_iterations: int = 2) -> np.ndarray:
    """Segmentation pipeline: Otsu threshold, dilation, bounding box, and
    centered resize. Background pixels are zeroed before the crop.

    Raises EmptyMaskError when no foreground is found (e.g. blank frame).
    """
    raw = np.asarray(raw, dtype=np.float64)
    gray = to_grayscale(raw) if raw.ndim == 3 else raw
    t = otsu_threshold(gray)
    mask = binarize(gray, t)
    if not mask.any():
        raise EmptyMaskError("no foreground after thresholding")
    mask = dilate(mask, dilate_iterations)
    box = bounding_box(mask)
    masked = np.where(mask, gray, 0.0)
    return center_resize(masked, box, side)
