"""Parameter-free rotation-invariant front end.

An image is resampled onto a polar (radius, angle) grid, each radius ring is
transformed with a 1-D real FFT along the angle axis, and the magnitude
spectrum is pooled over radii into a fixed-length feature vector. Rotating
the input cyclically shifts the polar rings, which only changes the phase of
the Fourier coefficients, so the magnitudes (and hence the features) are
unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imaging import bilinear_sample

DEFAULT_SIDE = 128
DEFAULT_RADII = 64
DEFAULT_ANGLES = 128
DEFAULT_BINS = 32


@dataclass(frozen=True, eq=False)
class PolarGrid:
    """Immutable polar sampling grid for a square ``side`` x ``side`` image.

    Radii are bin centers (i + 0.5) / R * (side / 2): no duplicate samples
    at r = 0, and the outermost ring stays strictly inside the raster.
    """

    side: int
    radii: np.ndarray = field(repr=False)  # (R,)
    angles: np.ndarray = field(repr=False)  # (Theta,)
    xs: np.ndarray = field(repr=False)  # (R, Theta)
    ys: np.ndarray = field(repr=False)  # (R, Theta)

    @property
    def r_count(self) -> int:
        return self.radii.shape[0]

    @property
    def theta_count(self) -> int:
        return self.angles.shape[0]


def build_polar_grid(side: int = DEFAULT_SIDE, r_count: int = DEFAULT_RADII,
                     theta_count: int = DEFAULT_ANGLES) -> PolarGrid:
    if side < 2 or side % 2 != 0:
        raise ValueError(f"side must be even and >= 2, got {side}")
    if r_count < 2 or theta_count < 2:
        raise ValueError("r_count and theta_count must be >= 2")
    radii = (np.arange(r_count) + 0.5) / r_count * (side / 2.0)
    angles = 2.0 * np.pi * np.arange(theta_count) / theta_count
    cx = cy = (side - 1) / 2.0
    xs = cx + radii[:, None] * np.cos(angles)[None, :]
    ys = cy + radii[:, None] * np.sin(angles)[None, :]
    for a in (radii, angles, xs, ys):
        a.setflags(write=False)
    return PolarGrid(side=side, radii=radii, angles=angles, xs=xs, ys=ys)


def polar_transform(img: np.ndarray, grid: PolarGrid) -> np.ndarray:
    """Resample ``img`` onto ``grid``; returns an (R, Theta) array."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape != (grid.side, grid.side):
        raise ValueError(f"image shape {img.shape} does not match grid side {grid.side}")
    return bilinear_sample(img, grid.xs, grid.ys)


def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis.

    Unnormalized forward convention X[k] = sum_n x[n] exp(-2 pi i k n / N).
    The length must be a power of two. Vectorized over leading axes.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError(f"length must be a power of two, got {n}")
    y = x[..., _bit_reversal(n)].astype(np.complex128)
    span = 1
    while span < n:
        tw = np.exp(-1j * np.pi * np.arange(span) / span)
        blocks = y.reshape(y.shape[:-1] + (n // (2 * span), 2, span))
        even = blocks[..., 0, :]
        odd = blocks[..., 1, :] * tw
        y = np.concatenate([even + odd, even - odd], axis=-1).reshape(y.shape)
        span *= 2
    return y


def rfft_mag(signal: np.ndarray) -> np.ndarray:
    """Magnitudes |X[k]| for k = 0 .. N/2 of a real power-of-two signal."""
    signal = np.asarray(signal, dtype=np.float64)
    n = signal.shape[-1]
    return np.abs(fft_radix2(signal)[..., : n // 2 + 1])


def harmonic_signature(polar_map: np.ndarray, k_max: int = DEFAULT_BINS) -> np.ndarray:
    """Per-radius magnitude spectrum truncated to the first ``k_max`` bins."""
    polar_map = np.asarray(polar_map, dtype=np.float64)
    theta = polar_map.shape[-1]
    if not 1 <= k_max <= theta // 2 + 1:
        raise ValueError(f"k_max={k_max} out of range for {theta} angle samples")
    return rfft_mag(polar_map)[..., :k_max]


def spectral_pool(signature: np.ndarray) -> np.ndarray:
    """Pool an (R, K) signature into [mean_0..mean_{K-1}, max_0..max_{K-1}]."""
    signature = np.asarray(signature, dtype=np.float64)
    return np.concatenate([signature.mean(axis=0), signature.max(axis=0)])


def extract_features(img: np.ndarray, grid: PolarGrid, k_max: int = DEFAULT_BINS) -> np.ndarray:
    """Full front end: polar transform, harmonic signature, spectral pool."""
    return spectral_pool(harmonic_signature(polar_transform(img, grid), k_max))
