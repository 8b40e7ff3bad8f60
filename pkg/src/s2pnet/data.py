"""Synthetic shape dataset, PGM file I/O, splits, and augmentation.

The four classes mirror common industrial parts and their rotational
symmetry orders: a hexagonal nut (6-fold), an asymmetric connector (1-fold),
a circular washer (fully symmetric), and a cube face (4-fold). Shapes are
rendered antialiased on a zero background at 128x128, already centered, so
generated datasets need no further preprocessing.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import bilinear_sample

CLASS_NAMES = ("mutter", "stecker", "unterlegscheibe", "wuerfel")
IMAGE_SIDE = 128

# Rendering geometry (pixels, before the per-sample +-10% size jitter).
_BASE_RADIUS = 40.0
_MAX_CENTER_OFFSET = 1.0
_ORIENTATION_JITTER = 0.12  # radians about the canonical pose
_SUPERSAMPLE = 4


class FormatError(ValueError):
    """Raised for malformed PGM files."""


@dataclass(frozen=True)
class LabeledImage:
    image: np.ndarray  # (128, 128) float64 in [0, 1]
    label: int

    def __post_init__(self):
        if not 0 <= self.label < len(CLASS_NAMES):
            raise ValueError(f"label {self.label} out of range")


@dataclass(frozen=True)
class DatasetSplit:
    train: list[LabeledImage]
    test: list[LabeledImage]


# -- shape generation -------------------------------------------------------

def _inside(label: int, x: np.ndarray, y: np.ndarray, size: float) -> np.ndarray:
    """Membership test in the shape's own frame, scaled to outer radius ``size``."""
    s = size / _BASE_RADIUS
    if label == 0:  # mutter: regular hexagon (circumradius 46) with a round hole
        apothem = 46.0 * np.cos(np.pi / 6) * s
        hull = np.ones_like(x, dtype=bool)
        for m in range(3):
            nx, ny = np.cos(m * np.pi / 3), np.sin(m * np.pi / 3)
            hull &= np.abs(x * nx + y * ny) <= apothem
        return hull & (x * x + y * y >= (18.0 * s) ** 2)
    if label == 1:  # stecker: rectangle with one corner notch (1-fold symmetry)
        body = (np.abs(x) <= 34.0 * s) & (np.abs(y) <= 20.0 * s)
        notch = (x >= 14.0 * s) & (y >= 4.0 * s)
        return body & ~notch
    if label == 2:  # unterlegscheibe: annulus
        r2 = x * x + y * y
        return (r2 <= (40.0 * s) ** 2) & (r2 >= (18.0 * s) ** 2)
    if label == 3:  # wuerfel: filled square, corners at radius 40
        half = 40.0 / np.sqrt(2.0) * s
        return (np.abs(x) <= half) & (np.abs(y) <= half)
    raise ValueError(f"unknown label {label}")


def gen_shape(label: int, rng: np.random.Generator) -> np.ndarray:
    """Render one antialiased class shape with jittered pose.

    Jitter: center offset up to 2 px, size +-10%, orientation a small
    wobble about the canonical upright pose, fill intensity in [0.7, 1.0].
    """
    size = _BASE_RADIUS * (1.0 + rng.uniform(-0.1, 0.1))
    offset_r = rng.uniform(0.0, _MAX_CENTER_OFFSET)
    offset_phi = rng.uniform(0.0, 2.0 * np.pi)
    cx = (IMAGE_SIDE - 1) / 2.0 + offset_r * np.cos(offset_phi)
    cy = (IMAGE_SIDE - 1) / 2.0 + offset_r * np.sin(offset_phi)
    alpha = rng.uniform(-_ORIENTATION_JITTER, _ORIENTATION_JITTER)
    intensity = rng.uniform(0.7, 1.0)

    n = IMAGE_SIDE * _SUPERSAMPLE
    coords = (np.arange(n) + 0.5) / _SUPERSAMPLE - 0.5
    xx = coords[None, :] - cx
    yy = coords[:, None] - cy
    # Rotate sample coordinates into the shape frame.
    ca, sa = np.cos(alpha), np.sin(alpha)
    xs = ca * xx + sa * yy
    ys = -sa * xx + ca * yy
    hit = _inside(label, xs, ys, size)
    coverage = hit.reshape(IMAGE_SIDE, _SUPERSAMPLE, IMAGE_SIDE, _SUPERSAMPLE).mean(axis=(1, 3))
    return coverage * intensity


def gen_dataset(per_class: int, seed: int = 0) -> list[LabeledImage]:
    """Balanced synthetic dataset: ``per_class`` images for each class,
    deterministic per seed (one RNG substream per sample)."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    out = []
    for label in range(len(CLASS_NAMES)):
        for idx in range(per_class):
            rng = np.random.default_rng(np.random.SeedSequence([seed, label, idx]))
            out.append(LabeledImage(image=gen_shape(label, rng), label=label))
    return out


# -- PGM I/O -----------------------------------------------------------------

def save_pgm(img: np.ndarray, path) -> None:
    """Write a binary (P5) PGM with maxval 255."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def _next_token(f) -> bytes:
    """Read one whitespace-delimited header token, skipping # comments."""
    token = b""
    while True:
        c = f.read(1)
        if not c:
            raise FormatError("unexpected end of PGM header")
        if c == b"#":
            while c not in (b"\n", b""):
                c = f.read(1)
            continue
        if c.isspace():
            if token:
                return token
            continue
        token += c


def load_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM, rescaling values by maxval into [0, 1]."""
    with open(path, "rb") as f:
        magic = _next_token(f)
        if magic != b"P5":
            raise FormatError(f"unsupported PGM magic {magic!r} (only binary P5 is handled)")
        try:
            w = int(_next_token(f))
            h = int(_next_token(f))
            maxval = int(_next_token(f))
        except ValueError as exc:
            raise FormatError(f"bad PGM header field: {exc}") from exc
        if w < 1 or h < 1 or not 0 < maxval < 65536:
            raise FormatError(f"invalid PGM dimensions {w}x{h} or maxval {maxval}")
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        count = w * h
        raw = f.read(count * dtype.itemsize if maxval >= 256 else count)
        expected = count * (2 if maxval >= 256 else 1)
        if len(raw) != expected:
            raise FormatError(f"truncated PGM payload: got {len(raw)} of {expected} bytes")
        values = np.frombuffer(raw, dtype=dtype).reshape(h, w)
    return values.astype(np.float64) / maxval


def save_dataset(images: list[LabeledImage], root) -> list[Path]:
    """Write ``<root>/<class_name>/<index>.pgm``; returns written paths."""
    root = Path(root)
    written = []
    counters = [0] * len(CLASS_NAMES)
    for item in images:
        d = root / CLASS_NAMES[item.label]
        d.mkdir(parents=True, exist_ok=True)
        path = d / f"{counters[item.label]:04d}.pgm"
        counters[item.label] += 1
        save_pgm(item.image, path)
        written.append(path)
    return written


def load_dataset(root) -> list[LabeledImage]:
    """Load a class-directory dataset; alphabetical directory order defines
    the label ids."""
    root = Path(root)
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise FileNotFoundError(f"no class directories under {root}")
    out = []
    for label, d in enumerate(class_dirs):
        for path in sorted(d.glob("*.pgm")):
            out.append(LabeledImage(image=load_pgm(path), label=label))
    return out


# -- splits -------------------------------------------------------------------

def _by_class(dataset: list[LabeledImage]) -> dict[int, list[LabeledImage]]:
    groups: dict[int, list[LabeledImage]] = {}
    for item in dataset:
        groups.setdefault(item.label, []).append(item)
    return groups


def split_low_data(dataset: list[LabeledImage], n_per_class: int = 3, seed: int = 0) -> DatasetSplit:
    """Seeded shuffle per class; first ``n_per_class`` go to train."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA0]))
    groups = _by_class(dataset)
    train, test = [], []
    for label in sorted(groups):
        group = groups[label]
        if len(group) < n_per_class + 1:
            raise ValueError(f"class {label} has only {len(group)} images, need {n_per_class + 1}")
        order = rng.permutation(len(group))
        train += [group[i] for i in order[:n_per_class]]
        test += [group[i] for i in order[n_per_class:]]
    return DatasetSplit(train=train, test=test)


def split_stratified(dataset: list[LabeledImage], train_frac: float = 0.75, seed: int = 0) -> DatasetSplit:
    """Per-class proportional split, rounding toward train, test nonempty."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA1]))
    groups = _by_class(dataset)
    train, test = [], []
    for label in sorted(groups):
        group = groups[label]
        if len(group) < 2:
            raise ValueError(f"class {label} needs at least 2 images")
        n_train = min(len(group) - 1, int(np.ceil(train_frac * len(group))))
        order = rng.permutation(len(group))
        train += [group[i] for i in order[:n_train]]
        test += [group[i] for i in order[n_train:]]
    return DatasetSplit(train=train, test=test)


# -- augmentation --------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    """Jitter ranges. Geometric ops resample about the image center; the
    photometric contrast gain pivots on the per-image mean."""

    brightness: float = 0.35  # multiplicative factor in [1-b, 1+b]
    noise_sigma_max: float = 0.04
    scale: tuple[float, float] = (0.88, 1.12)
    translate: float = 0.06  # fraction of the image side, per axis
    contrast: tuple[float, float] = (0.9, 1.1)
    rotation: bool = False  # uniform [0, 2pi) when enabled


IDENTITY_AUGMENT = AugmentConfig(brightness=0.0, noise_sigma_max=0.0, scale=(1.0, 1.0),
                                 translate=0.0, contrast=(1.0, 1.0), rotation=False)
LOW_DATA_AUGMENT = AugmentConfig(rotation=False)
FULL_DATA_AUGMENT = AugmentConfig(rotation=True)


def augment(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """One random augmentation draw: rotation (optional), scale, and
    translation as a single bilinear resample, then brightness, contrast,
    noise, and a final clamp to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape

    phi = rng.uniform(0.0, 2.0 * np.pi) if cfg.rotation else 0.0
    s = rng.uniform(*cfg.scale)
    t = cfg.translate * w
    tx, ty = (rng.uniform(-t, t), rng.uniform(-t, t)) if cfg.translate > 0 else (0.0, 0.0)

    if phi != 0.0 or s != 1.0 or tx != 0.0 or ty != 0.0:
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
        dx = (xx - cx - tx) / s
        dy = (yy - cy - ty) / s
        c, si = np.cos(phi), np.sin(phi)
        img = bilinear_sample(img, cx + c * dx - si * dy, cy + si * dx + c * dy)

    if cfg.brightness > 0:
        img = img * rng.uniform(1.0 - cfg.brightness, 1.0 + cfg.brightness)
    if cfg.contrast != (1.0, 1.0):
        gain = rng.uniform(*cfg.contrast)
        mean = img.mean()
        img = mean + gain * (img - mean)
    if cfg.noise_sigma_max > 0:
        sigma = rng.uniform(0.0, cfg.noise_sigma_max)
        img = img + rng.normal(0.0, 1.0, img.shape) * sigma
    return np.clip(img, 0.0, 1.0)
