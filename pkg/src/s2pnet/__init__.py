"""Rotation-invariant image classification via polar-spectral features.

The library pairs a parameter-free invariant feature extractor (polar
resampling + angular FFT magnitudes + radial pooling) with a tiny trainable
MLP, alongside a conventional CNN baseline, a synthetic shape dataset, and a
12-angle rotation evaluation protocol.
"""

from .imaging import (
    EmptyMaskError, Rect, bilinear_sample, binarize, bounding_box, center_resize,
    dilate, otsu_threshold, preprocess, rotate, to_grayscale,
)
from .spectral import (
    PolarGrid, build_polar_grid, extract_features, harmonic_signature,
    polar_transform, rfft_mag, spectral_pool,
)
from .models import (
    Checkpoint, Model, TrainConfig, apply_checkpoint, build_s2p_classifier,
    build_simple_cnn, load_checkpoint, predict, save_checkpoint, train,
)
from .data import (
    CLASS_NAMES, FULL_DATA_AUGMENT, IDENTITY_AUGMENT, LOW_DATA_AUGMENT,
    AugmentConfig, DatasetSplit, LabeledImage, augment, gen_dataset, gen_shape,
    load_dataset, load_pgm, save_dataset, save_pgm, split_low_data,
    split_stratified,
)
from .evaluate import ANGLES_DEG, AngleSweepReport, angle_sweep, emit_report, summarize

__version__ = "0.1.0"
