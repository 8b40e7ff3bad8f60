"""Demonstration: the segmentation pipeline on a messy raw frame.

Builds a synthetic 'camera' frame — an off-center, dim object on a noisy
gray background — and walks it through each preprocessing stage: Otsu
threshold, minority-polarity binarization, dilation, bounding box, and
centered resize to 128x128. Writes before/after PGM files next to this
script for inspection.

Run:  python3 demos/02_preprocessing.py
"""
from pathlib import Path

import numpy as np

from s2pnet import binarize, bounding_box, dilate, otsu_threshold, preprocess
from s2pnet.data import save_pgm

rng = np.random.default_rng(3)

# A 96x160 frame: noisy background around 0.35, hexagon-ish blob near a corner.
frame = np.clip(rng.normal(0.35, 0.02, (96, 160)), 0.0, 1.0)
yy, xx = np.mgrid[0:96, 0:160]
blob = (np.abs(xx - 115) + np.abs(yy - 30) * 1.3) < 22
frame[blob] = np.clip(0.85 + rng.normal(0.0, 0.02, int(blob.sum())), 0.0, 1.0)

t = otsu_threshold(frame)
mask = binarize(frame, t)
grown = dilate(mask, 2)
box = bounding_box(grown)
clean = preprocess(frame)

print(f"otsu threshold        : {t:.4f} (background ~0.35, object ~0.85)")
print(f"foreground pixels     : {int(mask.sum())} raw, {int(grown.sum())} after 2 dilations")
print(f"bounding box          : x0={box.x0} y0={box.y0} w={box.w} h={box.h}")
print(f"preprocessed output   : {clean.shape}, values in [{clean.min():.3f}, {clean.max():.3f}]")

out_dir = Path(__file__).parent
save_pgm(frame, out_dir / "demo_raw_frame.pgm")
save_pgm(clean, out_dir / "demo_preprocessed.pgm")
print(f"wrote {out_dir / 'demo_raw_frame.pgm'} and {out_dir / 'demo_preprocessed.pgm'}")
