"""Demonstration: rotation-invariant features from the polar-spectral front end.

Renders one synthetic shape per class, rotates each through a range of
angles, and shows that the 64-dimensional feature vector barely moves —
exactly zero movement (up to roundoff) at multiples of 90 degrees, and only
interpolation-level drift elsewhere. Also prints the dominant angular
harmonic per class, which mirrors each shape's rotational symmetry order.

Run:  python3 demos/01_spectral_invariance.py
"""
import numpy as np

from s2pnet import CLASS_NAMES, build_polar_grid, extract_features, gen_shape, rotate

grid = build_polar_grid()
rng = np.random.default_rng(0)

print("Per-class feature drift under rotation (relative to feature scale)")
print(f"{'class':<16} {'90deg':>10} {'180deg':>10} {'45deg':>10} {'137deg':>10} {'dominant k':>11}")
for label, name in enumerate(CLASS_NAMES):
    img = gen_shape(label, rng)
    base = extract_features(img, grid)
    scale = np.abs(base).max()

    def drift(deg):
        rot = extract_features(rotate(img, np.deg2rad(deg)), grid)
        return np.abs(rot - base).max() / scale

    dominant = int(np.argmax(base[1:32]) + 1)
    print(f"{name:<16} {drift(90):>10.2e} {drift(180):>10.2e} "
          f"{drift(45):>10.2e} {drift(137):>10.2e} {dominant:>11d}")

print()
print("Multiples of 90 degrees are exact lattice permutations of the pixel")
print("grid, so the polar map shifts by a whole number of columns and the")
print("magnitude spectrum is unchanged to machine precision. Other angles")
print("add only bilinear interpolation error. The dominant harmonic reflects")
print("each shape's symmetry: 6 for the hex nut, 4 for the cube face, and")
print("the washer concentrates everything in k=0 (full circular symmetry).")
