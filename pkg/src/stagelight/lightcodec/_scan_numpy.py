"""Vectorized pixel scan. Must stay bitwise-identical to the compiled kernel."""

import numpy as np


def histogram_counts(pixels: np.ndarray, v_threshold: int):
    """Hue/value histograms over pixels whose value component >= v_threshold.

    pixels: (N, 3) uint8. Returns (hue_counts[180], value_counts[256]) int64.
    """
    p = pixels.astype(np.int64)
    r, g, b = p[:, 0], p[:, 1], p[:, 2]
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    delta = mx - mn
    # branch order r, g, b matches rgb_to_hsv when channels tie for the max
    num = np.where(
        mx == r,
        30 * (g - b),
        np.where(mx == g, 30 * (b - r) + 60 * delta, 30 * (r - g) + 120 * delta),
    )
    den = np.maximum(2 * delta, 1)
    hue = np.where(delta == 0, 0, ((2 * num + delta) // den) % 180)
    keep = mx >= v_threshold
    hue_counts = np.bincount(hue[keep], minlength=180)
    value_counts = np.bincount(mx[keep], minlength=256)
    return hue_counts.astype(np.int64), value_counts.astype(np.int64)
