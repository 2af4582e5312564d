# cython: boundscheck=False, wraparound=False, cdivision=True
# Compiled pixel scan; output must match _scan_numpy.histogram_counts bit for bit.

import numpy as np

cimport numpy as cnp


def histogram_counts(const unsigned char[:, ::1] pixels, int v_threshold):
    cdef Py_ssize_t n = pixels.shape[0]
    hue_arr = np.zeros(180, dtype=np.int64)
    value_arr = np.zeros(256, dtype=np.int64)
    cdef cnp.int64_t[::1] hue_counts = hue_arr
    cdef cnp.int64_t[::1] value_counts = value_arr
    cdef Py_ssize_t i
    cdef long r, g, b, mx, mn, delta, num, q, den, h
    for i in range(n):
        r = pixels[i, 0]
        g = pixels[i, 1]
        b = pixels[i, 2]
        mx = r if r >= g else g
        if b > mx:
            mx = b
        if mx < v_threshold:
            continue
        mn = r if r <= g else g
        if b < mn:
            mn = b
        delta = mx - mn
        if delta == 0:
            h = 0
        else:
            if mx == r:
                num = 30 * (g - b)
            elif mx == g:
                num = 30 * (b - r) + 60 * delta
            else:
                num = 30 * (r - g) + 120 * delta
            q = 2 * num + delta
            den = 2 * delta
            # cdivision truncates; emulate floor division for negative numerators
            if q >= 0:
                h = q // den
            else:
                h = -((-q + den - 1) // den)
            h = h % 180
            if h < 0:
                h += 180
        hue_counts[h] += 1
        value_counts[mx] += 1
    return hue_arr, value_arr
