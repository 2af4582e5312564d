"""Per-frame light tokenization in HSV space.

Each video frame is reduced to a single (hue, value) token: hue is the mode
of a 180-bin hue histogram, value the weighted mean of the matching 256-bin
value histogram. Both histograms count only pixels whose value component
reaches a threshold, which keeps washed-out pixels from distorting the hue.
Hue uses the halved-degree convention (bin h covers 2h degrees), so it lives
on a 180-cycle; ``hue_distance`` below is the one cyclic metric shared by the
sampler and the evaluation metrics.

The pixel scan has two interchangeable backends: a compiled extension
(``_scan``) and a vectorized numpy fallback (``_scan_numpy``). They produce
bitwise-identical histograms; selection happens at import time and can be
forced to the fallback with the ``STAGELIGHT_NO_EXT`` environment variable.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Union

import numpy as np

from . import _scan_numpy
from .pnm import iter_ppm_dir, iter_raw_frames, read_ppm, write_ppm

if os.environ.get("STAGELIGHT_NO_EXT"):
    _scan_ext = None
else:
    try:
        from . import _scan as _scan_ext
    except ImportError:
        _scan_ext = None

BACKEND = "compiled" if _scan_ext is not None else "numpy"

HUE_BINS = 180
VALUE_BINS = 256
DEFAULT_V_THRESHOLD = 60  # mid-low member of the published {0, 30, ..., 240} set

__all__ = [
    "BACKEND",
    "DEFAULT_V_THRESHOLD",
    "HUE_BINS",
    "VALUE_BINS",
    "RgbFrame",
    "FrameHistograms",
    "LightToken",
    "LightSequence",
    "rgb_to_hsv",
    "hsv_to_rgb",
    "frame_histograms",
    "tokenize_frame",
    "hue_distance",
    "value_distance",
    "extract_sequence",
    "histogram_backends",
    "read_ppm",
    "write_ppm",
    "iter_ppm_dir",
    "iter_raw_frames",
]


@dataclass(frozen=True)
class RgbFrame:
    """One 8-bit RGB frame, pixels stored row-major as a (height, width, 3) array."""

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"frame dimensions must be >= 1, got {self.width}x{self.height}")
        px = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if px.shape != (self.height, self.width, 3):
            raise ValueError(
                f"pixel array shape {px.shape} does not match {self.height}x{self.width}x3"
            )
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_bytes(cls, width: int, height: int, data: bytes) -> "RgbFrame":
        if len(data) != 3 * width * height:
            raise ValueError(
                f"expected {3 * width * height} bytes for {width}x{height}, got {len(data)}"
            )
        arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3)
        return cls(width, height, arr)

    def flat_pixels(self) -> np.ndarray:
        """(N, 3) C-contiguous uint8 view used by the scan backends."""
        return self.pixels.reshape(-1, 3)


class LightToken(NamedTuple):
    """One frame's light state: cyclic hue bin in [0, 179], value bin in [0, 255]."""

    hue: int
    value: int


@dataclass(frozen=True)
class FrameHistograms:
    """Thresholded hue/value histograms of one frame.

    ``fallback`` is set when no pixel reached ``v_threshold`` and the counts
    were recomputed with threshold 0 so that a token still exists.
    """

    hue: np.ndarray
    value: np.ndarray
    v_threshold: int
    fallback: bool = False

    def total(self) -> int:
        return int(self.value.sum())


@dataclass
class LightSequence:
    """Ordered per-frame light tokens at a fixed frame rate (default 10 Hz)."""

    tokens: list = field(default_factory=list)
    frame_rate: float = 10.0

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[LightToken]:
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    def hue_array(self) -> np.ndarray:
        return np.array([t.hue for t in self.tokens], dtype=np.int64)

    def value_array(self) -> np.ndarray:
        return np.array([t.value for t in self.tokens], dtype=np.int64)

    @classmethod
    def from_arrays(cls, hues, values, frame_rate: float = 10.0) -> "LightSequence":
        hues = np.asarray(hues)
        values = np.asarray(values)
        if hues.shape != values.shape:
            raise ValueError("hue and value arrays must have equal length")
        toks = [LightToken(int(h), int(v)) for h, v in zip(hues, values)]
        return cls(toks, frame_rate)


def _check_channel(name: str, x: int, hi: int) -> int:
    x = int(x)
    if not 0 <= x <= hi:
        raise ValueError(f"{name} must be in [0, {hi}], got {x}")
    return x


def rgb_to_hsv(red: int, green: int, blue: int) -> tuple:
    """Convert one 8-bit RGB pixel to (hue, saturation, value).

    Hue is the halved-degree bin round(degrees / 2) mod 180; saturation and
    value are 0-255. Gray pixels (saturation 0) map to hue 0. All arithmetic
    is integer (round half up), so every backend reproduces it exactly.
    """
    r = _check_channel("red", red, 255)
    g = _check_channel("green", green, 255)
    b = _check_channel("blue", blue, 255)
    mx = max(r, g, b)
    mn = min(r, g, b)
    delta = mx - mn
    v = mx
    s = 0 if mx == 0 else (510 * delta + mx) // (2 * mx)
    if delta == 0:
        h = 0
    else:
        if mx == r:
            num = 30 * (g - b)
        elif mx == g:
            num = 30 * (b - r) + 60 * delta
        else:
            num = 30 * (r - g) + 120 * delta
        h = ((2 * num + delta) // (2 * delta)) % 180
    return h, s, v


def hsv_to_rgb(hue: int, saturation: int, value: int) -> tuple:
    """Inverse-direction conversion using the same halved-degree hue convention."""
    h = _check_channel("hue", hue, 179)
    s = _check_channel("saturation", saturation, 255)
    v = _check_channel("value", value, 255)
    if s == 0:
        return v, v, v
    degrees = 2 * h
    sector = degrees // 60
    f = (degrees % 60) / 60.0
    sf = s / 255.0
    p = int(v * (1.0 - sf) + 0.5)
    q = int(v * (1.0 - sf * f) + 0.5)
    t = int(v * (1.0 - sf * (1.0 - f)) + 0.5)
    if sector == 0:
        return v, t, p
    if sector == 1:
        return q, v, p
    if sector == 2:
        return p, v, t
    if sector == 3:
        return p, q, v
    if sector == 4:
        return t, p, v
    return v, p, q


def histogram_backends() -> dict:
    """Available scan backends, keyed by name (used by tests and benchmarks)."""
    backends = {"numpy": _scan_numpy.histogram_counts}
    if _scan_ext is not None:
        backends["compiled"] = _scan_ext.histogram_counts
    return backends


def _scan(pixels: np.ndarray, v_threshold: int):
    if _scan_ext is not None:
        return _scan_ext.histogram_counts(pixels, v_threshold)
    return _scan_numpy.histogram_counts(pixels, v_threshold)


def frame_histograms(frame: RgbFrame, v_threshold: int = DEFAULT_V_THRESHOLD) -> FrameHistograms:
    """Hue/value histograms over pixels with value >= ``v_threshold``.

    If the threshold filters out every pixel, the histograms are recomputed
    with threshold 0 and the result is flagged as a fallback.
    """
    thr = _check_channel("v_threshold", v_threshold, 255)
    hue_counts, value_counts = _scan(frame.flat_pixels(), thr)
    fallback = False
    if int(value_counts.sum()) == 0:
        hue_counts, value_counts = _scan(frame.flat_pixels(), 0)
        fallback = True
    return FrameHistograms(hue=hue_counts, value=value_counts, v_threshold=thr, fallback=fallback)


def token_from_histograms(hists: FrameHistograms) -> LightToken:
    """Mode of the hue histogram (smallest bin on ties) and the round-half-up
    weighted mean of the value histogram."""
    hue = int(np.argmax(hists.hue))
    s0 = int(hists.value.sum())
    s1 = int(np.arange(VALUE_BINS, dtype=np.int64) @ hists.value)
    value = (2 * s1 + s0) // (2 * s0)
    return LightToken(hue, int(value))


def tokenize_frame(frame: RgbFrame, v_threshold: int = DEFAULT_V_THRESHOLD) -> LightToken:
    return token_from_histograms(frame_histograms(frame, v_threshold))


def hue_distance(h1, h2):
    """Cyclic distance on the 180-bin hue circle: min(|d|, 180 - |d|).

    Accepts ints or integer arrays; out-of-range input is a contract violation.
    """
    a = np.asarray(h1)
    b = np.asarray(h2)
    if a.min() < 0 or a.max() > 179 or b.min() < 0 or b.max() > 179:
        raise ValueError("hue values must be in [0, 179]")
    d = np.abs(a - b)
    out = np.minimum(d, 180 - d)
    if np.isscalar(h1) and np.isscalar(h2):
        return int(out)
    return out


def value_distance(v1, v2):
    """Absolute difference of value bins."""
    a = np.asarray(v1)
    b = np.asarray(v2)
    if a.min() < 0 or a.max() > 255 or b.min() < 0 or b.max() > 255:
        raise ValueError("value bins must be in [0, 255]")
    out = np.abs(a - b)
    if np.isscalar(v1) and np.isscalar(v2):
        return int(out)
    return out


def extract_sequence(
    frames: Iterable[RgbFrame],
    v_threshold: int = DEFAULT_V_THRESHOLD,
    frame_rate: float = 10.0,
) -> LightSequence:
    """Tokenize an ordered frame stream; all frames must share dimensions."""
    tokens = []
    dims: Union[tuple, None] = None
    for i, frame in enumerate(frames):
        if dims is None:
            dims = (frame.width, frame.height)
        elif (frame.width, frame.height) != dims:
            raise ValueError(
                f"frame {i}: dimensions {frame.width}x{frame.height} differ from "
                f"first frame {dims[0]}x{dims[1]}"
            )
        tokens.append(tokenize_frame(frame, v_threshold))
    if not tokens:
        raise ValueError("empty frame stream")
    return LightSequence(tokens, frame_rate)
