"""Render a light sequence as a strip image: one column per frame.

Column color is HSV(2*hue degrees, 100% saturation, value/255) converted to
RGB and written as a binary P6 pixmap, so the strip can be re-read and
re-tokenized with the frame tools.
"""

from __future__ import annotations

import numpy as np

from .lightcodec import LightSequence, hsv_to_rgb
from .lightcodec.pnm import write_ppm


def strip_pixels(sequence: LightSequence, height: int = 32) -> np.ndarray:
    if height < 1:
        raise ValueError("height must be >= 1")
    if len(sequence) == 0:
        raise ValueError("cannot render an empty sequence")
    columns = np.array(
        [hsv_to_rgb(tok.hue, 255, tok.value) for tok in sequence], dtype=np.uint8
    )
    return np.broadcast_to(columns[None, :, :], (height, len(sequence), 3)).copy()


def render_strip(sequence: LightSequence, height: int, out_path) -> None:
    write_ppm(out_path, strip_pixels(sequence, height))
