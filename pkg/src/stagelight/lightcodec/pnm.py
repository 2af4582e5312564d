"""Frame ingestion: binary P6 portable pixmaps and raw packed RGB24 streams."""

from __future__ import annotations

import os
from typing import TYPE_CHECKING, Iterator, Optional

import numpy as np

from ..errors import DataError

if TYPE_CHECKING:
    from . import RgbFrame


def _read_ppm_token(buf: bytes, pos: int) -> tuple:
    # skip whitespace and '#' comments between header tokens
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and buf[pos : pos + 1] != b"\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise DataError("truncated PPM header")
    return buf[start:pos], pos


def read_ppm(path) -> "RgbFrame":
    from . import RgbFrame

    with open(path, "rb") as fh:
        buf = fh.read()
    if not buf.startswith(b"P6"):
        raise DataError(f"{path}: not a binary P6 pixmap")
    pos = 2
    try:
        w_tok, pos = _read_ppm_token(buf, pos)
        h_tok, pos = _read_ppm_token(buf, pos)
        maxval_tok, pos = _read_ppm_token(buf, pos)
        width, height, maxval = int(w_tok), int(h_tok), int(maxval_tok)
    except (ValueError, DataError) as exc:
        raise DataError(f"{path}: malformed PPM header ({exc})") from exc
    if maxval != 255:
        raise DataError(f"{path}: only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    data = buf[pos : pos + 3 * width * height]
    if len(data) != 3 * width * height:
        raise DataError(f"{path}: truncated pixel data")
    return RgbFrame.from_bytes(width, height, data)


def write_ppm(path, frame) -> None:
    pixels = frame.pixels if hasattr(frame, "pixels") else np.asarray(frame, dtype=np.uint8)
    height, width = pixels.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (width, height))
        fh.write(pixels.astype(np.uint8).tobytes())


def iter_ppm_dir(directory) -> Iterator["RgbFrame"]:
    """Yield frames from a directory of .ppm files in ascending filename order."""
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".ppm"))
    if not names:
        raise DataError(f"{directory}: no .ppm files found")
    for name in names:
        yield read_ppm(os.path.join(directory, name))


def iter_raw_frames(
    path, width: int, height: int, count: Optional[int] = None
) -> Iterator["RgbFrame"]:
    """Yield frames from a file of packed RGB24 frames (no per-frame header)."""
    from . import RgbFrame

    frame_bytes = 3 * width * height
    size = os.path.getsize(path)
    total = size // frame_bytes
    if count is not None:
        if count > total:
            raise DataError(f"{path}: {count} frames requested but file holds {total}")
        total = count
    elif size % frame_bytes:
        raise DataError(f"{path}: size {size} is not a multiple of frame size {frame_bytes}")
    with open(path, "rb") as fh:
        for _ in range(total):
            data = fh.read(frame_bytes)
            if len(data) != frame_bytes:
                raise DataError(f"{path}: truncated frame data")
            yield RgbFrame.from_bytes(width, height, data)
