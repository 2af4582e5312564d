"""The SBL1 dataset container and record assembly.

Binary layout (all integers little-endian):

    bytes 0-3   magic "SBL1"
    u32         format version
    u32         record count
    per record, directory entry:
        u16 + bytes   record id (UTF-8)
        u16 + bytes   show id (UTF-8)
        u32           T (frames)
        u32           F (feature dim)
        u8            frame rate (Hz)
        u16 + bytes   feature kind (UTF-8)
        u16 + bytes   optional per-record metadata (JSON, empty if none)
        u64 x 3       byte offsets of the feature / hue / value blocks
    blocks, tightly packed in record order:
        features      T*F little-endian float32, row-major
        hue tokens    T   u16
        value tokens  T   u8

Writing is deterministic, so rebuilding a container from identical inputs is
bitwise identical. Loading validates the magic, version, directory bounds and
block sizes and raises DataError instead of crashing on corrupt files.
"""

from __future__ import annotations

import csv
import io
import json
import struct
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional

import numpy as np

from .errors import DataError
from .lightcodec import LightSequence

MAGIC = b"SBL1"
VERSION = 1
MIN_FRAMES = 200  # records shorter than 20 s at 10 Hz are dropped
WINDOW_FRAMES = 1024


@dataclass
class DatasetRecord:
    record_id: str
    show_id: str
    features: np.ndarray  # (T, F) float32
    hue: np.ndarray       # (T,) uint16, values < 180
    value: np.ndarray     # (T,) uint8
    frame_rate: int = 10
    feature_kind: str = "logmel"
    metadata: Optional[dict] = None

    def __post_init__(self):
        if not self.record_id:
            raise ValueError("record id must be non-empty")
        if not self.show_id:
            raise ValueError("show id must be non-empty")
        feats = np.ascontiguousarray(np.asarray(self.features), dtype=np.float32)
        hue = np.ascontiguousarray(np.asarray(self.hue), dtype=np.uint16)
        value = np.ascontiguousarray(np.asarray(self.value), dtype=np.uint8)
        if feats.ndim != 2:
            raise ValueError(f"features must be (T, F), got shape {feats.shape}")
        t = feats.shape[0]
        if hue.shape != (t,) or value.shape != (t,):
            raise ValueError("feature, hue and value blocks must share T")
        if t and int(hue.max()) > 179:
            raise ValueError("hue tokens must be < 180")
        self.features, self.hue, self.value = feats, hue, value

    @property
    def frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def light_sequence(self) -> LightSequence:
        return LightSequence.from_arrays(self.hue, self.value, float(self.frame_rate))


@dataclass
class DatasetContainer:
    records: List[DatasetRecord] = field(default_factory=list)
    version: int = VERSION

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def get(self, record_id: str) -> DatasetRecord:
        for rec in self.records:
            if rec.record_id == record_id:
                return rec
        raise KeyError(record_id)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string field longer than 65535 bytes")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, buf: bytes, name: str):
        self.buf = buf
        self.pos = 0
        self.name = name

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise DataError(f"{self.name}: truncated container")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u16()).decode("utf-8")


def save_container(path, container: DatasetContainer) -> None:
    entries = []
    blocks = []
    for rec in container.records:
        feat = rec.features.astype("<f4").tobytes()
        hue = rec.hue.astype("<u2").tobytes()
        value = rec.value.astype("<u1").tobytes()
        meta = json.dumps(rec.metadata, sort_keys=True) if rec.metadata else ""
        head = (
            _pack_str(rec.record_id)
            + _pack_str(rec.show_id)
            + struct.pack("<II", rec.frames, rec.dim)
            + struct.pack("<B", rec.frame_rate)
            + _pack_str(rec.feature_kind)
            + _pack_str(meta)
        )
        entries.append(head)
        blocks.append((feat, hue, value))
    directory_size = sum(len(e) + 24 for e in entries)  # 3 u64 offsets per entry
    offset = 12 + directory_size
    out = io.BytesIO()
    out.write(MAGIC + struct.pack("<II", container.version, len(container.records)))
    body = io.BytesIO()
    for head, (feat, hue, value) in zip(entries, blocks):
        out.write(head)
        out.write(struct.pack("<QQQ", offset, offset + len(feat), offset + len(feat) + len(hue)))
        body.write(feat + hue + value)
        offset += len(feat) + len(hue) + len(value)
    with open(path, "wb") as fh:
        fh.write(out.getvalue() + body.getvalue())


def load_container(path) -> DatasetContainer:
    with open(path, "rb") as fh:
        buf = fh.read()
    rd = _Reader(buf, str(path))
    if rd.take(4) != MAGIC:
        raise DataError(f"{path}: bad magic (not an SBL1 container)")
    version = rd.u32()
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    count = rd.u32()
    headers = []
    for _ in range(count):
        rid = rd.string()
        sid = rd.string()
        t = rd.u32()
        f = rd.u32()
        frame_rate = rd.u8()
        kind = rd.string()
        meta_raw = rd.string()
        offs = (rd.u64(), rd.u64(), rd.u64())
        headers.append((rid, sid, t, f, frame_rate, kind, meta_raw, offs))
    records = []
    for rid, sid, t, f, frame_rate, kind, meta_raw, offs in headers:
        sizes = (4 * t * f, 2 * t, t)
        arrays = []
        for off, size in zip(offs, sizes):
            if off + size > len(buf) or off < 12:
                raise DataError(f"{path}: record {rid!r} block offsets out of bounds")
            arrays.append(buf[off : off + size])
        feats = np.frombuffer(arrays[0], dtype="<f4").reshape(t, f)
        hue = np.frombuffer(arrays[1], dtype="<u2")
        value = np.frombuffer(arrays[2], dtype="<u1")
        try:
            meta = json.loads(meta_raw) if meta_raw else None
        except ValueError as exc:
            raise DataError(f"{path}: record {rid!r} metadata is not JSON") from exc
        try:
            records.append(
                DatasetRecord(rid, sid, feats, hue, value, frame_rate, kind, meta)
            )
        except ValueError as exc:
            raise DataError(f"{path}: record {rid!r} invalid ({exc})") from exc
    return DatasetContainer(records, version)


# ---------------------------------------------------------------------------
# Record assembly

def pair_record(
    record_id: str,
    show_id: str,
    light: LightSequence,
    features,
    feature_kind: str = "logmel",
    frame_rate: int = 10,
    metadata: Optional[dict] = None,
) -> Optional[DatasetRecord]:
    """Reconcile one light sequence with one feature matrix into a record.

    The two modalities must agree in length to within one frame; both are
    truncated to the shorter one. Records under MIN_FRAMES frames are
    dropped (returns None).
    """
    data = features.data if isinstance(getattr(features, "data", None), np.ndarray) else np.asarray(features)
    t_video = len(light)
    t_audio = data.shape[0]
    if abs(t_video - t_audio) > 1:
        raise DataError(
            f"record {record_id!r}: video has {t_video} frames but audio has "
            f"{t_audio}; more than one frame apart"
        )
    t = min(t_video, t_audio)
    if t < MIN_FRAMES:
        warnings.warn(
            f"record {record_id!r} dropped: {t} frames is under the "
            f"{MIN_FRAMES}-frame minimum",
            stacklevel=2,
        )
        return None
    hues = light.hue_array()[:t]
    values = light.value_array()[:t]
    return DatasetRecord(
        record_id, show_id, data[:t], hues, values, frame_rate, feature_kind, metadata
    )


def build_dataset(records: Iterable[Optional[DatasetRecord]]) -> DatasetContainer:
    """Collect assembled records (Nones from dropped pairs are skipped)."""
    kept = [r for r in records if r is not None]
    return DatasetContainer(kept)


def window_sample(record: DatasetRecord, window: int = WINDOW_FRAMES, seed=0) -> DatasetRecord:
    """Uniform random contiguous slice of at most ``window`` frames.

    Records at or under the window pass through unchanged; the start frame is
    deterministic for a given seed (an int seed or a numpy Generator).
    """
    t = record.frames
    if t <= window:
        return record
    rng = np.random.default_rng(seed)
    start = int(rng.integers(0, t - window + 1))
    return replace(
        record,
        features=record.features[start : start + window],
        hue=record.hue[start : start + window],
        value=record.value[start : start + window],
    )


# ---------------------------------------------------------------------------
# Light CSV (frame,hue,value)

def write_light_csv(path, sequence: LightSequence) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "hue", "value"])
        for i, tok in enumerate(sequence):
            writer.writerow([i, tok.hue, tok.value])


def read_light_csv(path, frame_rate: float = 10.0) -> LightSequence:
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "hue", "value"]:
            raise DataError(f"{path}: expected header frame,hue,value")
        hues, values = [], []
        for row in reader:
            if len(row) != 3:
                raise DataError(f"{path}: malformed row {row!r}")
            hues.append(int(row[1]))
            values.append(int(row[2]))
    if not hues:
        raise DataError(f"{path}: no light rows")
    return LightSequence.from_arrays(hues, values, frame_rate)
