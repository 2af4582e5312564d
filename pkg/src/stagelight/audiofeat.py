"""Audio feature extraction aligned to the 10 Hz light frame grid.

All extractors share one framing rule: hop = sample_rate / frame_rate (the
rate must divide evenly), frames are centered with reflect padding, and the
frame count is ceil(samples / hop), so a clip and its video produce the same
number of frames. The model-facing default representation is a 128-band
log-mel matrix; any other (T, F) matrix, including externally computed
embeddings loaded from a feature dump, can stand in because the model
projects features through its own input layer.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .errors import DataError

DB_FLOOR = 1e-10  # power floor so silence yields a finite dB value


@dataclass
class AudioClip:
    """PCM audio in [-1, 1]; samples shaped (n, channels)."""

    sample_rate: int
    samples: np.ndarray

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[1] not in (1, 2):
            raise ValueError(f"samples must be (n,) or (n, 1|2), got shape {s.shape}")
        self.samples = s

    @property
    def channels(self) -> int:
        return self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]

    def mono(self) -> np.ndarray:
        if self.channels != 1:
            raise ValueError("expected a mono clip; call to_mono first")
        return self.samples[:, 0]


@dataclass
class FeatureMatrix:
    """T x F feature sequence on the frame grid."""

    data: np.ndarray
    frame_rate: float = 10.0
    kind: str = ""

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError(f"feature data must be 2-D, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("feature data contains non-finite entries")
        self.data = d

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class FeatureConfig:
    fft_size: int = 2048
    mel_bands: int = 128
    mfcc_coeffs: int = 128
    rolloff_fraction: float = 0.95
    contrast_bands: int = 7
    frame_rate: int = 10

    def __post_init__(self):
        if self.fft_size < 2:
            raise ValueError("fft_size too small")
        if self.mel_bands > self.fft_size // 2 + 1:
            raise ValueError("mel_bands must be <= fft_size/2 + 1")
        if not 1 <= self.mfcc_coeffs <= self.mel_bands:
            raise ValueError("mfcc_coeffs must be in [1, mel_bands]")
        if not 0 < self.rolloff_fraction <= 1:
            raise ValueError("rolloff_fraction must be in (0, 1]")


# ---------------------------------------------------------------------------
# WAV I/O (RIFF PCM16 / IEEE float32)

def load_wav(path) -> AudioClip:
    """Read a RIFF/WAVE file; PCM16 samples are scaled by 1/32768."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 12 or buf[:4] != b"RIFF" or buf[8:12] != b"WAVE":
        raise DataError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(buf):
        cid = buf[pos : pos + 4]
        (size,) = struct.unpack_from("<I", buf, pos + 4)
        body = buf[pos + 8 : pos + 8 + size]
        if len(body) != size:
            raise DataError(f"{path}: truncated {cid!r} chunk")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        raise DataError(f"{path}: missing fmt or data chunk")
    if len(fmt) < 16:
        raise DataError(f"{path}: malformed fmt chunk")
    audio_format, channels, sample_rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if channels not in (1, 2):
        raise DataError(f"{path}: {channels} channels unsupported (expected 1 or 2)")
    if audio_format == 1 and bits == 16:
        raw = np.frombuffer(data, dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise DataError(
            f"{path}: unsupported encoding (format {audio_format}, {bits} bits); "
            "expected PCM16 or IEEE float32"
        )
    if samples.size % channels:
        raise DataError(f"{path}: sample count not divisible by channel count")
    return AudioClip(sample_rate, samples.reshape(-1, channels))


def save_wav(path, clip: AudioClip, encoding: str = "pcm16") -> None:
    """Write a RIFF/WAVE file (pcm16 or float32 encoding)."""
    if encoding == "pcm16":
        scaled = np.round(clip.samples * 32768.0)
        payload = np.clip(scaled, -32768, 32767).astype("<i2").tobytes()
        audio_format, bits = 1, 16
    elif encoding == "float32":
        payload = clip.samples.astype("<f4").tobytes()
        audio_format, bits = 3, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    ch = clip.channels
    block = ch * bits // 8
    fmt = struct.pack(
        "<HHIIHH", audio_format, ch, clip.sample_rate, clip.sample_rate * block, block, bits
    )
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", 4 + 8 + len(fmt) + 8 + len(payload)) + b"WAVE")
        fh.write(b"fmt " + struct.pack("<I", len(fmt)) + fmt)
        fh.write(b"data" + struct.pack("<I", len(payload)) + payload)


def to_mono(clip: AudioClip) -> AudioClip:
    """Average the channels."""
    if clip.channels == 1:
        return clip
    return AudioClip(clip.sample_rate, clip.samples.mean(axis=1))


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Linear-interpolation resampler (pick a target rate divisible by 10)."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == clip.sample_rate:
        return clip
    n = len(clip)
    duration = n / clip.sample_rate
    m = max(1, int(round(duration * target_rate)))
    t_old = np.arange(n) / clip.sample_rate
    t_new = np.arange(m) / target_rate
    out = np.stack(
        [np.interp(t_new, t_old, clip.samples[:, c]) for c in range(clip.channels)], axis=1
    )
    return AudioClip(target_rate, out)


# ---------------------------------------------------------------------------
# Framing and transforms

def hop_length(sample_rate: int, frame_rate: int = 10) -> int:
    if sample_rate % frame_rate:
        raise ValueError(
            f"sample rate {sample_rate} is not divisible by frame rate {frame_rate}; "
            "resample to a divisible rate for bit-exact framing"
        )
    return sample_rate // frame_rate


def _hann(n: int) -> np.ndarray:
    # periodic Hann window
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _frames(x: np.ndarray, hop: int, frame_len: int) -> np.ndarray:
    """Centered frames with reflect padding; frame count = ceil(len / hop)."""
    n = len(x)
    if n < hop:
        raise ValueError(f"clip shorter than one hop ({n} < {hop} samples)")
    pad = frame_len // 2
    if pad > n - 1:
        raise ValueError(
            f"clip too short for centered {frame_len}-sample frames ({n} samples)"
        )
    t = -(-n // hop)
    xp = np.pad(x, pad, mode="reflect")
    view = np.lib.stride_tricks.sliding_window_view(xp, frame_len)
    return view[:: hop][:t]


def stft(clip: AudioClip, config: Optional[FeatureConfig] = None) -> np.ndarray:
    """Hann-windowed one-sided STFT, complex (T, fft_size/2 + 1)."""
    cfg = config or FeatureConfig()
    x = clip.mono()
    hop = hop_length(clip.sample_rate, cfg.frame_rate)
    if hop > cfg.fft_size:
        raise ValueError(
            f"hop {hop} exceeds fft_size {cfg.fft_size}; windows would skip "
            "samples (resample to a lower rate or enlarge fft_size)"
        )
    frames = _frames(x, hop, cfg.fft_size)
    return np.fft.rfft(frames * _hann(cfg.fft_size), axis=1)


def mel_scale(freq_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(freq_hz, dtype=np.float64) / 700.0)


def mel_to_hz(mels):
    return 700.0 * (10.0 ** (np.asarray(mels, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, fft_size: int, mel_bands: int) -> np.ndarray:
    """Triangular filters on the mel scale, each normalized to unit grid peak."""
    edges = mel_to_hz(np.linspace(0.0, mel_scale(sample_rate / 2.0), mel_bands + 2))
    freqs = np.fft.rfftfreq(fft_size, 1.0 / sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / np.maximum(mid - lo, 1e-12)
    falling = (hi - freqs[None, :]) / np.maximum(hi - mid, 1e-12)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    peaks = weights.max(axis=1, keepdims=True)
    return weights / np.maximum(peaks, 1e-12)


def mel_spectrogram(clip: AudioClip, config: Optional[FeatureConfig] = None) -> FeatureMatrix:
    cfg = config or FeatureConfig()
    power = np.abs(stft(clip, cfg)) ** 2
    fb = mel_filterbank(clip.sample_rate, cfg.fft_size, cfg.mel_bands)
    return FeatureMatrix(power @ fb.T, cfg.frame_rate, "mel")


def log_mel(clip: AudioClip, config: Optional[FeatureConfig] = None) -> FeatureMatrix:
    """dB-scaled mel power, floored at 1e-10 and referenced so the clip max is 0 dB."""
    mel = mel_spectrogram(clip, config)
    db = 10.0 * np.log10(np.maximum(mel.data, DB_FLOOR))
    db -= db.max()
    return FeatureMatrix(db, mel.frame_rate, "logmel")


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix (n x n)."""
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    q = np.cos(np.pi * (2 * m + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    q[0] /= np.sqrt(2.0)
    return q


def mfcc(clip: AudioClip, config: Optional[FeatureConfig] = None) -> FeatureMatrix:
    """First mfcc_coeffs orthonormal DCT-II coefficients of the log-mel matrix."""
    cfg = config or FeatureConfig()
    lm = log_mel(clip, cfg)
    q = dct_matrix(cfg.mel_bands)[: cfg.mfcc_coeffs]
    return FeatureMatrix(lm.data @ q.T, cfg.frame_rate, "mfcc")


def chroma_stft(clip: AudioClip, config: Optional[FeatureConfig] = None) -> FeatureMatrix:
    """Spectral power folded into 12 pitch classes (class 0 = A, 440 Hz reference),
    max-normalized per frame."""
    cfg = config or FeatureConfig()
    power = np.abs(stft(clip, cfg)) ** 2
    freqs = np.fft.rfftfreq(cfg.fft_size, 1.0 / clip.sample_rate)
    classes = np.zeros(len(freqs), dtype=np.int64)
    nonzero = freqs > 0
    classes[nonzero] = np.round(12.0 * np.log2(freqs[nonzero] / 440.0)).astype(np.int64) % 12
    fold = np.zeros((12, len(freqs)))
    fold[classes[nonzero], np.nonzero(nonzero)[0]] = 1.0
    chroma = power @ fold.T
    peaks = chroma.max(axis=1, keepdims=True)
    chroma = np.where(peaks > 0, chroma / np.maximum(peaks, 1e-300), 0.0)
    return FeatureMatrix(chroma, cfg.frame_rate, "chroma")


def spectral_stats(
    clip: AudioClip, config: Optional[FeatureConfig] = None
) -> Dict[str, FeatureMatrix]:
    """Centroid, bandwidth, rolloff, per-octave-band contrast and ZCR as named matrices."""
    cfg = config or FeatureConfig()
    power = np.abs(stft(clip, cfg)) ** 2
    freqs = np.fft.rfftfreq(cfg.fft_size, 1.0 / clip.sample_rate)
    total = power.sum(axis=1)
    safe = np.maximum(total, 1e-300)

    centroid = np.where(total > 0, power @ freqs / safe, 0.0)
    spread = ((freqs[None, :] - centroid[:, None]) ** 2 * power).sum(axis=1) / safe
    bandwidth = np.where(total > 0, np.sqrt(spread), 0.0)

    cume = np.cumsum(power, axis=1)
    reached = cume >= cfg.rolloff_fraction * total[:, None]
    rolloff = freqs[np.argmax(reached, axis=1)]

    # octave bands from 200 Hz up, last band capped at Nyquist
    edges = [0.0] + [200.0 * 2.0**k for k in range(cfg.contrast_bands - 1)]
    edges.append(clip.sample_rate / 2.0)
    contrast = np.zeros((power.shape[0], cfg.contrast_bands))
    for bi in range(cfg.contrast_bands):
        mask = (freqs >= edges[bi]) & (freqs <= edges[bi + 1])
        if not mask.any():
            continue
        sub = power[:, mask]
        contrast[:, bi] = np.log((sub.max(axis=1) + DB_FLOOR) / (sub.min(axis=1) + DB_FLOOR))

    hop = hop_length(clip.sample_rate, cfg.frame_rate)
    raw = _frames(clip.mono(), hop, cfg.fft_size)
    signs = np.sign(raw)
    zcr = (signs[:, 1:] * signs[:, :-1] < 0).sum(axis=1) / (cfg.fft_size - 1)

    fr = cfg.frame_rate
    return {
        "centroid": FeatureMatrix(centroid[:, None], fr, "centroid"),
        "bandwidth": FeatureMatrix(bandwidth[:, None], fr, "bandwidth"),
        "rolloff": FeatureMatrix(rolloff[:, None], fr, "rolloff"),
        "contrast": FeatureMatrix(contrast, fr, "contrast"),
        "zcr": FeatureMatrix(zcr[:, None], fr, "zcr"),
    }


# ---------------------------------------------------------------------------
# Model-facing extractor registry

def extract_default_features(clip: AudioClip) -> FeatureMatrix:
    """The default music representation: 128-band log-mel at 10 Hz."""
    return log_mel(to_mono(clip), FeatureConfig())


def _wrap(fn):
    def run(clip, config=None):
        return fn(to_mono(clip), config)

    return run


FEATURE_EXTRACTORS = {
    "logmel": _wrap(log_mel),
    "mel": _wrap(mel_spectrogram),
    "mfcc": _wrap(mfcc),
    "chroma": _wrap(chroma_stft),
}


def get_extractor(kind: str):
    try:
        return FEATURE_EXTRACTORS[kind]
    except KeyError:
        raise ValueError(
            f"unknown feature kind {kind!r}; choose from {sorted(FEATURE_EXTRACTORS)}"
        ) from None


# ---------------------------------------------------------------------------
# Raw feature dump: one-line JSON header + little-endian float32, row-major

def write_feature_dump(path, fm: FeatureMatrix) -> None:
    header = json.dumps({"T": fm.frames, "F": fm.dim, "kind": fm.kind})
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        fh.write(fm.data.astype("<f4").tobytes())


def read_feature_dump(path, frame_rate: float = 10.0) -> FeatureMatrix:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
        t, f, kind = int(header["T"]), int(header["F"]), str(header.get("kind", ""))
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: malformed feature dump header") from exc
    expected = 4 * t * f
    if len(blob) != expected:
        raise DataError(f"{path}: expected {expected} data bytes, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4").reshape(t, f).astype(np.float64)
    return FeatureMatrix(data, frame_rate, kind)


__all__ = [
    "AudioClip",
    "FeatureMatrix",
    "FeatureConfig",
    "load_wav",
    "save_wav",
    "to_mono",
    "resample",
    "hop_length",
    "stft",
    "mel_scale",
    "mel_to_hz",
    "mel_filterbank",
    "mel_spectrogram",
    "log_mel",
    "dct_matrix",
    "mfcc",
    "chroma_stft",
    "spectral_stats",
    "extract_default_features",
    "FEATURE_EXTRACTORS",
    "get_extractor",
    "write_feature_dump",
    "read_feature_dump",
]
