"""Rule-labelled synthetic corpora.

Every corpus here carries labels that are a total deterministic function of
the feature frame, so a trained model's accuracy measures whether the
architecture can learn the mapping, not whether the labels are guessable.
Feature rows are tone-like band activations with jittered amplitudes; the
jitter margins are far smaller than the band/level gaps, so the labels
survive the container's float32 storage exactly, and every corpus is
re-verified against its rule after construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .dataset import DatasetContainer, DatasetRecord


@dataclass(frozen=True)
class SyntheticRule:
    """Frame labeling: dominant band -> hue bucket, peak amplitude -> value level.

    Hue buckets are 180 // feature_dim wide and the label sits at the bucket
    center; amplitude levels are 1.0, 2.0, ... with boundaries halfway
    between, mapped to centers of 256 // value_levels wide value buckets.
    """

    rule_id: str = "dominant-band"
    feature_dim: int = 16
    value_levels: int = 4
    section_frames: Tuple[int, int] = (8, 32)  # min/max section length

    def __post_init__(self):
        if not 1 <= self.feature_dim <= 180:
            raise ValueError("feature_dim must be in [1, 180]")
        if not 1 <= self.value_levels <= 256:
            raise ValueError("value_levels must be in [1, 256]")

    @property
    def hue_bucket_width(self) -> int:
        return 180 // self.feature_dim

    @property
    def value_bucket_width(self) -> int:
        return 256 // self.value_levels

    def hue_for_band(self, band: int) -> int:
        return band * self.hue_bucket_width + self.hue_bucket_width // 2

    def value_for_level(self, level: int) -> int:
        return level * self.value_bucket_width + self.value_bucket_width // 2

    def label_frame(self, frame: np.ndarray) -> Tuple[int, int]:
        frame = np.asarray(frame)
        band = int(np.argmax(frame))
        level = int(np.searchsorted(self._boundaries(), float(frame.max())))
        return self.hue_for_band(band), self.value_for_level(level)

    def _boundaries(self) -> np.ndarray:
        # level j has nominal amplitude j + 1; boundaries halfway between
        return np.arange(1, self.value_levels) + 0.5


@dataclass(frozen=True)
class ImpulseRule:
    """Labeling for the skip-alignment corpus: the first feature_dim - 1
    channels carry the sustained hue bucket, the last channel spikes exactly
    where the bucket flips. Value is constant."""

    feature_dim: int = 16
    constant_value: int = 128

    @property
    def buckets(self) -> int:
        return self.feature_dim - 1

    @property
    def hue_bucket_width(self) -> int:
        return 180 // self.buckets

    def hue_for_band(self, band: int) -> int:
        return band * self.hue_bucket_width + self.hue_bucket_width // 2

    def label_frame(self, frame: np.ndarray) -> Tuple[int, int]:
        band = int(np.argmax(np.asarray(frame)[: self.buckets]))
        return self.hue_for_band(band), self.constant_value


def _sections(total: int, lo: int, hi: int, rng: np.random.Generator) -> List[int]:
    """Section lengths covering `total` frames."""
    out = []
    left = total
    while left > 0:
        n = int(rng.integers(lo, hi + 1))
        out.append(min(n, left))
        left -= out[-1]
    return out


def _verify(container: DatasetContainer, rule) -> int:
    bad = 0
    for rec in container.records:
        for t in range(rec.frames):
            hue, value = rule.label_frame(rec.features[t])
            if hue != int(rec.hue[t]) or value != int(rec.value[t]):
                bad += 1
    return bad


def make_corpus(
    rule: SyntheticRule,
    n_records: int,
    frames: int,
    seed: int = 0,
    shows: int = 10,
) -> DatasetContainer:
    """Sectional tone corpus labelled by `rule`; show ids assigned round-robin."""
    rng = np.random.default_rng(seed)
    records = []
    fdim = rule.feature_dim
    for i in range(n_records):
        feats = np.empty((frames, fdim), dtype=np.float64)
        hues = np.empty(frames, dtype=np.int64)
        values = np.empty(frames, dtype=np.int64)
        t = 0
        band = -1
        for length in _sections(frames, *rule.section_frames, rng=rng):
            prev = band
            while band == prev:
                band = int(rng.integers(0, fdim))
            level = int(rng.integers(0, rule.value_levels))
            amp = level + 1.0
            block = rng.uniform(-0.2, 0.2, size=(length, fdim))
            block[:, band] = amp + rng.uniform(-0.2, 0.2, size=length)
            feats[t : t + length] = block
            t += length
        feats32 = feats.astype(np.float32)
        for t in range(frames):
            hues[t], values[t] = rule.label_frame(feats32[t])
        records.append(
            DatasetRecord(
                record_id=f"synth-{i:04d}",
                show_id=f"show{i % shows}",
                features=feats32,
                hue=hues,
                value=values,
                feature_kind="synthetic",
                metadata={"rule": rule.rule_id},
            )
        )
    container = DatasetContainer(records)
    mismatches = _verify(container, rule)
    if mismatches:
        raise AssertionError(f"{mismatches} labels disagree with the rule")
    return container


def _impulse_positions(frames: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """`count` positions in [1, frames-1], pairwise at least 2 apart."""
    while True:
        pos = np.sort(rng.choice(np.arange(1, frames), size=count, replace=False))
        if count < 2 or np.diff(pos).min() >= 2:
            return pos


def impulse_alignment_corpus(
    n_records: int,
    frames: int,
    seed: int = 0,
    feature_dim: int = 16,
    shows: int = 10,
    impulse_every: int = 16,
) -> DatasetContainer:
    """Corpus probing frame alignment: isolated impulses in the music flip the
    hue bucket exactly at the impulse frames; value stays constant.

    Impulse positions land in each record's metadata under "impulses".
    """
    if frames < 4:
        raise ValueError("frames must be >= 4")
    rule = ImpulseRule(feature_dim)
    rng = np.random.default_rng(seed)
    records = []
    count = max(1, frames // impulse_every)
    for i in range(n_records):
        pos = _impulse_positions(frames, count, rng)
        feats = rng.uniform(-0.1, 0.1, size=(frames, feature_dim))
        band = int(rng.integers(0, rule.buckets))
        switch = iter(pos.tolist())
        nxt = next(switch, None)
        bands = np.empty(frames, dtype=np.int64)
        for t in range(frames):
            if nxt is not None and t == nxt:
                step = int(rng.integers(1, rule.buckets))
                band = (band + step) % rule.buckets
                nxt = next(switch, None)
            bands[t] = band
        feats[np.arange(frames), bands] = 1.0 + rng.uniform(-0.1, 0.1, size=frames)
        feats[pos, feature_dim - 1] = 3.0 + rng.uniform(-0.1, 0.1, size=count)
        feats32 = feats.astype(np.float32)
        hues = np.empty(frames, dtype=np.int64)
        values = np.empty(frames, dtype=np.int64)
        for t in range(frames):
            hues[t], values[t] = rule.label_frame(feats32[t])
        records.append(
            DatasetRecord(
                record_id=f"impulse-{i:04d}",
                show_id=f"show{i % shows}",
                features=feats32,
                hue=hues,
                value=values,
                feature_kind="synthetic",
                metadata={"rule": "impulse-alignment", "impulses": pos.tolist()},
            )
        )
    container = DatasetContainer(records)
    mismatches = _verify(container, rule)
    if mismatches:
        raise AssertionError(f"{mismatches} labels disagree with the rule")
    return container


RULES = {
    "dominant-mel": SyntheticRule(rule_id="dominant-mel"),
    "impulse": None,  # handled by impulse_alignment_corpus
}


def build_named_corpus(
    rule_id: str, n_records: int, frames: int, seed: int, feature_dim: int = 16
) -> DatasetContainer:
    if rule_id == "impulse":
        return impulse_alignment_corpus(n_records, frames, seed, feature_dim)
    if rule_id in RULES:
        rule = SyntheticRule(rule_id=rule_id, feature_dim=feature_dim)
        return make_corpus(rule, n_records, frames, seed)
    raise ValueError(f"unknown synthetic rule {rule_id!r}; choose from {sorted(RULES)}")
