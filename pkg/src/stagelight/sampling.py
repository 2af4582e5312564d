"""Autoregressive generation with distance-restricted temperature sampling.

Each step draws hue and value independently from softmax(logits / t); all
categories at cyclic-hue (or absolute-value) distance >= the threshold from
the previous token are zeroed and the rest renormalized, so consecutive
tokens can never jump farther than the thresholds allow. The first step has
no predecessor and samples unrestricted. The hue restriction calls the same
``hue_distance`` the tokenizer and the metrics use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
import torch

from .lightcodec import LightSequence, LightToken, hue_distance, value_distance


@dataclass
class SamplerConfig:
    temperature: float = 1.0
    hue_threshold: int = 30    # strict: admissible hues satisfy distance < threshold
    value_threshold: int = 64
    seed: int = 0
    max_len: Optional[int] = None
    # optional per-step temperature hook (step index -> temperature); overrides
    # the constant when set
    temperature_schedule: Optional[Callable[[int], float]] = None

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0 < self.hue_threshold <= 90:
            raise ValueError("hue threshold must be in (0, 90]")
        if not 0 < self.value_threshold <= 255:
            raise ValueError("value threshold must be in (0, 255]")

    def temperature_at(self, step: int) -> float:
        if self.temperature_schedule is not None:
            t = float(self.temperature_schedule(step))
            if t <= 0:
                raise ValueError(f"temperature schedule produced {t} at step {step}")
            return t
        return self.temperature


@dataclass
class GenerationResult:
    sequence: LightSequence
    step_probs: List[Tuple[float, float]]  # renormalized probability of each chosen pair
    seed: int
    config: SamplerConfig


def restricted_probs(
    logits: torch.Tensor,
    prev_token: Optional[int],
    distance_fn,
    threshold: float,
    temperature: float,
) -> torch.Tensor:
    """softmax(logits / t), zeroed outside the admissible set and renormalized."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = torch.as_tensor(logits, dtype=torch.float64)
    if not torch.isfinite(logits).all():
        raise ValueError("logits must be finite")
    scaled = logits / temperature
    if prev_token is not None:
        ids = np.arange(logits.shape[-1])
        dist = np.asarray(distance_fn(np.full_like(ids, prev_token), ids))
        allowed = torch.from_numpy(dist < threshold)
        # zeroing disallowed entries and renormalizing equals a softmax over
        # the admissible set; masking the logits computes that stably even at
        # extreme temperatures
        scaled = scaled.masked_fill(~allowed, float("-inf"))
    probs = torch.softmax(scaled, dim=-1)
    # the previous token itself sits at distance 0, so mass cannot vanish
    assert bool(torch.isfinite(probs).all()), "restricted distribution lost all mass"
    return probs


def restricted_sample(
    logits: torch.Tensor,
    prev_token: Optional[int],
    distance_fn,
    threshold: float,
    temperature: float,
    generator: torch.Generator,
) -> Tuple[int, float]:
    """Draw one token; returns (token id, its renormalized probability)."""
    probs = restricted_probs(logits, prev_token, distance_fn, threshold, temperature)
    token = int(torch.multinomial(probs, 1, generator=generator))
    return token, float(probs[token])


def generate(features, model, config: Optional[SamplerConfig] = None) -> GenerationResult:
    """Generate a light sequence for a feature matrix, deterministic per seed."""
    cfg = config or SamplerConfig()
    data = features.data if isinstance(getattr(features, "data", None), np.ndarray) else np.asarray(features)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError("features must be a non-empty (T, F) matrix")
    model_cfg = model.config
    if data.shape[1] != model_cfg.feature_dim:
        raise ValueError(
            f"feature dim {data.shape[1]} does not match the model's "
            f"{model_cfg.feature_dim}"
        )
    length = min(data.shape[0], cfg.max_len or model_cfg.max_len, model_cfg.max_len)
    gen = torch.Generator().manual_seed(cfg.seed)
    dtype = next(model.parameters()).dtype
    feats = torch.as_tensor(data[:length], dtype=dtype)

    model.eval()
    hues: List[int] = []
    values: List[int] = []
    probs: List[Tuple[float, float]] = []
    with torch.no_grad():
        raw = model.music_raw(feats)
        memory = model.encode(raw + model._positions(length, raw))
        for step in range(length):
            hue_logits, value_logits = model.lm_logits_last(memory, raw, hues, values)
            t = cfg.temperature_at(step)
            prev_h = hues[-1] if hues else None
            prev_v = values[-1] if values else None
            h, ph = restricted_sample(
                hue_logits, prev_h, hue_distance, cfg.hue_threshold, t, gen
            )
            v, pv = restricted_sample(
                value_logits, prev_v, value_distance, cfg.value_threshold, t, gen
            )
            hues.append(h)
            values.append(v)
            probs.append((ph, pv))

    seq = LightSequence([LightToken(h, v) for h, v in zip(hues, values)], 10.0)
    return GenerationResult(seq, probs, cfg.seed, cfg)


def violations(sequence: LightSequence, hue_threshold: int, value_threshold: int) -> int:
    """Count consecutive pairs breaking the strict distance restriction."""
    bad = 0
    for a, b in zip(sequence.tokens, sequence.tokens[1:]):
        if hue_distance(a.hue, b.hue) >= hue_threshold:
            bad += 1
        elif value_distance(a.value, b.value) >= value_threshold:
            bad += 1
    return bad
