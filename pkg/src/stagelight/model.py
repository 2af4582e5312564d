"""Encoder-decoder generator mapping music feature frames to light tokens.

A bidirectional encoder reads the projected music sequence; a causal decoder
emits (hue, value) token pairs autoregressively. Besides the usual cross
attention, every decoder slot receives the raw music embedding of the frame
paired with its light token (the skip term), which hands the model the
frame correspondence it would otherwise have to discover through attention.

The same trunk serves three heads: hue/value classifiers for generation,
a linear recovery head for masked-feature pretraining, and a small MLP
discriminator head that scores pooled decoder states as real/reconstructed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .merge import LoraAdapter

HUE_VOCAB = 180
VALUE_VOCAB = 256
HUE_BOS = HUE_VOCAB      # extra embedding row serving as the start marker
VALUE_BOS = VALUE_VOCAB

SKIP_MODES = ("previous", "aligned", "off")


@dataclass
class ModelConfig:
    feature_dim: int
    d_model: int = 512
    layers: int = 8
    heads: int = 8
    ffn_inner: int = 2048
    dropout: float = 0.1
    max_len: int = 1024
    hue_vocab: int = HUE_VOCAB
    value_vocab: int = VALUE_VOCAB
    seed: int = 0
    skip_mode: str = "previous"

    def __post_init__(self):
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.skip_mode not in SKIP_MODES:
            raise ValueError(f"skip_mode must be one of {SKIP_MODES}")

    @classmethod
    def paper(cls, feature_dim: int, **overrides) -> "ModelConfig":
        """Full-size preset: 512-wide, 8 layers, 8 heads, 2048 inner, 1024 frames."""
        return cls(feature_dim=feature_dim, **overrides)

    @classmethod
    def tiny(cls, feature_dim: int, **overrides) -> "ModelConfig":
        """Desk-scale preset used by the learnability checks."""
        base = dict(d_model=64, layers=2, heads=4, ffn_inner=128, max_len=256)
        base.update(overrides)
        return cls(feature_dim=feature_dim, **base)

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "d_model": self.d_model,
            "layers": self.layers,
            "heads": self.heads,
            "ffn_inner": self.ffn_inner,
            "dropout": self.dropout,
            "max_len": self.max_len,
            "hue_vocab": self.hue_vocab,
            "value_vocab": self.value_vocab,
            "seed": self.seed,
            "skip_mode": self.skip_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def skip_source_indices(length: int, mode: str = "previous") -> np.ndarray:
    """Music frame index feeding each decoder slot; -1 means a zero skip term.

    Slot 0 holds the start marker and slot s >= 1 holds light token s-1.
    "previous" pairs token i with frame i-1, so slot s receives frame s-2;
    "aligned" pairs token i with frame i (slot s receives frame s-1); "off"
    disables the term entirely.
    """
    if mode not in SKIP_MODES:
        raise ValueError(f"unknown skip mode {mode!r}")
    if mode == "off":
        return np.full(length, -1, dtype=np.int64)
    offset = 2 if mode == "previous" else 1
    idx = np.arange(length, dtype=np.int64) - offset
    idx[idx < 0] = -1
    return idx


class LoraLinear(nn.Linear):
    """Linear layer that can carry a low-rank adapter at forward time."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__(in_features, out_features, bias=bias)
        self.adapter: Optional[LoraAdapter] = None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.linear(x, self.weight, self.bias)
        if self.adapter is not None:
            ad = self.adapter
            out = out + (ad.alpha / ad.rank) * F.linear(F.linear(x, ad.a_matrix), ad.b_matrix)
        return out


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.head_dim = d_model // heads
        self.q_proj = LoraLinear(d_model, d_model)
        self.k_proj = LoraLinear(d_model, d_model)
        self.v_proj = LoraLinear(d_model, d_model)
        self.o_proj = LoraLinear(d_model, d_model)
        self.store_weights = False
        self.last_weights: Optional[torch.Tensor] = None

    def forward(self, query: torch.Tensor, keyvalue: torch.Tensor, causal: bool = False):
        b, tq, d = query.shape
        tk = keyvalue.shape[1]
        q = self.q_proj(query).view(b, tq, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(keyvalue).view(b, tk, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(keyvalue).view(b, tk, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        if causal:
            mask = torch.triu(
                torch.ones(tq, tk, dtype=torch.bool, device=scores.device), diagonal=1
            )
            scores = scores.masked_fill(mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        if self.store_weights:
            self.last_weights = attn.detach()
        out = (attn @ v).transpose(1, 2).reshape(b, tq, d)
        return self.o_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, inner: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(d_model, inner)
        self.fc2 = nn.Linear(inner, d_model)
        self.act = nn.GELU()
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.drop(self.act(self.fc1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, d_model: int, heads: int, inner: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = MultiHeadAttention(d_model, heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, inner, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.drop(self.attn(h, h))
        x = x + self.drop(self.ffn(self.norm2(x)))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, d_model: int, heads: int, inner: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, heads)
        self.norm2 = nn.LayerNorm(d_model)
        self.cross_attn = MultiHeadAttention(d_model, heads)
        self.norm3 = nn.LayerNorm(d_model)
        self.ffn = FeedForward(d_model, inner, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, memory):
        h = self.norm1(x)
        x = x + self.drop(self.self_attn(h, h, causal=True))
        x = x + self.drop(self.cross_attn(self.norm2(x), memory))
        x = x + self.drop(self.ffn(self.norm3(x)))
        return x


class MusicMlp(nn.Module):
    """Two-layer perceptron projecting feature frames into model space."""

    def __init__(self, feature_dim: int, d_model: int):
        super().__init__()
        self.fc1 = nn.Linear(feature_dim, d_model)
        self.fc2 = nn.Linear(d_model, d_model)
        self.act = nn.GELU()

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class DiscHead(nn.Module):
    def __init__(self, d_model: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_model)
        self.fc2 = nn.Linear(d_model, 2)
        self.act = nn.GELU()

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


def _uniform_fan_in_(param: torch.Tensor, generator: torch.Generator) -> None:
    bound = 1.0 / math.sqrt(param.shape[-1])
    param.uniform_(-bound, bound, generator=generator)


class MusicLightTransformer(nn.Module):
    """The full generator; see the module docstring for the layout."""

    def __init__(self, config: ModelConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        d = config.d_model
        self.music_mlp = MusicMlp(config.feature_dim, d)
        self.hue_embed = nn.Embedding(config.hue_vocab + 1, d)
        self.value_embed = nn.Embedding(config.value_vocab + 1, d)
        self.pos_embed = nn.Embedding(config.max_len, d)
        self.encoder_layers = nn.ModuleList(
            EncoderLayer(d, config.heads, config.ffn_inner, config.dropout)
            for _ in range(config.layers)
        )
        self.encoder_norm = nn.LayerNorm(d)
        self.decoder_layers = nn.ModuleList(
            DecoderLayer(d, config.heads, config.ffn_inner, config.dropout)
            for _ in range(config.layers)
        )
        self.decoder_norm = nn.LayerNorm(d)
        self.hue_head = nn.Linear(d, config.hue_vocab)
        self.value_head = nn.Linear(d, config.value_vocab)
        self.recovery_head = nn.Linear(d, config.feature_dim)
        self.disc_head = DiscHead(d)
        self.reset_parameters(config.seed)
        if dtype is not torch.float32:
            self.to(dtype)

    # -- initialization -----------------------------------------------------

    def reset_parameters(self, seed: int) -> None:
        """Weights ~ U(-1/sqrt(fan_in), +1/sqrt(fan_in)); biases 0; LN gains 1."""
        gen = torch.Generator().manual_seed(seed)
        for name, param in self.named_parameters():
            with torch.no_grad():
                if param.dim() >= 2:
                    _uniform_fan_in_(param, gen)
                elif name.endswith("bias"):
                    param.zero_()
                else:  # layer-norm gain
                    param.fill_(1.0)

    # -- embedding streams ----------------------------------------------------

    def _positions(self, length: int, like: torch.Tensor) -> torch.Tensor:
        if length > self.config.max_len:
            raise ValueError(f"sequence length {length} exceeds max_len {self.config.max_len}")
        idx = torch.arange(length, device=like.device)
        return self.pos_embed(idx).to(like.dtype)

    def music_raw(self, features: torch.Tensor) -> torch.Tensor:
        """Per-frame music projection, before positions (used by the skip term)."""
        if features.shape[-1] != self.config.feature_dim:
            raise ValueError(
                f"feature dim {features.shape[-1]} != configured {self.config.feature_dim}"
            )
        return self.music_mlp(features)

    def embed_music(self, features: torch.Tensor) -> torch.Tensor:
        """Encoder stream: music projection plus positional rows."""
        raw = self.music_raw(features)
        return raw + self._positions(raw.shape[-2], raw)

    def embed_light(self, hue_ids: torch.Tensor, value_ids: torch.Tensor) -> torch.Tensor:
        """Sum of the hue-table and value-table rows for each token."""
        return self.hue_embed(hue_ids) + self.value_embed(value_ids)

    def skip_combine(self, light_emb: torch.Tensor, music_raw: torch.Tensor) -> torch.Tensor:
        """Decoder input: shifted light embeddings + per-slot music skip + positions."""
        if light_emb.shape[-2] != music_raw.shape[-2]:
            raise ValueError("light and music streams must have equal length")
        t = light_emb.shape[-2]
        idx = skip_source_indices(t, self.config.skip_mode)
        src = torch.from_numpy(np.maximum(idx, 0)).to(music_raw.device)
        gathered = music_raw.index_select(-2, src)
        mask = torch.from_numpy((idx >= 0).astype(np.float64)).to(
            device=music_raw.device, dtype=music_raw.dtype
        )
        skip = gathered * mask.unsqueeze(-1)
        return light_emb + skip + self._positions(t, light_emb)

    # -- transformer stacks ---------------------------------------------------

    def encode(self, music_stream: torch.Tensor) -> torch.Tensor:
        x, squeeze = _batched(music_stream)
        for layer in self.encoder_layers:
            x = layer(x)
        x = self.encoder_norm(x)
        return x[0] if squeeze else x

    def decode(self, decoder_input: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        if decoder_input.shape[-2] < 1:
            raise ValueError("decoder input must hold at least one slot")
        x, squeeze = _batched(decoder_input)
        mem, _ = _batched(memory)
        if mem.shape[0] != x.shape[0]:
            mem = mem.expand(x.shape[0], -1, -1)
        for layer in self.decoder_layers:
            x = layer(x, mem)
        x = self.decoder_norm(x)
        return x[0] if squeeze else x

    # -- task surfaces ----------------------------------------------------------

    def shift_tokens(self, hue_ids: torch.Tensor, value_ids: torch.Tensor):
        """Prepend the start marker and drop the last token."""
        hue_in = torch.cat(
            [torch.full_like(hue_ids[..., :1], HUE_BOS), hue_ids[..., :-1]], dim=-1
        )
        value_in = torch.cat(
            [torch.full_like(value_ids[..., :1], VALUE_BOS), value_ids[..., :-1]], dim=-1
        )
        return hue_in, value_in

    def forward_lm(self, features, hue_ids, value_ids):
        """Teacher-forced pass; returns (hue logits, value logits) per slot."""
        features, squeeze = _batched(features)
        hue_ids, _ = _batched_ids(hue_ids)
        value_ids, _ = _batched_ids(value_ids)
        raw = self.music_raw(features)
        memory = self.encode(raw + self._positions(raw.shape[-2], raw))
        hue_in, value_in = self.shift_tokens(hue_ids, value_ids)
        dec_in = self.skip_combine(self.embed_light(hue_in, value_in), raw)
        hidden = self.decode(dec_in, memory)
        hue_logits = self.hue_head(hidden)
        value_logits = self.value_head(hidden)
        if squeeze:
            return hue_logits[0], value_logits[0]
        return hue_logits, value_logits

    def mlm_hidden(self, features: torch.Tensor) -> torch.Tensor:
        """Shared trunk of the pretraining task: music into both streams.

        The decoder stream is the shift-right of the (masked) feature
        sequence run through the same music projection; slot 0 is zeros.
        """
        features, squeeze = _batched(features)
        raw = self.music_raw(features)
        memory = self.encode(raw + self._positions(raw.shape[-2], raw))
        shifted = torch.cat([torch.zeros_like(features[..., :1, :]), features[..., :-1, :]], dim=-2)
        dec_raw = self.music_raw(shifted)
        dec_in = dec_raw + self._positions(dec_raw.shape[-2], dec_raw)
        hidden = self.decode(dec_in, memory)
        return hidden[0] if squeeze else hidden

    def forward_mlm(self, features: torch.Tensor) -> torch.Tensor:
        """Recovered feature sequence from a (masked) input sequence."""
        hidden = self.mlm_hidden(features)
        return self.recovery_head(hidden)

    def pool_logits(self, hidden: torch.Tensor) -> torch.Tensor:
        """Mean-pool hidden states over time, then the discriminator head."""
        return self.disc_head(hidden.mean(dim=-2))

    def discriminate(self, features: torch.Tensor) -> torch.Tensor:
        """Two-class logits (index 1 = real) for a feature sequence."""
        return self.pool_logits(self.mlm_hidden(features))

    def lm_logits_last(self, memory, music_raw, hue_prefix, value_prefix):
        """Logits for the next token given generated prefixes (no KV cache).

        ``hue_prefix``/``value_prefix`` hold the i tokens generated so far;
        the decoder runs on i+1 slots and the logits of the last slot are
        returned.
        """
        device = memory.device
        hue_in = torch.cat(
            [
                torch.tensor([HUE_BOS], dtype=torch.long, device=device),
                torch.as_tensor(hue_prefix, dtype=torch.long, device=device),
            ]
        )
        value_in = torch.cat(
            [
                torch.tensor([VALUE_BOS], dtype=torch.long, device=device),
                torch.as_tensor(value_prefix, dtype=torch.long, device=device),
            ]
        )
        t = hue_in.shape[0]
        dec_in = self.skip_combine(self.embed_light(hue_in, value_in), music_raw[:t])
        hidden = self.decode(dec_in, memory)
        return self.hue_head(hidden[-1]), self.value_head(hidden[-1])

    # -- adapters ---------------------------------------------------------------

    def _adapter_slots(self) -> Dict[str, LoraLinear]:
        slots = {}
        for name, module in self.named_modules():
            if isinstance(module, LoraLinear):
                slots[name + ".weight"] = module
        return slots

    def set_lora(self, adapters: Iterable[LoraAdapter]) -> None:
        """Attach adapters to attention projections for forward-time use."""
        slots = self._adapter_slots()
        for ad in adapters:
            if ad.target not in slots:
                raise ValueError(
                    f"{ad.target!r} is not an attention projection weight of this model"
                )
            module = slots[ad.target]
            if ad.b_matrix.shape[0] != module.out_features or ad.a_matrix.shape[1] != module.in_features:
                raise ValueError(f"adapter shapes do not fit {ad.target!r}")
            dtype = module.weight.dtype
            module.adapter = replace(
                ad, a_matrix=ad.a_matrix.to(dtype), b_matrix=ad.b_matrix.to(dtype)
            )

    def clear_lora(self) -> None:
        for module in self._adapter_slots().values():
            module.adapter = None

    def set_attention_capture(self, enabled: bool) -> None:
        for module in self.modules():
            if isinstance(module, MultiHeadAttention):
                module.store_weights = enabled
                if not enabled:
                    module.last_weights = None

    def captured_attention(self) -> Dict[str, torch.Tensor]:
        out = {}
        for name, module in self.named_modules():
            if isinstance(module, MultiHeadAttention) and module.last_weights is not None:
                out[name] = module.last_weights
        return out


def _batched(x: torch.Tensor) -> Tuple[torch.Tensor, bool]:
    if x.dim() == 2:
        return x.unsqueeze(0), True
    if x.dim() == 3:
        return x, False
    raise ValueError(f"expected (T, d) or (B, T, d), got shape {tuple(x.shape)}")


def _batched_ids(x: torch.Tensor) -> Tuple[torch.Tensor, bool]:
    x = torch.as_tensor(x, dtype=torch.long)
    if x.dim() == 1:
        return x.unsqueeze(0), True
    if x.dim() == 2:
        return x, False
    raise ValueError(f"expected (T,) or (B, T) token ids, got shape {tuple(x.shape)}")


def init_parameters(config: ModelConfig) -> Dict[str, torch.Tensor]:
    """Freshly initialized parameter map (path -> tensor), deterministic per seed."""
    model = MusicLightTransformer(config)
    return {k: v.detach().clone() for k, v in model.state_dict().items()}
