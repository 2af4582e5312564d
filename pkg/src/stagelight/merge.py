"""Parameter-map surgery: drop-and-rescale task merging and low-rank adapters.

Both operate on plain parameter maps (path -> tensor), the same structure a
model's ``state_dict`` exposes, so merged maps load straight back into a
model. The merge keeps each task delta's expectation: entries survive with
probability 1 - p and the survivors are rescaled by 1/(1 - p).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Sequence

import torch

ParamMap = Dict[str, torch.Tensor]


@dataclass(frozen=True)
class LoraAdapter:
    """Low-rank pair (A, B) targeting one 2-D weight: effective delta is
    (alpha / rank) * B @ A with A (rank, in) and B (out, rank)."""

    target: str
    rank: int
    alpha: float
    a_matrix: torch.Tensor
    b_matrix: torch.Tensor

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        a, b = self.a_matrix, self.b_matrix
        if a.dim() != 2 or b.dim() != 2 or a.shape[0] != self.rank or b.shape[1] != self.rank:
            raise ValueError(
                f"adapter shapes must be A (rank, in), B (out, rank); got {tuple(a.shape)}, "
                f"{tuple(b.shape)} for rank {self.rank}"
            )

    def delta(self) -> torch.Tensor:
        return (self.alpha / self.rank) * (self.b_matrix @ self.a_matrix)


def _check_aligned(reference: Mapping[str, torch.Tensor], other: Mapping[str, torch.Tensor]):
    if set(reference) != set(other):
        missing = set(reference) ^ set(other)
        raise ValueError(f"parameter maps disagree on paths: {sorted(missing)[:5]} ...")
    for key in reference:
        if reference[key].shape != other[key].shape:
            raise ValueError(
                f"shape mismatch at {key!r}: {tuple(reference[key].shape)} vs "
                f"{tuple(other[key].shape)}"
            )


def dare_merge(
    theta_pre: Mapping[str, torch.Tensor],
    task_params: Sequence[Mapping[str, torch.Tensor]],
    p: float,
    lam: float = 1.0,
    seed: int = 0,
) -> ParamMap:
    """Merge fine-tuned task deltas into the pretrained map.

    Each delta entry is kept with probability 1 - p (p is the drop rate) and
    rescaled by 1/(1 - p); the merged map is theta_pre + lam * sum of masked
    deltas. Deterministic for a given seed: masks are drawn per task in task
    order, over parameter paths in sorted order.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"drop rate p must be in [0, 1), got {p}")
    gen = torch.Generator().manual_seed(seed)
    merged: ParamMap = {k: torch.as_tensor(v).clone() for k, v in theta_pre.items()}
    keep = 1.0 - p
    for task in task_params:
        _check_aligned(theta_pre, task)
        for key in sorted(merged):
            delta = torch.as_tensor(task[key]) - torch.as_tensor(theta_pre[key])
            mask = (torch.rand(delta.shape, generator=gen) < keep).to(delta.dtype)
            merged[key] += lam * mask * delta / keep
    return merged


def lora_merge(
    params: Mapping[str, torch.Tensor], adapters: Iterable[LoraAdapter]
) -> ParamMap:
    """Fold adapter products into the base weights; the base map is not touched."""
    out: ParamMap = {k: torch.as_tensor(v).clone() for k, v in params.items()}
    for ad in adapters:
        if ad.target not in out:
            raise ValueError(f"adapter target {ad.target!r} not in parameter map")
        base = out[ad.target]
        delta = ad.delta().to(base.dtype)
        if base.shape != delta.shape:
            raise ValueError(
                f"adapter delta shape {tuple(delta.shape)} does not match "
                f"{ad.target!r} shape {tuple(base.shape)}"
            )
        out[ad.target] = base + delta
    return out
