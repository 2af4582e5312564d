"""RMSE/MAE between light sequences: hue on the 180-cycle, value absolute."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .lightcodec import LightSequence, hue_distance, value_distance


@dataclass(frozen=True)
class RecordMetrics:
    hue_rmse: float
    hue_mae: float
    value_rmse: float
    value_mae: float
    count: int

    def to_dict(self) -> dict:
        return {
            "hue_rmse": self.hue_rmse,
            "hue_mae": self.hue_mae,
            "value_rmse": self.value_rmse,
            "value_mae": self.value_mae,
            "count": self.count,
        }


@dataclass(frozen=True)
class MetricsReport:
    per_record: Dict[str, RecordMetrics]
    aggregate: RecordMetrics

    def to_dict(self) -> dict:
        return {
            "aggregate": self.aggregate.to_dict(),
            "per_record": {k: v.to_dict() for k, v in self.per_record.items()},
        }


def _distances(predicted: LightSequence, truth: LightSequence) -> Tuple[np.ndarray, np.ndarray]:
    if len(predicted) != len(truth):
        raise ValueError(
            f"sequence lengths differ: {len(predicted)} vs {len(truth)}"
        )
    dh = hue_distance(predicted.hue_array(), truth.hue_array())
    dv = value_distance(predicted.value_array(), truth.value_array())
    return np.asarray(dh, dtype=np.float64), np.asarray(dv, dtype=np.float64)


def eval_metrics(predicted: LightSequence, truth: LightSequence) -> RecordMetrics:
    dh, dv = _distances(predicted, truth)
    return RecordMetrics(
        hue_rmse=math.sqrt(float(np.mean(dh * dh))),
        hue_mae=float(np.mean(dh)),
        value_rmse=math.sqrt(float(np.mean(dv * dv))),
        value_mae=float(np.mean(dv)),
        count=len(truth),
    )


def eval_report(pairs: Sequence[Tuple[str, LightSequence, LightSequence]]) -> MetricsReport:
    """Per-record metrics plus an aggregate pooled over every frame."""
    if not pairs:
        raise ValueError("no sequence pairs to evaluate")
    per_record = {}
    all_dh: List[np.ndarray] = []
    all_dv: List[np.ndarray] = []
    for name, pred, truth in pairs:
        per_record[name] = eval_metrics(pred, truth)
        dh, dv = _distances(pred, truth)
        all_dh.append(dh)
        all_dv.append(dv)
    dh = np.concatenate(all_dh)
    dv = np.concatenate(all_dv)
    aggregate = RecordMetrics(
        hue_rmse=math.sqrt(float(np.mean(dh * dh))),
        hue_mae=float(np.mean(dh)),
        value_rmse=math.sqrt(float(np.mean(dv * dv))),
        value_mae=float(np.mean(dv)),
        count=int(dh.size),
    )
    return MetricsReport(per_record, aggregate)
