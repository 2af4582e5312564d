"""Training: masked-recovery pretraining with an adversarial head, then
next-token fine-tuning with adaptive hue/value loss weights.

Pretraining replaces a fixed share of feature frames with draws from each
clip's own per-dimension normal statistics; the model recovers the original
sequence (full-sequence MSE, masked-position MSE, and a realism term scored
by the discriminator head). Each batch applies one recoverer update and one
discriminator update; the discriminator update only ever steps its own head,
so the shared trunk is owned by the recoverer update and no parameter is
written twice per step.

Fine-tuning is teacher-forced classification over hue and value with the
loss weights recomputed each epoch from the previous epoch's validation
accuracies: slower attributes get more weight.
"""

from __future__ import annotations

import json
import math
import os
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import arrays_to_state_dict, load_checkpoint, save_checkpoint
from .dataset import DatasetContainer, DatasetRecord, window_sample
from .errors import DataError
from .model import ModelConfig, MusicLightTransformer


# ---------------------------------------------------------------------------
# Masking

@dataclass
class MaskSpec:
    ratio_pct: float = 15.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.ratio_pct < 100.0:
            raise ValueError("mask ratio must be in (0, 100) percent")


def mask_count(frames: int, ratio_pct: float) -> int:
    return int(frames * ratio_pct / 100.0 + 0.5)


def make_mask(features: np.ndarray, spec: MaskSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Replace round(k% * T) random frames with draws from the clip's own
    per-dimension Normal(mu_i, sigma_i); returns (masked copy, mask indices)."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("features must be a non-empty (T, F) matrix")
    t = feats.shape[0]
    m = mask_count(t, spec.ratio_pct)
    rng = np.random.default_rng(spec.seed)
    idx = np.sort(rng.choice(t, size=m, replace=False))
    mu = feats.mean(axis=0)
    sigma = feats.std(axis=0)  # sigma 0 dims draw the constant mu
    masked = feats.copy()
    if m:
        masked[idx] = rng.normal(mu, sigma, size=(m, feats.shape[1]))
    return masked, idx


# ---------------------------------------------------------------------------
# Configs and stats

@dataclass
class PretrainConfig:
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 0.1
    mask_ratio: float = 15.0
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 10
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float = 1.0

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class FinetuneConfig:
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 10
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float = 1.0
    acc_floor: float = 1e-3
    first_epoch_weights: Tuple[float, float] = (0.5, 0.5)


@dataclass
class EpochStats:
    epoch: int
    phase: str
    losses: Dict[str, float] = field(default_factory=dict)
    hue_acc: Optional[float] = None
    value_acc: Optional[float] = None

    def to_json(self) -> str:
        rec = {"epoch": self.epoch, "phase": self.phase, **self.losses}
        if self.hue_acc is not None:
            rec["hue_acc"] = self.hue_acc
        if self.value_acc is not None:
            rec["value_acc"] = self.value_acc
        return json.dumps(rec, sort_keys=True)


def adaptive_weights(
    hue_acc: float, value_acc: float, floor: float = 1e-3
) -> Tuple[float, float]:
    """Inverse-accuracy loss weights, floored and normalized to sum 1."""
    a1 = max(float(hue_acc), floor)
    a2 = max(float(value_acc), floor)
    w1, w2 = 1.0 / a1, 1.0 / a2
    total = w1 + w2
    return w1 / total, w2 / total


# ---------------------------------------------------------------------------
# Loss surfaces (shared by steps and by the gradient checks)

def stf_loss(model, features, hue_ids, value_ids, betas) -> Dict[str, torch.Tensor]:
    """Teacher-forced classification loss over all positions."""
    hue_logits, value_logits = model.forward_lm(features, hue_ids, value_ids)
    ce_hue = F.cross_entropy(hue_logits.reshape(-1, hue_logits.shape[-1]),
                             torch.as_tensor(hue_ids, dtype=torch.long).reshape(-1))
    ce_value = F.cross_entropy(value_logits.reshape(-1, value_logits.shape[-1]),
                               torch.as_tensor(value_ids, dtype=torch.long).reshape(-1))
    loss = betas[0] * ce_hue + betas[1] * ce_value
    return {"L_stf": loss, "ce_hue": ce_hue, "ce_value": ce_value}


def pretrain_losses(model, masked, original, mask_rows, alphas) -> Dict[str, torch.Tensor]:
    """Recoverer objective: full MSE + masked MSE + realism cross-entropy.

    ``mask_rows`` is a boolean (B, T) or (T,) selector of masked positions.
    The realism term runs the recovered sequence through the shared trunk and
    the discriminator head; its gradient reaches the recoverer through that
    path.
    """
    recovered = model.forward_mlm(masked)
    l1 = F.mse_loss(recovered, original)
    rows = torch.as_tensor(mask_rows, dtype=torch.bool)
    l2 = F.mse_loss(recovered[rows], original[rows])
    logits = model.discriminate(recovered)
    target_real = torch.ones(logits.shape[:-1], dtype=torch.long)
    l3 = F.cross_entropy(logits.reshape(-1, 2), target_real.reshape(-1))
    loss = alphas[0] * l1 + alphas[1] * l2 + alphas[2] * l3
    return {"L_pre": loss, "l1": l1, "l2": l2, "l3": l3}


def discriminator_loss(model, recovered_const, original) -> torch.Tensor:
    """Fake-vs-real cross-entropy; the recovered input must be detached."""
    fake = model.discriminate(recovered_const)
    real = model.discriminate(original)
    zeros = torch.zeros(fake.shape[:-1], dtype=torch.long)
    ones = torch.ones(real.shape[:-1], dtype=torch.long)
    return F.cross_entropy(fake.reshape(-1, 2), zeros.reshape(-1)) + F.cross_entropy(
        real.reshape(-1, 2), ones.reshape(-1)
    )


def named_recoverer_parameters(model):
    """Everything except the discriminator head."""
    return [(n, p) for n, p in model.named_parameters() if not n.startswith("disc_head")]


def named_discriminator_parameters(model):
    return [(n, p) for n, p in model.named_parameters() if n.startswith("disc_head")]


def recoverer_parameters(model) -> List[torch.nn.Parameter]:
    return [p for _, p in named_recoverer_parameters(model)]


def discriminator_parameters(model) -> List[torch.nn.Parameter]:
    return [p for _, p in named_discriminator_parameters(model)]


def _check_finite(value: float, what: str, context: Dict[str, float]):
    if not math.isfinite(value):
        raise RuntimeError(f"non-finite {what} ({value}); parts: {context}")


# ---------------------------------------------------------------------------
# Single-batch updates

def pretrain_step(model, batch_features, opt_r, opt_d, config: PretrainConfig,
                  mask_seeds: Sequence[int]) -> Dict[str, float]:
    """One recoverer update then one discriminator update on a (B, T, F) batch."""
    feats = np.asarray(batch_features, dtype=np.float64)
    if feats.ndim == 2:
        feats = feats[None]
    masked = np.empty_like(feats)
    rows = np.zeros(feats.shape[:2], dtype=bool)
    for b in range(feats.shape[0]):
        masked[b], idx = make_mask(feats[b], MaskSpec(config.mask_ratio, int(mask_seeds[b])))
        rows[b, idx] = True

    dtype = next(model.parameters()).dtype
    original_t = torch.as_tensor(feats, dtype=dtype)
    masked_t = torch.as_tensor(masked, dtype=dtype)
    alphas = (config.alpha1, config.alpha2, config.alpha3)

    model.train()
    opt_r.zero_grad(set_to_none=True)
    opt_d.zero_grad(set_to_none=True)
    parts = pretrain_losses(model, masked_t, original_t, rows, alphas)
    parts["L_pre"].backward()
    torch.nn.utils.clip_grad_norm_(recoverer_parameters(model), config.grad_clip)
    opt_r.step()

    opt_r.zero_grad(set_to_none=True)
    opt_d.zero_grad(set_to_none=True)
    with torch.no_grad():
        recovered_const = model.forward_mlm(masked_t)
    l_dis = discriminator_loss(model, recovered_const, original_t)
    l_dis.backward()
    torch.nn.utils.clip_grad_norm_(discriminator_parameters(model), config.grad_clip)
    opt_d.step()

    out = {k: float(v.detach()) for k, v in parts.items()}
    out["L_dis"] = float(l_dis.detach())
    _check_finite(out["L_pre"], "pretraining loss", out)
    _check_finite(out["L_dis"], "discriminator loss", out)
    return out


def finetune_step(model, batch, opt, betas, config: FinetuneConfig) -> Dict[str, float]:
    """One teacher-forced update on a batch of (features, hue ids, value ids)."""
    feats, hues, values = batch
    dtype = next(model.parameters()).dtype
    feats_t = torch.as_tensor(np.asarray(feats), dtype=dtype)
    hues_t = torch.as_tensor(np.asarray(hues), dtype=torch.long)
    values_t = torch.as_tensor(np.asarray(values), dtype=torch.long)
    model.train()
    opt.zero_grad(set_to_none=True)
    parts = stf_loss(model, feats_t, hues_t, values_t, betas)
    parts["L_stf"].backward()
    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    opt.step()
    out = {k: float(v.detach()) for k, v in parts.items()}
    out["beta1"], out["beta2"] = float(betas[0]), float(betas[1])
    _check_finite(out["L_stf"], "fine-tuning loss", out)
    return out


def evaluate(model, records: Sequence[DatasetRecord], batch_size: int = 16) -> Tuple[float, float]:
    """Teacher-forced argmax accuracy for hue and value over the records."""
    if not records:
        raise ValueError("cannot evaluate on an empty split")
    dtype = next(model.parameters()).dtype
    model.eval()
    hits_h = hits_v = total = 0
    with torch.no_grad():
        for group in _group_by_length(records, batch_size):
            feats = torch.as_tensor(np.stack([r.features for r in group]), dtype=dtype)
            hues = torch.as_tensor(np.stack([r.hue for r in group]).astype(np.int64))
            values = torch.as_tensor(np.stack([r.value for r in group]).astype(np.int64))
            hue_logits, value_logits = model.forward_lm(feats, hues, values)
            hits_h += int((hue_logits.argmax(-1) == hues).sum())
            hits_v += int((value_logits.argmax(-1) == values).sum())
            total += hues.numel()
    return hits_h / total, hits_v / total


def _group_by_length(records: Sequence[DatasetRecord], batch_size: int):
    by_t: Dict[int, List[DatasetRecord]] = {}
    for rec in records:
        by_t.setdefault(rec.frames, []).append(rec)
    for t in sorted(by_t):
        bucket = by_t[t]
        for i in range(0, len(bucket), batch_size):
            yield bucket[i : i + batch_size]


# ---------------------------------------------------------------------------
# Show-disjoint splitting

def split_dataset(
    show_ids: Sequence[str], ratios: Tuple[int, int, int] = (8, 1, 1), seed: int = 0
) -> Tuple[List[int], List[int], List[int]]:
    """Assign whole shows to train/val/test greedily toward the ratios.

    Returns index lists into the input sequence; no show ever spans splits.
    """
    if len(show_ids) == 0:
        raise ValueError("no records to split")
    shows: Dict[str, List[int]] = {}
    for i, sid in enumerate(show_ids):
        shows.setdefault(str(sid), []).append(i)
    order = sorted(shows)
    rng = np.random.default_rng(seed)
    rng.shuffle(order)
    # large shows first so small ones can balance the tail
    order.sort(key=lambda s: -len(shows[s]))
    total = len(show_ids)
    weights = np.asarray(ratios, dtype=np.float64) / sum(ratios)
    quota = weights * total
    counts = np.zeros(3)
    splits: Tuple[List[int], List[int], List[int]] = ([], [], [])
    for show in order:
        remaining = quota - counts
        target = int(np.argmax(remaining))
        splits[target].extend(shows[show])
        counts[target] += len(shows[show])
    if len(shows) < 3 or not splits[1] or not splits[2]:
        warnings.warn(
            "too few shows for a populated 8:1:1 split; validation/test may be empty",
            stacklevel=2,
        )
    return tuple(sorted(s) for s in splits)


# ---------------------------------------------------------------------------
# Full runs

@dataclass
class RunConfig:
    """One training run, loadable from JSON (see load_run_config)."""

    dataset: str = ""
    checkpoint_dir: str = "checkpoints"
    phase: str = "both"  # pretrain | finetune | both
    seed: int = 0
    window: int = 1024
    split_ratios: Tuple[int, int, int] = (8, 1, 1)
    model: Optional[ModelConfig] = None
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    init_from: Optional[str] = None  # checkpoint base path to start from
    log_path: Optional[str] = None

    def __post_init__(self):
        if self.phase not in ("pretrain", "finetune", "both"):
            raise ValueError("phase must be pretrain, finetune or both")


def load_run_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        model = ModelConfig.from_dict(raw["model"]) if "model" in raw else None
        return RunConfig(
            dataset=raw.get("dataset", ""),
            checkpoint_dir=raw.get("checkpoint_dir", "checkpoints"),
            phase=raw.get("phase", "both"),
            seed=int(raw.get("seed", 0)),
            window=int(raw.get("window", 1024)),
            split_ratios=tuple(raw.get("split_ratios", (8, 1, 1))),
            model=model,
            pretrain=PretrainConfig(**raw.get("pretrain", {})),
            finetune=FinetuneConfig(**raw.get("finetune", {})),
            init_from=raw.get("init_from"),
            log_path=raw.get("log_path"),
        )
    except (TypeError, ValueError, KeyError) as exc:
        raise DataError(f"{path}: bad run config ({exc})") from exc


@dataclass
class TrainResult:
    best_checkpoint: str
    last_checkpoint: str
    log_path: str
    history: List[EpochStats]
    final_hue_acc: Optional[float] = None
    final_value_acc: Optional[float] = None


def _epoch_windows(records, window, seed, epoch):
    out = []
    for i, rec in enumerate(records):
        rng_seed = [seed, epoch, i, 31]
        out.append(window_sample(rec, window, np.random.default_rng(rng_seed)))
    return out


def _epoch_batches(records, batch_size, seed, epoch):
    rng = np.random.default_rng([seed, epoch, 17])
    order = rng.permutation(len(records))
    batches = []
    for group in _group_by_length([records[i] for i in order], batch_size):
        batches.append(group)
    order2 = rng.permutation(len(batches))
    return [batches[i] for i in order2]


def _optimizer_arrays(prefix: str, named_params, opt) -> Tuple[Dict[str, np.ndarray], int]:
    arrays: Dict[str, np.ndarray] = {}
    steps = 0
    for name, param in named_params:
        state = opt.state.get(param)
        if not state:
            continue
        arrays[f"{prefix}.{name}.exp_avg"] = state["exp_avg"].detach().numpy()
        arrays[f"{prefix}.{name}.exp_avg_sq"] = state["exp_avg_sq"].detach().numpy()
        step = state["step"]
        steps = int(step.item()) if torch.is_tensor(step) else int(step)
    return arrays, steps


def _inject_optimizer(prefix: str, named_params, opt, arrays, steps: int) -> None:
    for name, param in named_params:
        exp_avg = arrays.get(f"{prefix}.{name}.exp_avg")
        exp_avg_sq = arrays.get(f"{prefix}.{name}.exp_avg_sq")
        if exp_avg is None or exp_avg_sq is None:
            continue
        opt.state[param] = {
            "step": torch.tensor(float(steps)),
            "exp_avg": torch.from_numpy(np.array(exp_avg)).to(param.dtype).view(param.shape),
            "exp_avg_sq": torch.from_numpy(np.array(exp_avg_sq)).to(param.dtype).view(param.shape),
        }


def train(cfg: RunConfig, container: DatasetContainer, resume: bool = False) -> TrainResult:
    """Run the configured phases; deterministic for a given seed.

    Writes one JSON line per epoch to the log, keeps ``last`` and ``best``
    checkpoints under the checkpoint directory (best = lowest validation
    masked MSE during pretraining, highest mean validation accuracy during
    fine-tuning). ``last_state`` holds optimizer moments and the torch RNG
    state; ``resume=True`` restores all of it, so the continued epochs
    reproduce an uninterrupted run bitwise.
    """
    records = list(container.records)
    if not records:
        raise DataError("dataset container holds no records")

    tr_idx, va_idx, _ = split_dataset([r.show_id for r in records], cfg.split_ratios, cfg.seed)
    train_recs = [records[i] for i in tr_idx]
    val_recs = [records[i] for i in va_idx] or train_recs  # degenerate corpora

    feature_dim = records[0].dim
    model_cfg = cfg.model or ModelConfig.tiny(feature_dim, seed=cfg.seed)
    if model_cfg.feature_dim != feature_dim:
        raise DataError(
            f"model feature_dim {model_cfg.feature_dim} != dataset dim {feature_dim}"
        )
    model = MusicLightTransformer(model_cfg)

    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    log_path = cfg.log_path or os.path.join(cfg.checkpoint_dir, "train_log.jsonl")
    best_path = os.path.join(cfg.checkpoint_dir, "best")
    last_path = os.path.join(cfg.checkpoint_dir, "last")
    state_path = os.path.join(cfg.checkpoint_dir, "last_state")

    state_arrays: Dict[str, np.ndarray] = {}
    state_extras: dict = {}
    if resume:
        model_arrays, _ = load_checkpoint(last_path)
        model.load_state_dict(arrays_to_state_dict(model_arrays, model))
        state_arrays, state_manifest = load_checkpoint(state_path)
        state_extras = state_manifest["extras"]
        torch.set_rng_state(
            torch.from_numpy(state_arrays["rng.torch"].astype(np.uint8))
        )
    else:
        torch.manual_seed(cfg.seed)
        if cfg.init_from:
            arrays, _ = load_checkpoint(cfg.init_from)
            model.load_state_dict(arrays_to_state_dict(arrays, model))

    history: List[EpochStats] = []

    def log(stats: EpochStats):
        history.append(stats)
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(stats.to_json() + "\n")

    def snapshot(path: str, extras: dict):
        save_checkpoint(
            path,
            {k: v for k, v in model.state_dict().items()},
            config=model_cfg.to_dict(),
            seed=cfg.seed,
            extras=extras,
        )

    def save_state(phase: str, epoch: int, opt_groups, extras: dict):
        arrays: Dict[str, np.ndarray] = {}
        steps: Dict[str, int] = {}
        for prefix, named, opt in opt_groups:
            group_arrays, group_steps = _optimizer_arrays(prefix, named, opt)
            arrays.update(group_arrays)
            steps[prefix] = group_steps
        arrays["rng.torch"] = torch.get_rng_state().numpy()
        save_checkpoint(
            state_path,
            arrays,
            config=model_cfg.to_dict(),
            seed=cfg.seed,
            extras={"phase": phase, "epoch": epoch, "opt_steps": steps, **extras},
        )

    final_acc = (None, None)
    resume_phase = state_extras.get("phase")
    resume_epoch = int(state_extras.get("epoch", 0))
    pre_start = resume_epoch if resume_phase == "pretrain" else 0
    if resume_phase == "finetune":
        pre_start = cfg.pretrain.epochs  # pretraining already finished

    if cfg.phase in ("pretrain", "both") and cfg.pretrain.epochs > pre_start:
        pcfg = cfg.pretrain
        opt_r = torch.optim.AdamW(
            recoverer_parameters(model), lr=pcfg.lr, betas=pcfg.betas,
            eps=pcfg.eps, weight_decay=pcfg.weight_decay,
        )
        opt_d = torch.optim.AdamW(
            discriminator_parameters(model), lr=pcfg.lr, betas=pcfg.betas,
            eps=pcfg.eps, weight_decay=pcfg.weight_decay,
        )
        best_score = math.inf
        if resume_phase == "pretrain":
            opt_steps = state_extras.get("opt_steps", {})
            _inject_optimizer("opt_r", named_recoverer_parameters(model), opt_r,
                              state_arrays, opt_steps.get("opt_r", 0))
            _inject_optimizer("opt_d", named_discriminator_parameters(model), opt_d,
                              state_arrays, opt_steps.get("opt_d", 0))
            best_score = float(state_extras.get("best_score", math.inf))
        groups = [
            ("opt_r", named_recoverer_parameters(model), opt_r),
            ("opt_d", named_discriminator_parameters(model), opt_d),
        ]
        for epoch in range(pre_start + 1, pcfg.epochs + 1):
            windows = _epoch_windows(train_recs, cfg.window, cfg.seed, epoch)
            sums: Dict[str, float] = {}
            nb = 0
            for batch in _epoch_batches(windows, pcfg.batch_size, cfg.seed, epoch):
                feats = np.stack([r.features for r in batch])
                seeds = [
                    zlib.crc32(f"{cfg.seed}:{epoch}:{r.record_id}".encode()) for r in batch
                ]
                parts = pretrain_step(model, feats, opt_r, opt_d, pcfg, seeds)
                for k, v in parts.items():
                    sums[k] = sums.get(k, 0.0) + v
                nb += 1
            losses = {k: v / nb for k, v in sums.items()}
            val_mse = masked_validation_mse(model, val_recs, pcfg, cfg.seed, cfg.window)
            losses["val_masked_mse"] = val_mse
            log(EpochStats(epoch, "pretrain", losses))
            snapshot(last_path, {"phase": "pretrain", "epoch": epoch})
            if val_mse < best_score:
                best_score = val_mse
                snapshot(best_path, {"phase": "pretrain", "epoch": epoch, "val_masked_mse": val_mse})
            save_state("pretrain", epoch, groups, {"best_score": best_score})

    ft_start = resume_epoch if resume_phase == "finetune" else 0
    if cfg.phase in ("finetune", "both") and cfg.finetune.epochs > ft_start:
        fcfg = cfg.finetune
        opt = torch.optim.AdamW(
            model.parameters(), lr=fcfg.lr, betas=fcfg.betas,
            eps=fcfg.eps, weight_decay=fcfg.weight_decay,
        )
        betas = fcfg.first_epoch_weights
        best_score = -math.inf
        if resume_phase == "finetune":
            opt_steps = state_extras.get("opt_steps", {})
            _inject_optimizer("opt", list(model.named_parameters()), opt,
                              state_arrays, opt_steps.get("opt", 0))
            best_score = float(state_extras.get("best_score", -math.inf))
            betas = tuple(state_extras.get("betas", fcfg.first_epoch_weights))
        groups = [("opt", list(model.named_parameters()), opt)]
        for epoch in range(ft_start + 1, fcfg.epochs + 1):
            windows = _epoch_windows(train_recs, cfg.window, cfg.seed, epoch)
            sums = {}
            nb = 0
            for batch in _epoch_batches(windows, fcfg.batch_size, cfg.seed, epoch):
                feats = np.stack([r.features for r in batch])
                hues = np.stack([r.hue for r in batch]).astype(np.int64)
                values = np.stack([r.value for r in batch]).astype(np.int64)
                parts = finetune_step(model, (feats, hues, values), opt, betas, fcfg)
                for k, v in parts.items():
                    sums[k] = sums.get(k, 0.0) + v
                nb += 1
            losses = {k: v / nb for k, v in sums.items()}
            hue_acc, value_acc = evaluate(model, val_recs, fcfg.batch_size)
            log(EpochStats(epoch, "finetune", losses, hue_acc, value_acc))
            snapshot(last_path, {"phase": "finetune", "epoch": epoch})
            score = (hue_acc + value_acc) / 2
            if score > best_score:
                best_score = score
                snapshot(
                    best_path,
                    {"phase": "finetune", "epoch": epoch,
                     "hue_acc": hue_acc, "value_acc": value_acc},
                )
            betas = adaptive_weights(hue_acc, value_acc, fcfg.acc_floor)
            save_state("finetune", epoch, groups,
                       {"best_score": best_score, "betas": list(betas)})
            final_acc = (hue_acc, value_acc)

    if not os.path.exists(best_path + ".json"):
        snapshot(best_path, {"phase": cfg.phase, "epoch": 0})
    if not os.path.exists(last_path + ".json"):
        snapshot(last_path, {"phase": cfg.phase, "epoch": 0})
    return TrainResult(best_path, last_path, log_path, history, *final_acc)


def masked_validation_mse(model, records, pcfg: PretrainConfig, seed: int, window: int) -> float:
    """Masked-position recovery MSE with fixed per-record masks (comparable
    across epochs)."""
    dtype = next(model.parameters()).dtype
    model.eval()
    se = 0.0
    count = 0
    with torch.no_grad():
        for i, rec in enumerate(records):
            rec = window_sample(rec, window, np.random.default_rng([seed, 0, i, 7]))
            masked, idx = make_mask(rec.features, MaskSpec(pcfg.mask_ratio, seed + 1000 + i))
            recovered = model.forward_mlm(torch.as_tensor(masked, dtype=dtype)).numpy()
            diff = recovered[idx] - rec.features[idx]
            se += float((diff * diff).sum())
            count += diff.size
    return se / max(count, 1)
