import json

import numpy as np
import pytest
import torch

from stagelight import synth, training
from stagelight.checkpoint import arrays_to_state_dict, load_checkpoint
from stagelight.model import ModelConfig, MusicLightTransformer

torch.set_num_threads(2)


def tiny_cfg(seed=0, **kw):
    base = dict(feature_dim=16, max_len=256, seed=seed)
    base.update(kw)
    return ModelConfig.tiny(**base)


# -- masking ------------------------------------------------------------------

def test_mask_count_exact():
    masked, idx = training.make_mask(np.zeros((100, 4)), training.MaskSpec(15.0, 0))
    assert len(idx) == 15
    assert masked.shape == (100, 4)
    assert len(set(idx.tolist())) == 15


def test_mask_partitions_positions():
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(64, 5))
    masked, idx = training.make_mask(feats, training.MaskSpec(25.0, 3))
    untouched = np.setdiff1d(np.arange(64), idx)
    assert np.array_equal(masked[untouched], feats[untouched])
    assert not np.array_equal(masked[idx], feats[idx])
    assert len(idx) + len(untouched) == 64


def test_mask_constant_sequence_draws_the_constant():
    feats = np.full((40, 3), 2.5)
    masked, idx = training.make_mask(feats, training.MaskSpec(15.0, 1))
    assert np.array_equal(masked, feats)  # sigma = 0 -> draws equal mu
    assert len(idx) == 6


def test_mask_moments_match_clip_statistics():
    rng = np.random.default_rng(1)
    feats = rng.normal(loc=[1.0, -2.0], scale=[0.5, 2.0], size=(50, 2))
    mu = feats.mean(axis=0)
    sigma = feats.std(axis=0)
    draws = []
    for seed in range(2000):
        masked, idx = training.make_mask(feats, training.MaskSpec(20.0, seed))
        draws.append(masked[idx])
    draws = np.concatenate(draws)  # 2000 * 10 draws per dim
    assert np.all(np.abs(draws.mean(axis=0) - mu) < 0.02 * np.maximum(np.abs(mu), 1))
    assert np.all(np.abs(draws.std(axis=0) - sigma) < 0.02 * sigma)


def test_mask_rejects_empty():
    with pytest.raises(ValueError):
        training.make_mask(np.zeros((0, 3)), training.MaskSpec(15.0, 0))


# -- adaptive weights ---------------------------------------------------------

def test_adaptive_weights_exact_cases():
    assert training.adaptive_weights(0.5, 0.25) == pytest.approx((1 / 3, 2 / 3))
    assert training.adaptive_weights(0.7, 0.7) == pytest.approx((0.5, 0.5))
    b1, b2 = training.adaptive_weights(0.0, 0.5, floor=1e-3)
    assert b1 == pytest.approx(1000 / 1002)
    assert b2 == pytest.approx(2 / 1002)


def test_adaptive_weights_sum_to_one_and_positive():
    rng = np.random.default_rng(2)
    for _ in range(300):
        accs = rng.random(2)
        b1, b2 = training.adaptive_weights(float(accs[0]), float(accs[1]))
        assert b1 + b2 == pytest.approx(1.0)
        assert b1 > 0 and b2 > 0
    b1, b2 = training.adaptive_weights(0.0, 0.0)
    assert (b1, b2) == pytest.approx((0.5, 0.5))


# -- splitting ----------------------------------------------------------------

def test_split_ten_singleton_shows():
    tr, va, te = training.split_dataset([f"s{i}" for i in range(10)], seed=4)
    assert (len(tr), len(va), len(te)) == (8, 1, 1)
    assert sorted(tr + va + te) == list(range(10))


def test_split_is_show_disjoint():
    rng = np.random.default_rng(5)
    shows = [f"show{rng.integers(0, 12)}" for _ in range(200)]
    tr, va, te = training.split_dataset(shows, seed=1)
    groups = [set(shows[i] for i in part) for part in (tr, va, te)]
    assert not (groups[0] & groups[1])
    assert not (groups[0] & groups[2])
    assert not (groups[1] & groups[2])
    assert sorted(tr + va + te) == list(range(200))


def test_split_single_show_warns_and_trains():
    with pytest.warns(UserWarning, match="few shows"):
        tr, va, te = training.split_dataset(["only"] * 7, seed=0)
    assert len(tr) == 7 and not va and not te


def test_split_deterministic_per_seed():
    shows = [f"show{i % 9}" for i in range(60)]
    a = training.split_dataset(shows, seed=3)
    b = training.split_dataset(shows, seed=3)
    c = training.split_dataset(shows, seed=4)
    assert a == b
    assert a != c


# -- steps --------------------------------------------------------------------

def corpus(n=12, frames=96, seed=0):
    return synth.make_corpus(
        synth.SyntheticRule(rule_id="dominant-mel"), n, frames, seed=seed
    )


def test_finetune_step_decreases_loss_on_repeated_batch():
    c = corpus(4)
    model = MusicLightTransformer(tiny_cfg(seed=1, dropout=0.0))
    opt = torch.optim.AdamW(model.parameters(), lr=1e-3)
    feats = np.stack([r.features for r in c.records])
    hues = np.stack([r.hue for r in c.records]).astype(np.int64)
    values = np.stack([r.value for r in c.records]).astype(np.int64)
    cfg = training.FinetuneConfig(lr=1e-3)
    torch.manual_seed(0)
    losses = [
        training.finetune_step(model, (feats, hues, values), opt, (0.5, 0.5), cfg)["L_stf"]
        for _ in range(10)
    ]
    assert losses[-1] < losses[0]
    assert all(np.isfinite(losses))
    # single-batch overfit: monotone decrease over the first 10 steps
    assert all(b < a * 1.05 for a, b in zip(losses, losses[1:]))


def test_pretrain_step_updates_only_owned_parameters():
    c = corpus(4)
    model = MusicLightTransformer(tiny_cfg(seed=2, dropout=0.0))
    pcfg = training.PretrainConfig(lr=1e-3)
    opt_r = torch.optim.AdamW(training.recoverer_parameters(model), lr=1e-3)
    opt_d = torch.optim.AdamW(training.discriminator_parameters(model), lr=1e-3)
    feats = np.stack([r.features for r in c.records])

    before = {k: v.clone() for k, v in model.state_dict().items()}
    opt_r_before = [p.clone() for p in training.recoverer_parameters(model)]
    torch.manual_seed(0)
    parts = training.pretrain_step(model, feats, opt_r, opt_d, pcfg, [1, 2, 3, 4])
    assert set(parts) == {"L_pre", "l1", "l2", "l3", "L_dis"}
    after = model.state_dict()
    changed_disc = [k for k in after if k.startswith("disc_head") and not torch.equal(after[k], before[k])]
    changed_trunk = [k for k in after if not k.startswith("disc_head") and not torch.equal(after[k], before[k])]
    assert changed_disc and changed_trunk  # both updates happened, on disjoint sets


def test_pretrain_perfect_recovery_zeroes_l1_l2():
    model = MusicLightTransformer(tiny_cfg(seed=3, dropout=0.0))
    feats = torch.randn(8, 16)
    parts = training.pretrain_losses(
        model, feats, model.forward_mlm(feats).detach(), np.ones(8, dtype=bool), (1, 1, 0)
    )
    assert float(parts["l1"].detach()) == pytest.approx(0.0, abs=1e-12)
    assert float(parts["l2"].detach()) == pytest.approx(0.0, abs=1e-12)
    assert float(parts["L_pre"].detach()) == pytest.approx(0.0, abs=1e-12)  # alpha3 = 0


def test_evaluate_bounds_and_perfect_memorization():
    c = corpus(3, frames=64)
    model = MusicLightTransformer(tiny_cfg(seed=4, dropout=0.0))
    h, v = training.evaluate(model, c.records)
    assert 0.0 <= h <= 1.0 and 0.0 <= v <= 1.0
    # untrained model on fresh labels sits near chance
    assert h < 0.2 and v < 0.2


def test_evaluate_rejects_empty():
    model = MusicLightTransformer(tiny_cfg(seed=0))
    with pytest.raises(ValueError):
        training.evaluate(model, [])


# -- full runs ----------------------------------------------------------------

def run_config(tmp_path, seed, phase, epochs, **kw):
    return training.RunConfig(
        checkpoint_dir=str(tmp_path / f"ck_{phase}_{seed}"),
        phase=phase,
        seed=seed,
        model=tiny_cfg(seed=seed, dropout=kw.pop("dropout", 0.1)),
        pretrain=training.PretrainConfig(lr=1e-3, batch_size=8, epochs=epochs),
        finetune=training.FinetuneConfig(lr=1e-3, batch_size=8, epochs=epochs),
        log_path=str(tmp_path / f"log_{phase}_{seed}.jsonl"),
        **kw,
    )


def read_log(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh]


def test_train_log_lines_and_checkpoints(tmp_path):
    c = corpus(8, frames=64)
    cfg = run_config(tmp_path, 7, "finetune", 3)
    result = training.train(cfg, c)
    log = read_log(result.log_path)
    assert len(log) == 3
    assert all(rec["phase"] == "finetune" for rec in log)
    assert all("L_stf" in rec and "hue_acc" in rec for rec in log)
    arrays, manifest = load_checkpoint(result.best_checkpoint)
    assert manifest["config"]["d_model"] == 64
    model = MusicLightTransformer(ModelConfig.from_dict(manifest["config"]))
    model.load_state_dict(arrays_to_state_dict(arrays, model))


def test_train_deterministic_replay(tmp_path):
    c = corpus(8, frames=64)
    r1 = training.train(run_config(tmp_path, 9, "both", 2), c)
    r2 = training.train(run_config(tmp_path / "again", 9, "both", 2), c)
    l1, l2 = read_log(r1.log_path), read_log(r2.log_path)
    assert l1 == l2  # bitwise-identical loss curves
    a1, _ = load_checkpoint(r1.last_checkpoint)
    a2, _ = load_checkpoint(r2.last_checkpoint)
    assert all(np.array_equal(a1[k], a2[k]) for k in a1)


def test_train_seed_changes_losses(tmp_path):
    c = corpus(8, frames=64)
    r1 = training.train(run_config(tmp_path, 1, "finetune", 1), c)
    r2 = training.train(run_config(tmp_path, 2, "finetune", 1), c)
    assert read_log(r1.log_path)[0]["L_stf"] != read_log(r2.log_path)[0]["L_stf"]


def test_init_from_pretrained_checkpoint(tmp_path):
    c = corpus(8, frames=64)
    pre = training.train(run_config(tmp_path, 5, "pretrain", 2), c)
    cfg = run_config(tmp_path / "ft", 5, "finetune", 2)
    cfg.init_from = pre.best_checkpoint
    res = training.train(cfg, c)
    assert res.final_hue_acc is not None
    log = read_log(res.log_path)
    assert len(log) == 2


@pytest.mark.parametrize("phase", ["pretrain", "finetune"])
def test_resume_reproduces_uninterrupted_run_bitwise(tmp_path, phase):
    c = corpus(8, frames=64)
    full = training.train(run_config(tmp_path / "full", 5, phase, 4), c)
    full_log = read_log(full.log_path)

    cfg = run_config(tmp_path / "split", 5, phase, 2)
    training.train(cfg, c)
    # continue the same run to 4 epochs from the saved optimizer/RNG state
    cfg2 = run_config(tmp_path / "split", 5, phase, 4)
    cfg2.checkpoint_dir = cfg.checkpoint_dir
    cfg2.log_path = str(tmp_path / f"resumed_{phase}.jsonl")
    resumed = training.train(cfg2, c, resume=True)
    resumed_log = read_log(resumed.log_path)

    assert len(resumed_log) == 2
    assert resumed_log == full_log[2:]  # bitwise-identical subsequent losses
    a_full, _ = load_checkpoint(full.last_checkpoint)
    a_res, _ = load_checkpoint(resumed.last_checkpoint)
    assert all(np.array_equal(a_full[k], a_res[k]) for k in a_full)


def test_run_config_round_trip(tmp_path):
    raw = {
        "dataset": "d.sbl1",
        "phase": "finetune",
        "seed": 3,
        "model": tiny_cfg(seed=3).to_dict(),
        "finetune": {"lr": 0.002, "epochs": 4},
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(raw))
    cfg = training.load_run_config(str(path))
    assert cfg.phase == "finetune"
    assert cfg.finetune.lr == 0.002 and cfg.finetune.epochs == 4
    assert cfg.model.d_model == 64


def test_run_config_rejects_bad_phase(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"phase": "warmup"}))
    with pytest.raises(Exception):
        training.load_run_config(str(path))
