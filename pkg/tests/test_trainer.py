"""
训练服务测试
运行方式: python tests/test_trainer.py
"""
import itertools
import math
import os
import sys
import tempfile
import time
from functools import lru_cache
sys.path.append('.')

import numpy as np
import pytest

from app.core.config import DegradeConfig, NetConfig, TrainConfig
from app.core.exceptions import ConfigError, ShapeMismatchError, TrainingDivergedError
from app.core.models import Checkpoint, Clip, ClipRole, FrameLabel, ModelVariant
from app.engine import Tensor, bilinear_sample, mse_loss, no_grad
from app.network import compensate, mc_loss, sdts_forward
from app.services.codec_service import degrade_clip, synth_clip
from app.services.enhance_service import EnhanceService
from app.services.eval_service import error_map, evaluate_clip
from app.services.trainer_service import (
    LossLog,
    SdtsTrainer,
    build_pairs,
    collate,
    lr_schedule,
    route_frame,
)
from tests.helpers import run_tests, slow, tiny_net_config


def _fast_train_config(**overrides) -> TrainConfig:
    values = dict(
        batch_size=2, patch_size=8, steps_per_epoch=2,
        phase1_epochs=1, phase2_epochs=1, phase3_epochs=1,
        total_epochs=3, decay_epoch=2, lr=1e-3, seed=0,
    )
    values.update(overrides)
    return TrainConfig(**values)


def _clips(kind="translate", n=9, size=16, seed=0):
    raw = synth_clip(kind, n, size, size, shift_px=1.0, seed=seed)
    return raw, degrade_clip(raw, DegradeConfig.from_preset("q37"))


# ============================================================
# 路由
# ============================================================

def test_route_examples():
    assert route_frame(5, 4, 16) == (ModelVariant.LQF, 4, 8)
    assert route_frame(8, 4, 16) == (ModelVariant.HQF, 4, 12)
    assert route_frame(0, 4, 16) == (ModelVariant.HQF, 0, 4)


def test_route_boundaries():
    assert route_frame(12, 4, 16) == (ModelVariant.HQF, 8, 12)
    assert route_frame(14, 4, 16) == (ModelVariant.LQF, 12, 12)
    with pytest.raises(IndexError):
        route_frame(16, 4, 16)
    with pytest.raises(IndexError):
        route_frame(-1, 4, 16)


def test_route_partitions_frames():
    for n in (5, 9, 15, 16):
        for i in range(n):
            route = route_frame(i, 4, n)
            assert (route.variant == ModelVariant.HQF) == (i % 4 == 0)
            assert route.prev_ref % 4 == 0 and route.next_ref % 4 == 0
            assert route.prev_ref <= i or route.prev_ref == 0
            assert route.next_ref < n


# ============================================================
# 学习率
# ============================================================

def test_lr_schedule_defaults():
    cfg = TrainConfig()
    assert lr_schedule(0, cfg) == 1e-4
    assert math.isclose(lr_schedule(10, cfg), 1e-5, rel_tol=1e-12)
    assert math.isclose(lr_schedule(29, cfg), 1e-5, rel_tol=1e-12)
    with pytest.raises(ValueError):
        lr_schedule(30, cfg)
    assert cfg.batch_size == 8 and cfg.lambda2 == 0.01


# ============================================================
# 训练样本
# ============================================================

def test_pairs_are_seeded_and_exact_crops():
    raw, degraded = _clips()
    cfg = _fast_train_config()
    a = build_pairs(raw, degraded, cfg, 4)
    b = build_pairs(raw, degraded, cfg, 4)
    for _ in range(10):
        p, q = next(a), next(b)
        assert (p.index, p.origin) == (q.index, q.origin)
        route = route_frame(p.index, 4, len(raw))
        assert (p.prev_index, p.next_index) == (route.prev_ref, route.next_ref)
        y, x = p.origin
        assert np.array_equal(p.raw_target, raw.frames[p.index][y:y + 8, x:x + 8])
        assert np.array_equal(p.comp_prev, degraded.frames[p.prev_index][y:y + 8, x:x + 8])
        assert np.array_equal(p.raw_next, raw.frames[p.next_index][y:y + 8, x:x + 8])


def test_pairs_filter_by_variant():
    raw, degraded = _clips()
    pairs = build_pairs(raw, degraded, _fast_train_config(), 4, ModelVariant.HQF)
    assert all(next(pairs).label == FrameLabel.HQF for _ in range(10))


def test_pairs_reject_short_or_misaligned_clips():
    raw, degraded = _clips(n=4)
    with pytest.raises(ConfigError):
        next(build_pairs(raw, degraded, _fast_train_config(), 4))
    raw, degraded = _clips()
    with pytest.raises(ShapeMismatchError):
        next(build_pairs(raw, Clip(frames=degraded.frames[:-1]), _fast_train_config(), 4))


def test_collate_normalizes():
    raw, degraded = _clips()
    pairs = build_pairs(raw, degraded, _fast_train_config(), 4)
    items = [next(pairs) for _ in range(3)]
    batch = collate(items)
    assert batch.raw_target.shape == (3, 1, 8, 8)
    assert np.array_equal(batch.comp_next.data[1, 0], items[1].comp_next / 255.0)


# ============================================================
# 三阶段训练
# ============================================================

def _trainer(variant=ModelVariant.LQF, **cfg_overrides):
    return SdtsTrainer(tiny_net_config(), _fast_train_config(**cfg_overrides), variant, preset="q37")


def test_phase1_trains_only_mc():
    raw, degraded = _clips()
    trainer = _trainer()
    before = trainer.store.to_arrays()
    ckpt = trainer.train_phase1(build_pairs(raw, degraded, trainer.train_cfg, 4))
    assert ckpt.variant == ModelVariant.MC and ckpt.phase == 1
    after = trainer.store.to_arrays()
    for name in before:
        changed = not np.array_equal(before[name], after[name])
        if not name.startswith("mc."):
            assert not changed, name
    records = trainer.loss_log.records
    assert len(records) == 2
    assert all(r.loss_enet == 0.0 and r.loss_total == r.loss_me for r in records)


def test_phase2_freezes_mc():
    raw, degraded = _clips()
    trainer = _trainer()
    pairs = build_pairs(raw, degraded, trainer.train_cfg, 4)
    mc = trainer.train_phase1(pairs)
    ckpt = trainer.train_phase2(pairs, mc)
    for name, value in mc.params.items():
        if name.startswith("mc."):
            assert np.array_equal(ckpt.params[name], value), name
    assert any(not np.array_equal(ckpt.params[n], mc.params[n]) for n in mc.params if n.startswith("enet."))
    phase2 = [r for r in trainer.loss_log.records if r.epoch == 1]
    assert all(r.loss_me == 0.0 and r.loss_total == r.loss_enet for r in phase2)


def test_phase3_joint_loss_identity_and_schedule():
    raw, degraded = _clips()
    trainer = _trainer()
    ckpt = trainer.run_all(build_pairs(raw, degraded, trainer.train_cfg, 4))
    assert ckpt.variant == ModelVariant.LQF and ckpt.phase == 3 and ckpt.epoch == 3
    phase3 = [r for r in trainer.loss_log.records if r.epoch == 2]
    assert phase3
    for r in phase3:
        assert r.loss_total == r.loss_me + 0.01 * r.loss_enet
        assert math.isclose(r.lr, 1e-4, rel_tol=1e-12)
    assert [r.step for r in trainer.loss_log.records] == list(range(6))


def test_training_is_deterministic():
    raw, degraded = _clips()

    def run():
        trainer = _trainer(seed=7)
        ckpt = trainer.run_all(build_pairs(raw, degraded, trainer.train_cfg, 4))
        return ckpt, trainer.loss_log.records

    (a, log_a), (b, log_b) = run(), run()
    assert list(a.params) == list(b.params)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert log_a == log_b


def test_loss_log_csv_round_trip():
    raw, degraded = _clips()
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "loss.csv")
        with LossLog(path) as log:
            trainer = SdtsTrainer(tiny_net_config(), _fast_train_config(), ModelVariant.HQF, loss_log=log)
            trainer.run_all(build_pairs(raw, degraded, trainer.train_cfg, 4, ModelVariant.HQF))
        with open(path, encoding="utf-8") as f:
            assert f.readline().strip() == "step,epoch,lr,loss_me,loss_enet,loss_total"
        assert LossLog.read(path) == log.records


def test_finetune_with_zero_lr_keeps_parameters():
    raw, degraded = _clips()
    trainer = _trainer()
    src = trainer.run_all(build_pairs(raw, degraded, trainer.train_cfg, 4))
    tuner = _trainer(lr=0.0)
    ckpt = tuner.finetune_from(src, build_pairs(raw, degraded, tuner.train_cfg, 4))
    assert all(np.array_equal(ckpt.params[k], src.params[k]) for k in src.params)
    assert ckpt.provenance[-1] == src.describe()


def test_finetune_rejects_config_mismatch():
    raw, degraded = _clips()
    trainer = _trainer()
    src = trainer.run_all(build_pairs(raw, degraded, trainer.train_cfg, 4))
    other = SdtsTrainer(tiny_net_config(channels=6), _fast_train_config(), ModelVariant.LQF)
    with pytest.raises(ConfigError):
        other.finetune_from(src, build_pairs(raw, degraded, other.train_cfg, 4))


def test_non_finite_loss_aborts():
    raw, degraded = _clips()
    frames = [f.copy() for f in raw.frames]
    for f in frames:
        f[:, :] = np.nan
    broken = Clip(frames=frames, role=ClipRole.RAW)
    trainer = _trainer()
    with pytest.raises(TrainingDivergedError) as info:
        trainer.train_phase1(build_pairs(broken, degraded, trainer.train_cfg, 4))
    assert info.value.step == 0 and info.value.last_good_step == -1


def test_sf_variant_skips_phase1():
    raw, degraded = _clips()
    trainer = SdtsTrainer(tiny_net_config(use_mc=False), _fast_train_config(), ModelVariant.LQF)
    with pytest.raises(ConfigError):
        trainer.train_phase1(build_pairs(raw, degraded, trainer.train_cfg, 4))
    ckpt = trainer.run_all(build_pairs(raw, degraded, trainer.train_cfg, 4))
    assert not any(name.startswith("mc.") for name in ckpt.params)
    assert {r.epoch for r in trainer.loss_log.records} == {1, 2}


def test_phase2_rejects_non_mc_checkpoint():
    raw, degraded = _clips()
    trainer = _trainer()
    pairs = build_pairs(raw, degraded, trainer.train_cfg, 4)
    full = trainer.run_all(pairs)
    with pytest.raises(ConfigError, match="mc"):
        _trainer().train_phase2(pairs, full)


def test_phase3_requires_phase2_checkpoint_of_same_variant():
    raw, degraded = _clips()
    trainer = _trainer()
    pairs = build_pairs(raw, degraded, trainer.train_cfg, 4)
    mc = trainer.train_phase1(pairs)
    with pytest.raises(ConfigError, match="阶段 2"):
        _trainer().train_phase3(pairs, mc)
    partial = trainer.train_phase2(pairs, mc)
    with pytest.raises(ConfigError, match="hqf"):
        _trainer(ModelVariant.HQF).train_phase3(pairs, partial)
    ckpt = _trainer().train_phase3(pairs, partial)
    assert ckpt.phase == 3 and ckpt.provenance[-1] == partial.describe()


def test_phase2_loss_strictly_decreases_on_fixed_batch():
    raw, degraded = _clips()
    cfg = TrainConfig(batch_size=4, patch_size=16, steps_per_epoch=8,
                      phase1_epochs=1, phase2_epochs=1, phase3_epochs=0)
    fixed = list(itertools.islice(build_pairs(raw, degraded, cfg, 4), cfg.batch_size))
    trainer = SdtsTrainer(tiny_net_config(), cfg, ModelVariant.LQF)
    trainer.train_phase2(itertools.cycle(fixed))
    losses = [r.loss_total for r in trainer.loss_log.records]
    assert len(losses) == 8
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def _fixture_loss(trainer: SdtsTrainer, batch) -> float:
    """阶段 3 的联合损失（不更新参数）"""
    with no_grad():
        out = sdts_forward(batch.comp_prev, batch.comp_target, batch.comp_next, trainer.store, trainer.net_cfg)
        me = mc_loss(batch.raw_target, [batch.raw_prev, batch.raw_next], out.flows)
        enet = mse_loss(out.recon, batch.raw_target)
    return me.item() + trainer.train_cfg.lambda2 * enet.item()


def test_finetune_warm_start_needs_fewer_steps():
    raw = synth_clip("translate", 9, 16, 16, shift_px=1.0, seed=0)
    q37 = degrade_clip(raw, DegradeConfig.from_preset("q37"))
    q32 = degrade_clip(raw, DegradeConfig.from_preset("q32"))

    source_cfg = _fast_train_config(steps_per_epoch=16)
    source = SdtsTrainer(tiny_net_config(), source_cfg, ModelVariant.LQF, preset="q37")
    src = source.run_all(build_pairs(raw, q37, source_cfg, 4))

    cfg = _fast_train_config(steps_per_epoch=4)
    fixture = collate(list(itertools.islice(build_pairs(raw, q32, cfg.model_copy(update={"seed": 99}), 4), 8)))

    scratch = SdtsTrainer(tiny_net_config(), cfg, ModelVariant.LQF, preset="q32")
    scratch.run_all(build_pairs(raw, q32, cfg, 4))
    warm = SdtsTrainer(tiny_net_config(), cfg, ModelVariant.LQF, preset="q32")
    warm.finetune_from(src, build_pairs(raw, q32, cfg, 4))

    assert 2 * len(warm.loss_log.records) <= len(scratch.loss_log.records)
    assert _fixture_loss(warm, fixture) <= _fixture_loss(scratch, fixture)


# ============================================================
# 长时间训练用例
# ============================================================

@lru_cache(maxsize=None)
def _phase1_on(kind: str, shift_px: float):
    """默认网络与学习率下只训练 MC: 32×32 片段、整帧训练块、300 步"""
    raw = synth_clip(kind, 9, 32, 32, shift_px=shift_px, seed=21)
    degraded = degrade_clip(raw, DegradeConfig.from_preset("q37"))
    cfg = TrainConfig(patch_size=32, steps_per_epoch=30, phase1_epochs=10, phase2_epochs=0, phase3_epochs=0)
    trainer = SdtsTrainer(NetConfig(), cfg, ModelVariant.LQF)
    trainer.train_phase1(build_pairs(raw, degraded, cfg, 4, ModelVariant.LQF))
    return raw, degraded, trainer


def _flow_and_warp(trainer: SdtsTrainer, raw: Clip, degraded: Clip, target: int, neighbor: int):
    """由降质帧估计光流，再用它 warp 原始参考帧"""
    with no_grad():
        flow = compensate(
            Tensor(degraded.frames[target][None, None] / 255.0),
            Tensor(degraded.frames[neighbor][None, None] / 255.0),
            trainer.store,
            trainer.net_cfg,
        ).total_flow
        warped = bilinear_sample(Tensor(raw.frames[neighbor][None, None]), flow)
    return flow.data[0], warped.data[0, 0]


INTERIOR = (slice(4, -4), slice(4, -4))


@slow
def test_phase1_learns_translation_flow():
    raw, degraded, trainer = _phase1_on("translate", 2.0)
    losses = [r.loss_me for r in trainer.loss_log.records]
    assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:10])

    # 帧 5 相对帧 4 右移 2 像素: 从参考帧取样的位置在左侧 2 像素
    flow, warped = _flow_and_warp(trainer, raw, degraded, 5, 4)
    dx = flow[0][INTERIOR].mean()
    assert -2.6 <= dx <= -1.4, dx
    target, neighbor = raw.frames[5][INTERIOR], raw.frames[4][INTERIOR]
    assert np.mean((warped[INTERIOR] - target) ** 2) <= 0.5 * np.mean((neighbor - target) ** 2)


@slow
def test_phase1_resolves_subpixel_translation():
    raw, degraded, trainer = _phase1_on("translate", 0.5)
    flow, _ = _flow_and_warp(trainer, raw, degraded, 5, 4)
    error = np.hypot(flow[0] + 0.5, flow[1])[INTERIOR]
    assert np.median(error) < 0.25, np.median(error)


@slow
def test_phase1_keeps_still_scene_flow_near_zero():
    raw, degraded, trainer = _phase1_on("still", 2.0)
    assert len(trainer.loss_log.records) == 300
    flow, _ = _flow_and_warp(trainer, raw, degraded, 5, 4)
    assert np.abs(flow).mean() < 0.1


@slow
def test_trained_mc_lowers_error_map():
    raw, degraded, trainer = _phase1_on("translate", 2.0)
    params = trainer.store.to_arrays()
    service = EnhanceService({
        variant: Checkpoint(variant=variant, net_config=trainer.net_cfg, params=params)
        for variant in (ModelVariant.LQF, ModelVariant.HQF)
    })
    diag = service.diagnose_frame(list(degraded.frames), 5, 4)
    with_mc = error_map(diag.target, diag.warped)[INTERIOR].mean()
    without_mc = error_map(diag.target, diag.neighbor)[INTERIOR].mean()
    assert with_mc < without_mc


@slow
def test_end_to_end_default_config_improves_psnr():
    raw = synth_clip("translate", 16, 32, 32, shift_px=1.0, seed=31)
    degraded = degrade_clip(raw, DegradeConfig.from_preset("q37"))
    cfg = TrainConfig()
    after_phase2, after_phase3 = {}, {}
    started = time.monotonic()
    for variant in (ModelVariant.LQF, ModelVariant.HQF):
        trainer = SdtsTrainer(NetConfig(), cfg, variant)
        pairs = build_pairs(raw, degraded, cfg, 4, variant)
        mc = trainer.train_phase1(pairs)
        after_phase2[variant] = trainer.train_phase2(pairs, mc)
        after_phase3[variant] = trainer.train_phase3(pairs, after_phase2[variant])
        assert len(trainer.loss_log.records) == cfg.total_epochs * cfg.steps_per_epoch
    assert time.monotonic() - started < 15 * 60

    report2 = evaluate_clip(raw, degraded, after_phase2, period=4)
    report3 = evaluate_clip(raw, degraded, after_phase3, period=4)
    assert len(report3.rows) == 16
    assert report3.mean_delta >= 0.5, report3.mean_delta
    # 阶段 3 的联合微调不应让增强效果倒退
    assert report3.mean_delta >= report2.mean_delta - 0.05


if __name__ == "__main__":
    run_tests(globals())
