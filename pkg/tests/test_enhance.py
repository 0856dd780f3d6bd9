"""
增强服务测试
运行方式: python tests/test_enhance.py
"""
import sys
sys.path.append('.')

import numpy as np

from app.core.config import DegradeConfig, TrainConfig
from app.core.models import Checkpoint, ModelVariant
from app.engine import Tensor, no_grad
from app.network import compensate, init_sdts_params, sdts_forward
from app.services.codec_service import degrade_clip, synth_clip
from app.services.enhance_service import EnhanceService
from app.services.trainer_service import SdtsTrainer, build_pairs
from tests.helpers import run_tests, tiny_net_config


def _service(cfg, params) -> EnhanceService:
    """LQF 与 HQF 共用同一组参数"""
    return EnhanceService({
        variant: Checkpoint(variant=variant, net_config=cfg, params=params)
        for variant in (ModelVariant.LQF, ModelVariant.HQF)
    })


def _clips(kind="translate"):
    raw = synth_clip(kind, 9, 16, 16, shift_px=1.0, seed=4)
    return raw, degrade_clip(raw, DegradeConfig.from_preset("q37"))


def _unit(frame: np.ndarray) -> Tensor:
    return Tensor(frame[None, None] / 255.0)


def test_diagnose_matches_compensation_of_prev_reference():
    cfg = tiny_net_config()
    service = _service(cfg, init_sdts_params(cfg, seed=3, identity_init=False).to_arrays())
    frames = list(_clips()[1].frames)
    diag = service.diagnose_frame(frames, 6, 4)
    assert np.array_equal(diag.target, frames[6]) and np.array_equal(diag.neighbor, frames[4])

    store = service.models[ModelVariant.LQF]
    with no_grad():
        result = compensate(_unit(frames[6]), _unit(frames[4]), store, cfg)
        out = sdts_forward(_unit(frames[4]), _unit(frames[6]), _unit(frames[8]), store, cfg)
    assert np.abs(diag.flow).max() > 0
    assert np.allclose(diag.flow, result.total_flow.data[0], atol=1e-12)
    assert np.allclose(diag.warped, out.warped[0].data[0, 0] * 255.0, atol=1e-9)


def test_diagnose_without_mc_returns_unwarped_neighbor():
    cfg = tiny_net_config(use_mc=False)
    service = _service(cfg, init_sdts_params(cfg, seed=0).to_arrays())
    frames = list(_clips()[1].frames)
    diag = service.diagnose_frame(frames, 5, 4)
    assert np.array_equal(diag.warped, frames[4])
    assert diag.flow.shape == (2, 16, 16) and not diag.flow.any()


def test_still_clip_diagnostics_are_consistent():
    raw, degraded = _clips("still")
    cfg = TrainConfig(batch_size=2, patch_size=16, steps_per_epoch=4, lr=1e-3,
                      phase1_epochs=1, phase2_epochs=0, phase3_epochs=0)
    trainer = SdtsTrainer(tiny_net_config(), cfg, ModelVariant.LQF)
    mc = trainer.train_phase1(build_pairs(raw, degraded, cfg, 4))
    service = _service(trainer.net_cfg, mc.params)

    frames = list(degraded.frames)
    diag = service.diagnose_frame(frames, 6, 4)
    with no_grad():
        out = sdts_forward(
            _unit(frames[4]), _unit(frames[6]), _unit(frames[8]), service.models[ModelVariant.LQF], trainer.net_cfg
        )
    # 原始帧相同，运动估计损失对光流没有梯度
    assert not diag.flow.any()
    assert all(not flow.data.any() for flow in out.flows)
    assert np.allclose(diag.warped, diag.neighbor, atol=1e-9)
    assert np.allclose(out.warped[0].data[0, 0] * 255.0, diag.warped, atol=1e-9)
    assert np.allclose(out.warped[1].data[0, 0] * 255.0, frames[8], atol=1e-9)


if __name__ == "__main__":
    run_tests(globals())
