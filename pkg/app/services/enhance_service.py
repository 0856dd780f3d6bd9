"""
增强服务 - 逐帧路由到 LQF/HQF 模型并执行推理

每帧使用前后最近的 HQF（降质帧）作为参考；推理在 no_grad 下进行，
各帧可并行处理，结果始终按帧号排列。
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from ..core.config import DEFAULT_WORKERS, NetConfig
from ..core.exceptions import ConfigError
from ..core.models import Checkpoint, Clip, ClipRole, ModelVariant
from ..engine import Tensor, no_grad
from ..network import ParamStore, compensate, init_sdts_params, sdts_forward
from ..utils.logger import logger
from .frame_service import PAD_MULTIPLE, crop_frame, pad_frame, quantize_frame
from .trainer_service import FrameRoute, route_frame

REQUIRED_VARIANTS = (ModelVariant.LQF, ModelVariant.HQF)


class EnhanceResult(NamedTuple):
    clip: Clip
    routes: List[FrameRoute]


class Diagnostics(NamedTuple):
    """单帧运动补偿诊断，像素取值 [0, 255]，光流为 (2, h, w)"""
    target: np.ndarray
    neighbor: np.ndarray
    warped: np.ndarray
    flow: np.ndarray


class EnhanceService:
    """持有 LQF/HQF 两个只读模型的增强服务"""

    def __init__(self, checkpoints: Dict[ModelVariant, Checkpoint]):
        """
        初始化增强服务

        Args:
            checkpoints: {lqf: 检查点, hqf: 检查点}，两者 NetConfig 必须一致
        """
        missing = [v.value for v in REQUIRED_VARIANTS if v not in checkpoints]
        if missing:
            raise ConfigError(f"缺少模型检查点: {', '.join(missing)}")
        for key in REQUIRED_VARIANTS:
            if checkpoints[key].variant != key:
                raise ConfigError(
                    f"检查点变体不符: 需要 {key.value}，实际 {checkpoints[key].variant.value}"
                )
        net_cfg = checkpoints[ModelVariant.LQF].net_config
        if checkpoints[ModelVariant.HQF].net_config != net_cfg:
            raise ConfigError("LQF 与 HQF 检查点的 NetConfig 不一致")

        self.net_cfg: NetConfig = net_cfg
        self.models: Dict[ModelVariant, ParamStore] = {}
        for key in REQUIRED_VARIANTS:
            store = init_sdts_params(net_cfg, seed=0)
            store.load_arrays(checkpoints[key].params)
            for tensor in store:
                tensor.requires_grad = False
            self.models[key] = store

    def enhance_frame(self, frames: List[np.ndarray], route: FrameRoute, index: int) -> np.ndarray:
        """
        增强一帧

        Args:
            frames: 已补齐的降质帧（取值 [0, 255]）
            route: 路由结果
            index: 目标帧号

        Returns:
            增强后的帧，已四舍五入并截断到 [0, 255]
        """
        def as_input(i: int) -> Tensor:
            return Tensor(frames[i][None, None] / 255.0)

        with no_grad():
            out = sdts_forward(
                as_input(route.prev_ref), as_input(index), as_input(route.next_ref),
                self.models[route.variant], self.net_cfg
            )
        return quantize_frame(out.recon.data[0, 0] * 255.0)

    def diagnose_frame(self, frames: List[np.ndarray], index: int, period: int) -> Diagnostics:
        """
        运动补偿诊断: 前一个参考 HQF 补偿前后与目标帧的差异及总光流

        Args:
            frames: 已补齐的降质帧
            index: 目标帧号
            period: HQF 间隔 P
        """
        route = route_frame(index, period, len(frames))
        neighbor = frames[route.prev_ref]
        if not self.net_cfg.use_mc:
            return Diagnostics(
                target=frames[index], neighbor=neighbor, warped=neighbor, flow=np.zeros((2,) + neighbor.shape)
            )
        with no_grad():
            result = compensate(
                Tensor(frames[index][None, None] / 255.0),
                Tensor(neighbor[None, None] / 255.0),
                self.models[route.variant],
                self.net_cfg,
            )
        return Diagnostics(
            target=frames[index],
            neighbor=neighbor,
            warped=result.warped.data[0, 0] * 255.0,
            flow=result.total_flow.data[0],
        )

    def enhance_clip(self, degraded: Clip, period: int, workers: Optional[int] = None) -> EnhanceResult:
        """
        增强整个降质片段

        Args:
            degraded: 降质片段
            period: HQF 间隔 P
            workers: 并行线程数，默认 SDTS_WORKERS；结果与线程数无关

        Returns:
            EnhanceResult(增强片段, 每帧路由)
        """
        n = len(degraded)
        if n == 0:
            raise ValueError("enhance_clip: 片段为空")
        routes = [route_frame(i, period, n) for i in range(n)]
        if degraded.labels is not None:
            mismatched = [i for i, r in enumerate(routes) if r.label != degraded.labels[i]]
            if mismatched:
                raise ConfigError(
                    f"标签与 period={period} 的路由不一致，首个不一致帧: {mismatched[0]}"
                )

        size = (degraded.height, degraded.width)
        frames = [pad_frame(np.asarray(f, dtype=np.float64), PAD_MULTIPLE) for f in degraded.frames]
        workers = max(1, workers or DEFAULT_WORKERS)

        for i, route in enumerate(routes):
            logger.debug(f"路由: 帧 {i} → {route.variant.value} (prev={route.prev_ref}, next={route.next_ref})")

        with ThreadPoolExecutor(max_workers=workers) as pool:
            enhanced = list(pool.map(lambda i: self.enhance_frame(frames, routes[i], i), range(n)))

        logger.info(f"增强完成: {n} 帧，{workers} 个线程")
        clip = Clip(
            frames=[crop_frame(f, size) for f in enhanced],
            labels=[r.label for r in routes],
            role=ClipRole.ENHANCED,
            original_size=degraded.original_size,
        )
        return EnhanceResult(clip=clip, routes=routes)


def enhance_clip(
    degraded: Clip,
    checkpoints: Dict[ModelVariant, Checkpoint],
    period: int,
    workers: Optional[int] = None
) -> EnhanceResult:
    """按路由增强片段"""
    return EnhanceService(checkpoints).enhance_clip(degraded, period, workers)


def get_enhance_service(checkpoints: Dict[ModelVariant, Checkpoint]) -> EnhanceService:
    """获取增强服务实例"""
    return EnhanceService(checkpoints)
