"""
领域模型定义

帧统一以 float64 的 h×w 数组表示，取值范围 [0, 255]（单通道亮度）。
"""
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config import NetConfig, TrainConfig


class FrameLabel(str, Enum):
    """帧质量标签"""
    HQF = "HQF"
    LQF = "LQF"


class ClipRole(str, Enum):
    """片段角色"""
    RAW = "raw"
    DEGRADED = "degraded"
    ENHANCED = "enhanced"


class ModelVariant(str, Enum):
    """模型变体: 仅运动补偿 / 低质量帧模型 / 高质量帧模型"""
    MC = "mc"
    LQF = "lqf"
    HQF = "hqf"


class Clip(BaseModel):
    """
    视频片段: 有序的单通道帧序列及每帧质量标签

    original_size 记录补齐到 4 的倍数之前的 (h, w)，保存时按它裁剪。
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    frames: List[np.ndarray]
    labels: Optional[List[FrameLabel]] = None
    role: ClipRole = ClipRole.RAW
    original_size: Optional[Tuple[int, int]] = None

    @model_validator(mode="after")
    def _check(self) -> "Clip":
        shapes = {np.shape(f) for f in self.frames}
        if len(shapes) > 1:
            raise ValueError(f"片段内帧尺寸不一致: {sorted(shapes)}")
        for frame in self.frames:
            if np.ndim(frame) != 2:
                raise ValueError(f"帧必须是二维数组，当前维度 {np.ndim(frame)}")
        if self.labels is not None and len(self.labels) != len(self.frames):
            raise ValueError(
                f"标签数量 {len(self.labels)} 与帧数量 {len(self.frames)} 不一致"
            )
        return self

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return int(self.frames[0].shape[0])

    @property
    def width(self) -> int:
        return int(self.frames[0].shape[1])

    @property
    def size(self) -> Tuple[int, int]:
        """保存时使用的原始尺寸"""
        return self.original_size or (self.height, self.width)

    def stack(self) -> np.ndarray:
        """返回 (T, h, w) 数组"""
        return np.stack(self.frames).astype(np.float64)


class ClipManifest(BaseModel):
    """帧目录描述（由命令行参数构造，没有独立的文件格式）"""
    directory: str
    pattern: str = "frame_{:04d}.pgm"
    width: Optional[int] = None
    height: Optional[int] = None
    count: Optional[int] = None
    role: ClipRole = ClipRole.RAW

    def frame_path(self, index: int) -> str:
        return str(Path(self.directory) / self.pattern.format(index))


class TrainingPair(BaseModel):
    """
    训练样本: 同一位置裁剪出的原始/压缩目标块及前后最近 HQF 参考块
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    index: int
    prev_index: int
    next_index: int
    label: FrameLabel
    origin: Tuple[int, int]
    raw_target: np.ndarray
    comp_target: np.ndarray
    comp_prev: np.ndarray
    comp_next: np.ndarray
    raw_prev: np.ndarray
    raw_next: np.ndarray


class Checkpoint(BaseModel):
    """
    某个模型变体的参数集合及训练元数据
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    variant: ModelVariant
    net_config: NetConfig
    params: Dict[str, np.ndarray]
    train_config: Optional[TrainConfig] = None
    seed: int = 0
    epoch: int = 0
    phase: int = 0
    preset: Optional[str] = None
    provenance: List[str] = Field(default_factory=list)

    def describe(self) -> str:
        """用于溯源链的一行描述"""
        return (
            f"{self.variant.value}:phase{self.phase}:epoch{self.epoch}"
            f":seed{self.seed}:preset={self.preset or '-'}"
        )


class MetricsRow(BaseModel):
    """单帧评估结果"""
    frame_index: int
    label: FrameLabel
    model_used: ModelVariant
    psnr_in: float
    psnr_out: float
    delta_psnr: float


def _mean(values: List[float]) -> float:
    return sum(values) / len(values) if values else 0.0


class MetricsReport(BaseModel):
    """逐帧 PSNR / ΔPSNR 报告及汇总"""
    rows: List[MetricsRow] = Field(default_factory=list)

    @property
    def mean_delta(self) -> float:
        return _mean([r.delta_psnr for r in self.rows])

    @property
    def mean_delta_hqf(self) -> float:
        return _mean([r.delta_psnr for r in self.rows if r.label == FrameLabel.HQF])

    @property
    def mean_delta_lqf(self) -> float:
        return _mean([r.delta_psnr for r in self.rows if r.label == FrameLabel.LQF])

    @property
    def mean_psnr_in(self) -> float:
        return _mean([r.psnr_in for r in self.rows])

    @property
    def mean_psnr_out(self) -> float:
        return _mean([r.psnr_out for r in self.rows])

    def summary(self) -> Dict[str, float]:
        return {
            "frames": len(self.rows),
            "mean_delta_psnr": self.mean_delta,
            "mean_delta_psnr_hqf": self.mean_delta_hqf,
            "mean_delta_psnr_lqf": self.mean_delta_lqf,
            "mean_psnr_in": self.mean_psnr_in,
            "mean_psnr_out": self.mean_psnr_out,
        }
