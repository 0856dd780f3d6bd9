"""
配置模型 - 网络结构、训练、降质模拟与运行配置

环境变量通过 python-dotenv 加载:
    SDTS_LOG_LEVEL  日志级别
    SDTS_LOG_DIR    日志目录（空字符串表示只输出到控制台）
    SDTS_WORKERS    增强/评估时的默认并行线程数
"""
import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import ConfigError

load_dotenv()

DEFAULT_WORKERS = int(os.getenv("SDTS_WORKERS", "1"))


# ----------------------------------------------------------------------
# 降质预设: 以量化步长 (q_low, q_high) 代替编码器的 QP 37 / QP 32
# ----------------------------------------------------------------------
PRESETS: Dict[str, Dict[str, float]] = {
    "q37": {"q_low": 24.0, "q_high": 56.0},
    "q32": {"q_low": 16.0, "q_high": 40.0},
}


class NetConfig(BaseModel):
    """SDTS 网络结构配置"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    channels: int = Field(default=32, description="融合与 ENet 的特征通道数")
    blocks: int = Field(default=4, description="Res_Slice_Block 数量")
    slice_split: Optional[int] = Field(default=None, description="短路径通道数，默认 channels/2")
    mc_channels: int = Field(default=16, description="光流估计分支的隐层通道数")
    mc_layers: int = Field(default=5, description="每个光流估计分支的卷积层数")
    mc_radius: int = Field(default=2, description="匹配代价的搜索半径（各分支自身分辨率下的像素数）")
    neighbors: Literal[2] = Field(default=2, description="参考帧数量（前后最近的 HQF）")
    use_mc: bool = Field(default=True, description="False 时为不做运动补偿的 SF 变体")

    @model_validator(mode="before")
    @classmethod
    def _default_split(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("slice_split") is None:
            data = dict(data)
            data["slice_split"] = int(data.get("channels", 32)) // 2
        return data

    @model_validator(mode="after")
    def _check(self) -> "NetConfig":
        if self.channels < 2:
            raise ValueError(f"channels 必须 ≥ 2，当前 {self.channels}")
        if not 0 < self.slice_split < self.channels:
            raise ValueError(
                f"slice_split 必须满足 0 < slice_split < channels，当前 {self.slice_split}/{self.channels}"
            )
        if self.blocks < 1:
            raise ValueError(f"blocks 必须 ≥ 1，当前 {self.blocks}")
        if self.mc_channels < 1 or self.mc_layers < 2:
            raise ValueError("mc_channels 必须 ≥ 1 且 mc_layers ≥ 2")
        if self.mc_radius < 1:
            raise ValueError(f"mc_radius 必须 ≥ 1，当前 {self.mc_radius}")
        return self


class TrainConfig(BaseModel):
    """训练超参数"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    batch_size: int = 8
    lr: float = 1e-4
    decay_epoch: int = 10
    decay_factor: float = 10.0
    total_epochs: int = 30
    lambda2: float = 0.01
    patch_size: int = 32
    seed: int = 0
    phase1_epochs: int = 10
    phase2_epochs: int = 10
    phase3_epochs: int = 10
    steps_per_epoch: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @model_validator(mode="after")
    def _check(self) -> "TrainConfig":
        if self.lambda2 <= 0:
            raise ValueError(f"lambda2 必须 > 0，当前 {self.lambda2}")
        if self.patch_size < 4 or self.patch_size % 4 != 0:
            raise ValueError(f"patch_size 必须是 4 的倍数，当前 {self.patch_size}")
        if self.batch_size < 1 or self.steps_per_epoch < 1:
            raise ValueError("batch_size 与 steps_per_epoch 必须 ≥ 1")
        if self.lr < 0:
            raise ValueError(f"lr 不能为负，当前 {self.lr}")
        if self.decay_factor <= 0:
            raise ValueError(f"decay_factor 必须 > 0，当前 {self.decay_factor}")
        phases = (self.phase1_epochs, self.phase2_epochs, self.phase3_epochs)
        if min(phases) < 0 or sum(phases) > self.total_epochs:
            raise ValueError(
                f"各阶段轮数 {phases} 之和不能超过 total_epochs={self.total_epochs}"
            )
        return self

    def phase_offset(self, phase: int) -> int:
        """返回某个阶段第一轮的全局轮次编号"""
        return (0, self.phase1_epochs, self.phase1_epochs + self.phase2_epochs)[phase - 1]

    def phase_epochs(self, phase: int) -> int:
        return (self.phase1_epochs, self.phase2_epochs, self.phase3_epochs)[phase - 1]


class DegradeConfig(BaseModel):
    """块 DCT 量化降质配置"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    block_size: int = 8
    q_low: float = PRESETS["q37"]["q_low"]
    q_high: float = PRESETS["q37"]["q_high"]
    period: int = 4

    @model_validator(mode="after")
    def _check(self) -> "DegradeConfig":
        if self.block_size < 2:
            raise ValueError(f"block_size 必须 ≥ 2，当前 {self.block_size}")
        if not 1 <= self.q_low < self.q_high:
            raise ValueError(
                f"量化步长必须满足 1 ≤ q_low < q_high，当前 ({self.q_low}, {self.q_high})"
            )
        if self.period < 2:
            raise ValueError(f"period 必须 ≥ 2，当前 {self.period}")
        return self

    @classmethod
    def from_preset(cls, preset: str, **overrides: Any) -> "DegradeConfig":
        if preset not in PRESETS:
            raise ConfigError(f"不支持的预设: {preset}。可用预设: {list(PRESETS.keys())}")
        values = dict(PRESETS[preset])
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**values)
        except ValidationError as e:
            raise ConfigError(f"降质配置非法: {e}") from e


class RunConfig(BaseModel):
    """一次命令行运行的完整有效配置"""
    model_config = ConfigDict(frozen=True)

    net: NetConfig = Field(default_factory=NetConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    degrade: DegradeConfig = Field(default_factory=DegradeConfig)

    def effective_items(self) -> Dict[str, Any]:
        """扁平化后的全部有效配置，用于日志回显"""
        items: Dict[str, Any] = {}
        for section in (self.net, self.train, self.degrade):
            items.update(section.model_dump())
        return items


_SECTIONS: Tuple[Tuple[str, type], ...] = (
    ("net", NetConfig),
    ("train", TrainConfig),
    ("degrade", DegradeConfig),
)


def read_config_file(path: str) -> Dict[str, str]:
    """
    读取扁平 key=value 配置文件

    Args:
        path: 配置文件路径

    Returns:
        原始字符串键值对
    """
    file_path = Path(path)
    if not file_path.is_file():
        raise ConfigError(f"配置文件不存在: {path}")

    values: Dict[str, str] = {}
    for lineno, raw_line in enumerate(file_path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno} 缺少 '=': {raw_line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}:{lineno} 键名为空")
        values[key] = value
    return values


def build_run_config(
    file_values: Optional[Dict[str, Any]] = None,
    overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """
    合并配置文件与命令行参数，生成有效配置

    Args:
        file_values: 配置文件中的键值
        overrides: 命令行参数（None 值表示未指定），优先级高于文件

    Returns:
        RunConfig

    Raises:
        ConfigError: 存在未知键或取值非法
    """
    merged: Dict[str, Any] = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})

    owners = {
        field: name
        for name, model in _SECTIONS
        for field in model.model_fields
    }
    unknown = sorted(k for k in merged if k not in owners)
    if unknown:
        raise ConfigError(f"未知配置项: {', '.join(unknown)}")

    sections: Dict[str, Dict[str, Any]] = {name: {} for name, _ in _SECTIONS}
    for key, value in merged.items():
        sections[owners[key]][key] = value

    try:
        return RunConfig(
            **{name: model(**sections[name]) for name, model in _SECTIONS}
        )
    except ValidationError as e:
        raise ConfigError(f"配置取值非法: {e}") from e
