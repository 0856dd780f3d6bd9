"""核心模块: 配置、领域模型与异常"""
from .config import (
    PRESETS,
    DEFAULT_WORKERS,
    NetConfig,
    TrainConfig,
    DegradeConfig,
    RunConfig,
    read_config_file,
    build_run_config,
)
from .exceptions import (
    SdtsError,
    ShapeMismatchError,
    ConfigError,
    FrameIOError,
    CheckpointError,
    TrainingDivergedError,
    CommandError,
)
from .models import (
    FrameLabel,
    ClipRole,
    ModelVariant,
    Clip,
    ClipManifest,
    TrainingPair,
    Checkpoint,
    MetricsRow,
    MetricsReport,
)

__all__ = [
    "PRESETS",
    "DEFAULT_WORKERS",
    "NetConfig",
    "TrainConfig",
    "DegradeConfig",
    "RunConfig",
    "read_config_file",
    "build_run_config",
    "SdtsError",
    "ShapeMismatchError",
    "ConfigError",
    "FrameIOError",
    "CheckpointError",
    "TrainingDivergedError",
    "CommandError",
    "FrameLabel",
    "ClipRole",
    "ModelVariant",
    "Clip",
    "ClipManifest",
    "TrainingPair",
    "Checkpoint",
    "MetricsRow",
    "MetricsReport",
]
