"""
异常定义
"""
from typing import Dict, Optional


class SdtsError(Exception):
    """所有领域异常的基类"""
    pass


class ShapeMismatchError(SdtsError, ValueError):
    """张量或帧的维度不一致"""
    pass


class ConfigError(SdtsError, ValueError):
    """配置项非法、未知，或检查点之间 NetConfig 不一致"""
    pass


class FrameIOError(SdtsError, OSError):
    """帧文件缺失、格式不支持或原始文件长度不足"""
    pass


class CheckpointError(SdtsError, ValueError):
    """检查点文件损坏或版本不支持"""
    pass


class TrainingDivergedError(SdtsError, RuntimeError):
    """训练损失出现 NaN/Inf"""

    def __init__(
        self,
        step: int,
        last_good_step: int,
        losses: Optional[Dict[str, float]] = None
    ):
        self.step = step
        self.last_good_step = last_good_step
        self.losses = losses or {}
        detail = ", ".join(f"{k}={v!r}" for k, v in self.losses.items())
        super().__init__(
            f"训练发散: 第 {step} 步损失非有限值 ({detail})，最后正常步: {last_good_step}"
        )


class CommandError(SdtsError):
    """
    命令行层面的失败，携带退出码

    相当于 HTTP 接口中的 HTTPException(status_code, detail)
    """

    def __init__(self, detail: str, exit_code: int = 1):
        self.detail = detail
        self.exit_code = exit_code
        super().__init__(detail)
