"""
命令行公共工具 - 配置合并与回显、失败时清理部分输出
"""
import argparse
import shutil
from pathlib import Path
from typing import Any, Dict, List, Optional

from ..core.config import PRESETS, RunConfig, build_run_config, read_config_file
from ..core.exceptions import ConfigError
from ..utils.logger import logger


def add_config_argument(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="key=value 配置文件，命令行参数优先")


def resolve_config(
    config_path: Optional[str],
    overrides: Dict[str, Any],
    preset: Optional[str] = None
) -> RunConfig:
    """
    合并降质预设、配置文件与命令行参数（优先级依次升高）

    Args:
        config_path: 配置文件路径
        overrides: 命令行参数，None 值表示未指定
        preset: 降质预设名

    Returns:
        RunConfig
    """
    values: Dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"不支持的预设: {preset}。可用预设: {list(PRESETS.keys())}")
        values.update(PRESETS[preset])
    if config_path:
        values.update(read_config_file(config_path))
    return build_run_config(values, overrides)


def echo_config(command: str, run_cfg: RunConfig, extra: Optional[Dict[str, Any]] = None) -> None:
    """把全部有效配置逐项写入日志"""
    logger.info(f"命令 {command} 的有效配置:")
    items = dict(extra or {})
    items.update(run_cfg.effective_items())
    for key, value in items.items():
        logger.info(f"  {key} = {value}")


class PartialOutputs:
    """
    记录本次运行新建的输出路径；with 块内出现异常时删除它们

    只记录登记时尚不存在的路径，运行前已有的文件不受影响。
    """

    def __init__(self):
        self._paths: List[Path] = []

    def track(self, path: Optional[str]) -> Optional[str]:
        if path:
            p = Path(path)
            if not p.exists():
                self._paths.append(p)
        return path

    def __enter__(self) -> "PartialOutputs":
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is not None:
            for p in reversed(self._paths):
                if p.is_dir():
                    shutil.rmtree(p, ignore_errors=True)
                elif p.exists():
                    p.unlink()
                logger.warning(f"已删除部分输出: {p}")
        return False
