"""工具模块"""
from .logger import setup_logger, logger

__all__ = ["setup_logger", "logger"]
