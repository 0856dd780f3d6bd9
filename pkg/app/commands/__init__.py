"""
命令行子命令
"""
from . import degrade_command, enhance_command, eval_command, train_command

COMMANDS = [degrade_command, train_command, enhance_command, eval_command]

__all__ = ["COMMANDS", "degrade_command", "train_command", "enhance_command", "eval_command"]
