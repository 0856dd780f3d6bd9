"""
SDTS 压缩视频质量增强 - 命令行入口

用法:
    python -m app.main degrade --input raw/ --output degraded/ --preset q37
    python -m app.main train   --raw raw/ --degraded degraded/ --variant hqf --out hqf.ckpt
    python -m app.main enhance --degraded degraded/ --ckpt-lqf lqf.ckpt --ckpt-hqf hqf.ckpt --output enhanced/
    python -m app.main eval    --raw raw/ --degraded degraded/ --enhanced enhanced/ --report r.csv --plot p.svg
"""
import argparse
import sys
from typing import List, Optional

from dotenv import load_dotenv

from app import __version__
from app.commands import COMMANDS
from app.core.exceptions import CommandError, SdtsError
from app.utils.logger import logger

# 加载环境变量
load_dotenv()


def build_parser() -> argparse.ArgumentParser:
    """构造命令行解析器，每个子命令模块注册自己的参数"""
    parser = argparse.ArgumentParser(
        prog="sdts",
        description="SDTS 压缩视频质量增强: 降质模拟、三阶段训练、增强与 ΔPSNR 评估",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    执行一个子命令

    Returns:
        退出码: 0 成功；1 运行失败；2 用法错误
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except CommandError as e:
        logger.error(f"{args.command} 失败: {e.detail}")
        print(f"❌ {e.detail}", file=sys.stderr)
        return e.exit_code
    except (SdtsError, OSError, ValueError) as e:
        logger.error(f"{args.command} 失败: {str(e)}")
        print(f"❌ {str(e)}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
