"""
degrade 子命令 - 用块 DCT 量化模拟编码降质，写出降质片段与标签文件
"""
import argparse
import math

from ..core.config import PRESETS
from ..core.exceptions import CommandError
from ..core.models import ClipRole
from ..services.codec_service import degrade_clip
from ..services.frame_service import PAD_MULTIPLE, get_frame_service, pad_clip
from .common import PartialOutputs, add_config_argument, echo_config, resolve_config


def register(subparsers) -> None:
    parser: argparse.ArgumentParser = subparsers.add_parser("degrade", help="模拟编码降质")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--input", help="原始 PGM 帧目录")
    source.add_argument("--raw-yuv", help="平面 4:2:0 原始文件（只读取亮度）")
    parser.add_argument("--width", type=int, help="原始文件的帧宽")
    parser.add_argument("--height", type=int, help="原始文件的帧高")
    parser.add_argument("--count", type=int, help="原始文件的帧数")
    parser.add_argument("--output", required=True, help="降质帧输出目录")
    parser.add_argument("--preset", choices=sorted(PRESETS), default="q37", help="量化步长预设")
    parser.add_argument("--period", type=int, help="HQF 间隔 P")
    parser.add_argument("--block-size", type=int, help="DCT 块大小")
    parser.add_argument("--q-low", type=float, help="HQF 量化步长（覆盖预设）")
    parser.add_argument("--q-high", type=float, help="LQF 量化步长（覆盖预设）")
    add_config_argument(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    run_cfg = resolve_config(
        args.config,
        {
            "period": args.period,
            "block_size": args.block_size,
            "q_low": args.q_low,
            "q_high": args.q_high,
        },
        preset=args.preset,
    )
    echo_config("degrade", run_cfg, {"input": args.input or args.raw_yuv, "output": args.output, "preset": args.preset})

    frames = get_frame_service()
    if args.raw_yuv:
        if None in (args.width, args.height, args.count):
            raise CommandError("--raw-yuv 需要同时指定 --width --height --count", exit_code=2)
        raw = frames.load_raw_y(args.raw_yuv, args.width, args.height, args.count)
    else:
        raw = frames.load_clip(frames.manifest(args.input, ClipRole.RAW))

    # 补齐到块大小与 4 的公倍数，保存时按 original_size 裁剪回原尺寸
    raw = pad_clip(raw, math.lcm(PAD_MULTIPLE, run_cfg.degrade.block_size))
    degraded = degrade_clip(raw, run_cfg.degrade)
    with PartialOutputs() as outputs:
        outputs.track(args.output)
        manifest = frames.manifest(args.output, ClipRole.DEGRADED)
        for i in range(len(degraded)):
            outputs.track(manifest.frame_path(i))
        written = frames.save_clip(degraded, manifest)

    print(f"✓ 降质完成: {len(degraded)} 帧 → {args.output}（{len(written)} 个文件）")
    return 0
