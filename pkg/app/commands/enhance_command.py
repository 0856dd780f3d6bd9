"""
enhance 子命令 - 按 HQF/LQF 路由增强降质片段
"""
import argparse
from pathlib import Path

from ..core.models import ClipRole, ModelVariant
from ..services.checkpoint_store import get_checkpoint_store
from ..services.enhance_service import get_enhance_service
from ..services.eval_service import error_map, flow_magnitude_map
from ..services.frame_service import crop_frame, get_frame_service, pad_frame
from ..utils.logger import logger
from .common import PartialOutputs, add_config_argument, echo_config, resolve_config


def register(subparsers) -> None:
    parser: argparse.ArgumentParser = subparsers.add_parser("enhance", help="增强降质片段")
    parser.add_argument("--degraded", required=True, help="降质 PGM 帧目录")
    parser.add_argument("--ckpt-lqf", required=True, help="LQF 模型检查点")
    parser.add_argument("--ckpt-hqf", required=True, help="HQF 模型检查点")
    parser.add_argument("--period", type=int, help="HQF 间隔 P")
    parser.add_argument("--output", required=True, help="增强帧输出目录")
    parser.add_argument("--workers", type=int, help="并行线程数（不影响结果）")
    parser.add_argument("--diagnostics", help="可选: 写出误差图与光流幅值图的目录")
    add_config_argument(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    run_cfg = resolve_config(args.config, {"period": args.period})
    period = run_cfg.degrade.period
    echo_config("enhance", run_cfg, {
        "degraded": args.degraded,
        "ckpt_lqf": args.ckpt_lqf,
        "ckpt_hqf": args.ckpt_hqf,
        "output": args.output,
        "workers": args.workers,
    })

    frames = get_frame_service()
    store = get_checkpoint_store()
    degraded = frames.load_clip(frames.manifest(args.degraded, ClipRole.DEGRADED))
    service = get_enhance_service({
        ModelVariant.LQF: store.load(args.ckpt_lqf),
        ModelVariant.HQF: store.load(args.ckpt_hqf),
    })
    result = service.enhance_clip(degraded, period, args.workers)
    for i, route in enumerate(result.routes):
        logger.info(f"帧 {i}: {route.variant.value} (prev={route.prev_ref}, next={route.next_ref})")

    with PartialOutputs() as outputs:
        outputs.track(args.output)
        manifest = frames.manifest(args.output, ClipRole.ENHANCED)
        for i in range(len(result.clip)):
            outputs.track(manifest.frame_path(i))
        frames.save_clip(result.clip, manifest)

        if args.diagnostics:
            outputs.track(args.diagnostics)
            _write_diagnostics(service, degraded, period, args.diagnostics)

    print(f"✓ 增强完成: {len(result.clip)} 帧 → {args.output}")
    return 0


def _write_diagnostics(service, degraded, period: int, directory: str) -> None:
    """逐帧写出补偿前/后误差图与光流幅值图"""
    frames = get_frame_service()
    padded = [pad_frame(f) for f in degraded.frames]
    out_dir = Path(directory)
    for i in range(len(padded)):
        diag = service.diagnose_frame(padded, i, period)
        size = degraded.size
        frames.save_image(str(out_dir / f"error_nomc_{i:04d}.pgm"),
                          crop_frame(error_map(diag.neighbor, diag.target), size))
        frames.save_image(str(out_dir / f"error_mc_{i:04d}.pgm"),
                          crop_frame(error_map(diag.warped, diag.target), size))
        frames.save_image(str(out_dir / f"flow_{i:04d}.pgm"),
                          crop_frame(flow_magnitude_map(diag.flow), size))
    logger.info(f"诊断图已写出: {directory}")
