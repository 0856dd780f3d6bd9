"""
eval 子命令 - 逐帧 PSNR / ΔPSNR 报告与质量波动曲线
"""
import argparse

from ..core.models import ClipRole
from ..services.eval_service import PLOT_METRICS, fluctuation_plot, report_from_clips, write_report_csv
from ..services.frame_service import get_frame_service
from .common import PartialOutputs, add_config_argument, echo_config, resolve_config


def register(subparsers) -> None:
    parser: argparse.ArgumentParser = subparsers.add_parser("eval", help="评估增强效果")
    parser.add_argument("--raw", required=True, help="原始 PGM 帧目录")
    parser.add_argument("--degraded", required=True, help="降质 PGM 帧目录（含标签文件）")
    parser.add_argument("--enhanced", required=True, help="增强 PGM 帧目录")
    parser.add_argument("--report", required=True, help="报告 CSV 输出路径")
    parser.add_argument("--plot", required=True, help="质量波动曲线 SVG 输出路径")
    parser.add_argument("--metric", choices=PLOT_METRICS, default="delta", help="曲线类型")
    parser.add_argument("--period", type=int, help="没有标签文件时用于推算标签")
    add_config_argument(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    run_cfg = resolve_config(args.config, {"period": args.period})
    echo_config("eval", run_cfg, {
        "raw": args.raw,
        "degraded": args.degraded,
        "enhanced": args.enhanced,
        "report": args.report,
        "plot": args.plot,
        "metric": args.metric,
    })

    frames = get_frame_service()
    raw = frames.load_clip(frames.manifest(args.raw, ClipRole.RAW))
    degraded = frames.load_clip(frames.manifest(args.degraded, ClipRole.DEGRADED))
    enhanced = frames.load_clip(frames.manifest(args.enhanced, ClipRole.ENHANCED))
    report = report_from_clips(raw, degraded, enhanced, period=run_cfg.degrade.period)

    with PartialOutputs() as outputs:
        write_report_csv(report, outputs.track(args.report))
        fluctuation_plot(report, outputs.track(args.plot), metric=args.metric)

    summary = report.summary()
    print(f"✓ 报告: {args.report}（{summary['frames']} 帧）")
    print(f"✓ 曲线: {args.plot}")
    print(f"mean ΔPSNR: {report.mean_delta:.6f} dB "
          f"(HQF {report.mean_delta_hqf:.6f} / LQF {report.mean_delta_lqf:.6f})")
    return 0
