"""
train 子命令 - 执行一个或全部训练阶段，写出检查点与损失日志
"""
import argparse

from ..core.config import PRESETS
from ..core.exceptions import CommandError, TrainingDivergedError
from ..core.models import ClipRole, ModelVariant
from ..services.checkpoint_store import get_checkpoint_store
from ..services.frame_service import get_frame_service
from ..services.trainer_service import LossLog, SdtsTrainer, build_pairs, route_frame
from ..utils.logger import logger
from .common import PartialOutputs, add_config_argument, echo_config, resolve_config

PHASES = ("1", "2", "3", "all")


def register(subparsers) -> None:
    parser: argparse.ArgumentParser = subparsers.add_parser("train", help="训练 SDTS 模型")
    parser.add_argument("--raw", required=True, help="原始 PGM 帧目录")
    parser.add_argument("--degraded", required=True, help="降质 PGM 帧目录")
    parser.add_argument("--phase", choices=PHASES, default="all", help="训练阶段")
    parser.add_argument("--variant", choices=[ModelVariant.LQF.value, ModelVariant.HQF.value], required=True)
    parser.add_argument("--seed", type=int, help="随机种子")
    parser.add_argument("--out", required=True, help="检查点输出路径")
    parser.add_argument("--loss-log", help="损失日志 CSV，默认 <out>.loss.csv")
    parser.add_argument("--mc-ckpt", help="阶段 1 的 MC 检查点（阶段 2 必需）")
    parser.add_argument("--init-ckpt", help="阶段 2 的检查点（阶段 3 必需）")
    parser.add_argument("--finetune-from", help="从已有模型微调（执行阶段 3）")
    parser.add_argument("--period", type=int, help="HQF 间隔 P")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="训练数据的降质预设，记录在检查点中")
    add_config_argument(parser)
    parser.set_defaults(handler=run)


def _check_usage(args: argparse.Namespace, use_mc: bool) -> None:
    if args.finetune_from:
        if args.phase not in ("3", "all"):
            raise CommandError("--finetune-from 只能与 --phase 3 或 all 一起使用", exit_code=2)
        return
    if args.phase == "2" and use_mc and not args.mc_ckpt:
        raise CommandError("--phase 2 需要 --mc-ckpt 指定阶段 1 的检查点", exit_code=2)
    if args.phase == "3" and not args.init_ckpt:
        raise CommandError("--phase 3 需要 --init-ckpt 或 --finetune-from", exit_code=2)
    if args.phase == "1" and not use_mc:
        raise CommandError("use_mc=false 的网络没有阶段 1", exit_code=2)


def run(args: argparse.Namespace) -> int:
    run_cfg = resolve_config(args.config, {"seed": args.seed, "period": args.period})
    _check_usage(args, run_cfg.net.use_mc)
    loss_log_path = args.loss_log or f"{args.out}.loss.csv"
    variant = ModelVariant(args.variant)
    echo_config("train", run_cfg, {
        "raw": args.raw,
        "degraded": args.degraded,
        "phase": args.phase,
        "variant": variant.value,
        "out": args.out,
        "loss_log": loss_log_path,
        "preset": args.preset,
    })

    frames = get_frame_service()
    store = get_checkpoint_store()
    raw = frames.load_clip(frames.manifest(args.raw, ClipRole.RAW))
    degraded = frames.load_clip(frames.manifest(args.degraded, ClipRole.DEGRADED))
    period = run_cfg.degrade.period
    if degraded.labels is not None:
        expected = [route_frame(i, period, len(degraded)).label for i in range(len(degraded))]
        if list(degraded.labels) != expected:
            raise CommandError(f"标签文件与 period={period} 不一致: {args.degraded}")

    pairs = build_pairs(raw, degraded, run_cfg.train, period, variant)

    with PartialOutputs() as outputs:
        outputs.track(args.out)
        outputs.track(loss_log_path)
        with LossLog(loss_log_path) as loss_log:
            trainer = SdtsTrainer(run_cfg.net, run_cfg.train, variant, preset=args.preset, loss_log=loss_log)
            try:
                if args.finetune_from:
                    ckpt = trainer.finetune_from(store.load(args.finetune_from), pairs)
                elif args.phase == "all":
                    ckpt = trainer.run_all(pairs)
                elif args.phase == "1":
                    ckpt = trainer.train_phase1(pairs)
                elif args.phase == "2":
                    mc = store.load(args.mc_ckpt) if args.mc_ckpt else None
                    ckpt = trainer.train_phase2(pairs, mc)
                else:
                    ckpt = trainer.train_phase3(pairs, store.load(args.init_ckpt))
            except TrainingDivergedError as e:
                raise CommandError(
                    f"训练发散于第 {e.step} 步，最后正常步 {e.last_good_step}: {e.losses}"
                ) from e
        store.save(ckpt, args.out)

    logger.info(f"训练完成: {len(loss_log.records)} 步")
    print(f"✓ 检查点已写出: {args.out}（{ckpt.describe()}）")
    print(f"  batch_size = {run_cfg.train.batch_size}, steps_per_epoch = {run_cfg.train.steps_per_epoch}")
    print(f"✓ 损失日志: {loss_log_path}")
    return 0
