"""
服务模块初始化文件
"""
from .codec_service import degrade_frame, degrade_clip, synth_clip, frame_labels
from .frame_service import FrameService, get_frame_service
from .checkpoint_store import CheckpointStore, get_checkpoint_store
from .trainer_service import (
    FrameRoute,
    LossLog,
    LossRecord,
    SdtsTrainer,
    build_pairs,
    collate,
    get_trainer,
    lr_schedule,
    route_frame,
)
from .enhance_service import EnhanceResult, EnhanceService, enhance_clip, get_enhance_service
from .eval_service import (
    delta_psnr,
    error_map,
    evaluate_clip,
    flow_magnitude_map,
    fluctuation_plot,
    psnr,
    report_from_clips,
    write_report_csv,
)

__all__ = [
    "degrade_frame",
    "degrade_clip",
    "synth_clip",
    "frame_labels",
    "FrameService",
    "get_frame_service",
    "CheckpointStore",
    "get_checkpoint_store",
    "FrameRoute",
    "LossLog",
    "LossRecord",
    "SdtsTrainer",
    "build_pairs",
    "collate",
    "get_trainer",
    "lr_schedule",
    "route_frame",
    "EnhanceResult",
    "EnhanceService",
    "enhance_clip",
    "get_enhance_service",
    "delta_psnr",
    "error_map",
    "evaluate_clip",
    "flow_magnitude_map",
    "fluctuation_plot",
    "psnr",
    "report_from_clips",
    "write_report_csv",
]
