"""
评估服务 - PSNR / ΔPSNR、逐帧质量波动报告、误差图与光流幅值图
"""
import csv
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from matplotlib import rc_context
from matplotlib.figure import Figure
from matplotlib.lines import Line2D

from ..core.exceptions import ConfigError, ShapeMismatchError
from ..core.models import (
    Checkpoint,
    Clip,
    FrameLabel,
    MetricsReport,
    MetricsRow,
    ModelVariant,
)
from ..utils.logger import logger
from .enhance_service import enhance_clip
from .frame_service import crop_frame, to_uint8

PEAK = 255.0
PSNR_CAP = 100.0
REPORT_HEADER = ["frame", "label", "model", "psnr_in", "psnr_out", "delta_psnr"]
PLOT_METRICS = ("delta", "psnr")


# ============================================================
# 指标
# ============================================================

def _check_same(a: np.ndarray, b: np.ndarray, op: str) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op}: 帧尺寸不一致 {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """
    峰值信噪比（峰值 255），相同帧返回上限 100 dB

    Args:
        a, b: 同尺寸帧，取值 [0, 255]

    Returns:
        PSNR (dB)
    """
    a, b = _check_same(a, b, "psnr")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(PEAK * PEAK / mse)))


def delta_psnr(raw: np.ndarray, compressed: np.ndarray, enhanced: np.ndarray) -> float:
    """ΔPSNR = PSNR(增强帧, 原始帧) − PSNR(压缩帧, 原始帧)"""
    return psnr(enhanced, raw) - psnr(compressed, raw)


def error_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """逐像素 |a − b|，四舍五入并截断为 8 位图像"""
    a, b = _check_same(a, b, "error_map")
    return to_uint8(np.abs(a - b))


def flow_magnitude_map(flow: np.ndarray, max_px: float = 4.0) -> np.ndarray:
    """
    光流幅值图: |Δ| 线性映射到 [0, 255]，max_px 及以上映射为 255

    Args:
        flow: (2, h, w) 或 (1, 2, h, w)，像素单位
        max_px: 映射为 255 的位移

    Returns:
        h×w uint8 图像
    """
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim == 4 and flow.shape[0] == 1:
        flow = flow[0]
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ShapeMismatchError(f"flow_magnitude_map: 光流必须是 (2, h, w)，当前 {flow.shape}")
    if max_px <= 0:
        raise ValueError(f"max_px 必须 > 0，当前 {max_px}")
    magnitude = np.hypot(flow[0], flow[1])
    return to_uint8(np.minimum(magnitude / max_px, 1.0) * 255.0)


# ============================================================
# 报告
# ============================================================

def _frames_cropped(clip: Clip) -> List[np.ndarray]:
    return [crop_frame(f, clip.size) for f in clip.frames]


def report_from_clips(
    raw: Clip,
    degraded: Clip,
    enhanced: Clip,
    labels: Optional[List[FrameLabel]] = None,
    period: Optional[int] = None
) -> MetricsReport:
    """
    由三个对齐的片段生成逐帧报告

    标签优先取参数 labels，其次取降质片段自带的标签，最后按 period 推算。
    各帧按原始尺寸（裁掉补齐部分）计算 PSNR。
    """
    n = len(raw)
    if not (n == len(degraded) == len(enhanced)):
        raise ShapeMismatchError(
            f"片段帧数不一致: raw {n} / degraded {len(degraded)} / enhanced {len(enhanced)}"
        )
    if n == 0:
        raise ValueError("report_from_clips: 片段为空")
    if not (raw.size == degraded.size == enhanced.size):
        raise ShapeMismatchError(
            f"片段尺寸不一致: raw {raw.size} / degraded {degraded.size} / enhanced {enhanced.size}"
        )

    labels = labels or degraded.labels
    if labels is None:
        if period is None:
            raise ConfigError("缺少帧标签: 需要标签文件或 period")
        labels = [FrameLabel.HQF if i % period == 0 else FrameLabel.LQF for i in range(n)]
    if len(labels) != n:
        raise ShapeMismatchError(f"标签数量 {len(labels)} 与帧数量 {n} 不一致")

    rows = []
    for i, (r, d, e) in enumerate(zip(_frames_cropped(raw), _frames_cropped(degraded), _frames_cropped(enhanced))):
        label = FrameLabel(labels[i])
        psnr_in = psnr(d, r)
        psnr_out = psnr(e, r)
        rows.append(MetricsRow(
            frame_index=i,
            label=label,
            model_used=ModelVariant.HQF if label == FrameLabel.HQF else ModelVariant.LQF,
            psnr_in=psnr_in,
            psnr_out=psnr_out,
            delta_psnr=psnr_out - psnr_in,
        ))
    report = MetricsReport(rows=rows)
    logger.info(
        f"评估完成: {n} 帧，平均 ΔPSNR {report.mean_delta:.6f} dB "
        f"(HQF {report.mean_delta_hqf:.6f} / LQF {report.mean_delta_lqf:.6f})"
    )
    return report


def evaluate_clip(
    raw: Clip,
    degraded: Clip,
    checkpoints: Dict[ModelVariant, Checkpoint],
    period: int,
    workers: Optional[int] = None
) -> MetricsReport:
    """
    用 LQF/HQF 模型增强降质片段并逐帧评估

    Args:
        raw: 原始片段
        degraded: 降质片段
        checkpoints: {lqf, hqf} 检查点
        period: HQF 间隔 P
        workers: 并行线程数

    Returns:
        MetricsReport，行按帧号排列
    """
    result = enhance_clip(degraded, checkpoints, period, workers)
    return report_from_clips(raw, degraded, result.clip, labels=[r.label for r in result.routes])


def write_report_csv(report: MetricsReport, path: str) -> str:
    """写出报告 CSV，dB 值保留 6 位小数"""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for row in report.rows:
            writer.writerow([
                row.frame_index,
                row.label.value,
                row.model_used.value,
                f"{row.psnr_in:.6f}",
                f"{row.psnr_out:.6f}",
                f"{row.delta_psnr:.6f}",
            ])
    return str(path)


# ============================================================
# 质量波动曲线
# ============================================================

def build_fluctuation_figure(report: MetricsReport, metric: str = "delta") -> Tuple[Figure, Line2D]:
    """
    绘制逐帧质量波动曲线

    Args:
        report: 非空报告
        metric: "delta" 画 ΔPSNR 与零轴；"psnr" 画压缩帧与增强帧的 PSNR

    Returns:
        (Figure, 主曲线)
    """
    if not report.rows:
        raise ValueError("报告为空，无法绘图")
    if metric not in PLOT_METRICS:
        raise ConfigError(f"不支持的曲线类型: {metric}。可用类型: {list(PLOT_METRICS)}")

    frames = [row.frame_index for row in report.rows]
    fig = Figure(figsize=(8, 4))
    ax = fig.add_subplot(1, 1, 1)
    if metric == "delta":
        ax.axhline(0.0, color="gray", linewidth=0.8)
        (line,) = ax.plot(frames, [row.delta_psnr for row in report.rows], marker="o", label="ΔPSNR")
        ax.set_ylabel("ΔPSNR (dB)")
    else:
        ax.plot(frames, [row.psnr_in for row in report.rows], marker="s", linestyle="--", label="compressed")
        (line,) = ax.plot(frames, [row.psnr_out for row in report.rows], marker="o", label="enhanced")
        ax.set_ylabel("PSNR (dB)")

    hqf = [row.frame_index for row in report.rows if row.label == FrameLabel.HQF]
    for index in hqf:
        ax.axvline(index, color="lightgray", linewidth=0.6, linestyle=":")
    ax.set_xlabel("frame")
    ax.legend(loc="best")
    fig.tight_layout()
    return fig, line


def fluctuation_plot(report: MetricsReport, path: str, metric: str = "delta") -> str:
    """
    写出质量波动曲线 SVG；相同报告产生逐字节相同的文件

    Returns:
        写出的路径
    """
    fig, _ = build_fluctuation_figure(report, metric)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with rc_context({"svg.hashsalt": "sdts-vqe", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    return str(path)
