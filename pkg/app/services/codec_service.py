"""
编码降质模拟 - 块 DCT 量化代替 VVC 编码器

低延迟配置下的质量波动用周期量化步长模拟:
    帧 i 满足 i mod P == 0 时为 HQF，使用较小的 q_low，其余为 LQF，使用 q_high。
"""
from typing import List

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import gaussian_filter, map_coordinates

from ..core.config import DegradeConfig
from ..core.exceptions import ConfigError, ShapeMismatchError
from ..core.models import Clip, ClipRole, FrameLabel
from ..utils.logger import logger

SYNTH_KINDS = ("translate", "still", "ramp")


def degrade_frame(frame: np.ndarray, q: float, block_size: int = 8) -> np.ndarray:
    """
    对单帧做块 DCT 量化

    每个块: 正交 DCT → 系数除以 q 取整再乘 q → 逆 DCT → 截断到 [0, 255]

    Args:
        frame: h×w 帧，h、w 须是 block_size 的倍数
        q: 量化步长（≥ 1）
        block_size: 块大小

    Returns:
        降质后的帧（float64）
    """
    if q < 1:
        raise ConfigError(f"量化步长 q 必须 ≥ 1，当前 {q}")
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise ShapeMismatchError(f"degrade_frame: 帧必须是二维数组，当前维度 {frame.ndim}")
    h, w = frame.shape
    b = block_size
    if h % b or w % b:
        raise ShapeMismatchError(f"degrade_frame: 帧尺寸 h/w 必须是 {b} 的倍数，当前 {h}×{w}")

    blocks = frame.reshape(h // b, b, w // b, b).transpose(0, 2, 1, 3)
    coeffs = dctn(blocks, axes=(2, 3), norm="ortho")
    coeffs = np.round(coeffs / q) * q
    restored = idctn(coeffs, axes=(2, 3), norm="ortho")
    out = restored.transpose(0, 2, 1, 3).reshape(h, w)
    return np.clip(out, 0.0, 255.0)


def frame_labels(n_frames: int, period: int) -> List[FrameLabel]:
    """按周期生成 HQF/LQF 标签"""
    return [FrameLabel.HQF if i % period == 0 else FrameLabel.LQF for i in range(n_frames)]


def degrade_clip(clip: Clip, cfg: DegradeConfig) -> Clip:
    """
    按周期量化模式降质整个片段

    Args:
        clip: 原始片段（role=raw）
        cfg: 降质配置

    Returns:
        降质片段，带 HQF/LQF 标签
    """
    if len(clip) == 0:
        raise ValueError("degrade_clip: 片段为空")
    if clip.role != ClipRole.RAW:
        raise ValueError(f"degrade_clip: 只能降质原始片段，当前角色 {clip.role.value}")

    labels = frame_labels(len(clip), cfg.period)
    frames = [
        degrade_frame(frame, cfg.q_low if label == FrameLabel.HQF else cfg.q_high, cfg.block_size)
        for frame, label in zip(clip.frames, labels)
    ]
    hqf_count = sum(1 for label in labels if label == FrameLabel.HQF)
    logger.info(
        f"降质完成: {len(frames)} 帧 (HQF {hqf_count} / LQF {len(frames) - hqf_count})，"
        f"q_low={cfg.q_low} q_high={cfg.q_high} P={cfg.period}"
    )
    return Clip(
        frames=frames,
        labels=labels,
        role=ClipRole.DEGRADED,
        original_size=clip.original_size,
    )


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """平滑随机纹理，取值约在 [16, 239]"""
    noise = gaussian_filter(rng.standard_normal((h, w)), sigma=1.5, mode="reflect")
    lo, hi = noise.min(), noise.max()
    if hi - lo < 1e-12:
        return np.full((h, w), 128.0)
    return 16.0 + 223.0 * (noise - lo) / (hi - lo)


def synth_clip(
    kind: str,
    n_frames: int,
    h: int,
    w: int,
    shift_px: float = 2.0,
    seed: int = 0
) -> Clip:
    """
    生成合成测试片段

    Args:
        kind: translate（纹理每帧水平平移 shift_px）/ still（各帧相同）/ ramp（静态渐变）
        n_frames: 帧数（≥ 3）
        h, w: 帧尺寸
        shift_px: 每帧平移像素数，仅 translate 使用
        seed: 随机种子

    Returns:
        原始片段
    """
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"不支持的合成类型: {kind}。可用类型: {list(SYNTH_KINDS)}")
    if h <= 0 or w <= 0:
        raise ShapeMismatchError(f"synth_clip: 帧尺寸必须为正，当前 {h}×{w}")
    if n_frames < 3:
        raise ConfigError(f"synth_clip: 帧数必须 ≥ 3，当前 {n_frames}")

    rng = np.random.default_rng(seed)
    if kind == "ramp":
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        base = 16.0 + 223.0 * (xx + yy) / max(h + w - 2, 1)
        return Clip(frames=[base.copy() for _ in range(n_frames)], role=ClipRole.RAW)

    if kind == "still":
        base = _texture(rng, h, w)
        return Clip(frames=[base.copy() for _ in range(n_frames)], role=ClipRole.RAW)

    # 画布比帧宽，平移后边界处仍是真实纹理
    margin = int(np.ceil(abs(shift_px) * (n_frames - 1))) + 1
    canvas = _texture(rng, h, w + margin)
    offset = float(margin - 1) if shift_px > 0 else 0.0
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)

    frames = []
    for t in range(n_frames):
        # frame_t(x) = base(x - t·shift)
        coords = np.stack([rows, cols - t * shift_px + offset])
        frames.append(map_coordinates(canvas, coords, order=1, mode="nearest"))
    return Clip(frames=frames, role=ClipRole.RAW)
