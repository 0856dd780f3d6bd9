"""
帧读写服务 - PGM 帧目录、原始 4:2:0 亮度平面与标签文件
"""
import csv
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..core.exceptions import FrameIOError
from ..core.models import Clip, ClipManifest, ClipRole, FrameLabel
from ..utils.logger import logger

LABELS_FILE = "labels.csv"
PAD_MULTIPLE = 4


# ============================================================
# 像素工具
# ============================================================

def quantize_frame(frame: np.ndarray) -> np.ndarray:
    """截断到 [0, 255] 后四舍五入（.5 远离零），返回 float64"""
    clamped = np.clip(np.asarray(frame, dtype=np.float64), 0.0, 255.0)
    return np.floor(clamped + 0.5)


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return quantize_frame(frame).astype(np.uint8)


def pad_frame(frame: np.ndarray, multiple: int = PAD_MULTIPLE) -> np.ndarray:
    """边缘复制补齐到 multiple 的倍数"""
    h, w = frame.shape
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if not pad_h and not pad_w:
        return frame
    return np.pad(frame, ((0, pad_h), (0, pad_w)), mode="edge")


def crop_frame(frame: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    h, w = size
    return frame[:h, :w]


def pad_clip(clip: Clip, multiple: int = PAD_MULTIPLE) -> Clip:
    """补齐片段中的所有帧，并记录原始尺寸"""
    return Clip(
        frames=[pad_frame(f, multiple) for f in clip.frames],
        labels=clip.labels,
        role=clip.role,
        original_size=clip.size,
    )


def crop_clip(clip: Clip) -> Clip:
    """按原始尺寸裁剪片段"""
    return Clip(
        frames=[crop_frame(f, clip.size) for f in clip.frames],
        labels=clip.labels,
        role=clip.role,
    )


class FrameService:
    """帧目录读写"""

    def __init__(self, pattern: str = "frame_{:04d}.pgm"):
        """
        初始化帧服务

        Args:
            pattern: 帧文件名模式，按帧序号格式化
        """
        self.pattern = pattern

    def manifest(self, directory: str, role: ClipRole = ClipRole.RAW, **kwargs) -> ClipManifest:
        return ClipManifest(directory=directory, pattern=self.pattern, role=role, **kwargs)

    # ============================================================
    # PGM 帧目录
    # ============================================================

    def _count_frames(self, manifest: ClipManifest) -> int:
        count = 0
        while Path(manifest.frame_path(count)).is_file():
            count += 1
        return count

    def read_frame(self, path: str) -> np.ndarray:
        """
        读取一帧 8 位灰度 PGM

        Args:
            path: 文件路径

        Returns:
            h×w float64 数组，取值 [0, 255]
        """
        if not Path(path).is_file():
            raise FrameIOError(f"帧文件不存在: {path}")
        try:
            with Image.open(path) as img:
                if img.format != "PPM" or img.mode != "L":
                    raise FrameIOError(
                        f"不支持的帧格式: {path} (format={img.format}, mode={img.mode})，需要 8 位灰度 PGM"
                    )
                return np.asarray(img, dtype=np.float64)
        except FrameIOError:
            raise
        except (UnidentifiedImageError, OSError) as e:
            raise FrameIOError(f"读取帧失败: {path}: {str(e)}") from e

    def write_frame(self, path: str, frame: np.ndarray) -> None:
        """按四舍五入与截断规则写出 P5 PGM"""
        try:
            Image.fromarray(to_uint8(frame)).save(path, format="PPM")
        except OSError as e:
            raise FrameIOError(f"写入帧失败: {path}: {str(e)}") from e

    def load_clip(self, manifest: ClipManifest) -> Clip:
        """
        读取帧目录

        帧须从 0 开始连续编号且尺寸一致；尺寸边缘复制补齐到 4 的倍数，
        原始尺寸记录在 Clip.original_size 中。目录中若有标签文件一并读取。

        Args:
            manifest: 帧目录描述

        Returns:
            Clip
        """
        directory = Path(manifest.directory)
        if not directory.is_dir():
            raise FrameIOError(f"帧目录不存在: {manifest.directory}")

        count = manifest.count if manifest.count is not None else self._count_frames(manifest)
        if count <= 0:
            raise FrameIOError(f"目录中没有帧文件: {manifest.directory} (模式 {manifest.pattern})")

        frames: List[np.ndarray] = []
        for i in range(count):
            path = manifest.frame_path(i)
            frame = self.read_frame(path)
            if frames and frame.shape != frames[0].shape:
                raise FrameIOError(f"帧尺寸不一致: {path} 为 {frame.shape}，首帧为 {frames[0].shape}")
            if manifest.height is not None and frame.shape[0] != manifest.height:
                raise FrameIOError(f"帧高度不符: {path} 为 {frame.shape[0]}，期望 {manifest.height}")
            if manifest.width is not None and frame.shape[1] != manifest.width:
                raise FrameIOError(f"帧宽度不符: {path} 为 {frame.shape[1]}，期望 {manifest.width}")
            frames.append(frame)

        labels = None
        labels_path = directory / LABELS_FILE
        if labels_path.is_file():
            labels = self.read_labels(str(labels_path))
            if len(labels) != count:
                raise FrameIOError(f"标签数量 {len(labels)} 与帧数量 {count} 不一致: {labels_path}")

        clip = Clip(frames=frames, labels=labels, role=manifest.role)
        logger.info(f"读取片段: {manifest.directory}，{count} 帧 {clip.height}×{clip.width}")
        return pad_clip(clip)

    def save_clip(self, clip: Clip, manifest: ClipManifest) -> List[str]:
        """
        写出片段（按原始尺寸裁剪）；带标签的片段同时写出标签文件

        Returns:
            写出的文件路径列表
        """
        directory = Path(manifest.directory)
        try:
            directory.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise FrameIOError(f"无法创建输出目录: {manifest.directory}: {str(e)}") from e

        written: List[str] = []
        for i, frame in enumerate(clip.frames):
            path = manifest.frame_path(i)
            self.write_frame(path, crop_frame(frame, clip.size))
            written.append(path)
        if clip.labels is not None:
            labels_path = str(directory / LABELS_FILE)
            self.write_labels(labels_path, clip.labels)
            written.append(labels_path)
        logger.info(f"写出片段: {manifest.directory}，{len(clip)} 帧")
        return written

    # ============================================================
    # 原始 4:2:0 文件
    # ============================================================

    def load_raw_y(self, path: str, width: int, height: int, count: int) -> Clip:
        """
        读取平面 4:2:0 原始文件的亮度分量，跳过色度

        Args:
            path: 文件路径
            width, height: 帧尺寸
            count: 帧数

        Returns:
            原始片段（已补齐到 4 的倍数）
        """
        if width <= 0 or height <= 0 or count <= 0:
            raise FrameIOError(f"原始文件参数非法: {width}×{height}×{count}")
        file_path = Path(path)
        if not file_path.is_file():
            raise FrameIOError(f"原始文件不存在: {path}")

        luma = width * height
        frame_bytes = luma + luma // 2
        # 最后一帧的色度可以缺失
        expected = (count - 1) * frame_bytes + luma
        actual = file_path.stat().st_size
        if actual < expected:
            raise FrameIOError(
                f"原始文件长度不足: {path} 需要至少 {expected} 字节，实际 {actual} 字节"
            )

        buffer = np.frombuffer(file_path.read_bytes(), dtype=np.uint8)
        frames = [
            buffer[i * frame_bytes: i * frame_bytes + luma].reshape(height, width).astype(np.float64)
            for i in range(count)
        ]
        logger.info(f"读取原始亮度: {path}，{count} 帧 {height}×{width}")
        return pad_clip(Clip(frames=frames, role=ClipRole.RAW))

    # ============================================================
    # 标签文件与诊断图
    # ============================================================

    def write_labels(self, path: str, labels: List[FrameLabel]) -> None:
        """写出 frame,label 标签文件"""
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["frame", "label"])
            for i, label in enumerate(labels):
                writer.writerow([i, FrameLabel(label).value])

    def read_labels(self, path: str) -> List[FrameLabel]:
        """读取 frame,label 标签文件，帧号须从 0 连续"""
        try:
            with open(path, newline="", encoding="utf-8") as f:
                rows = list(csv.DictReader(f))
        except OSError as e:
            raise FrameIOError(f"读取标签文件失败: {path}: {str(e)}") from e

        labels: List[FrameLabel] = []
        for expected, row in enumerate(rows):
            try:
                index = int(row["frame"])
                label = FrameLabel(row["label"].strip())
            except (KeyError, ValueError, AttributeError) as e:
                raise FrameIOError(f"标签文件格式错误: {path} 第 {expected + 2} 行") from e
            if index != expected:
                raise FrameIOError(f"标签文件帧号不连续: {path} 期望 {expected}，实际 {index}")
            labels.append(label)
        return labels

    def save_image(self, path: str, image: np.ndarray) -> None:
        """写出 8 位诊断图（误差图、光流幅值图）"""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.write_frame(path, image)


def get_frame_service(pattern: Optional[str] = None) -> FrameService:
    """获取帧服务实例"""
    return FrameService(pattern) if pattern else FrameService()
