"""
检查点存储 - 二进制格式（版本 1，小端）

    "SDTS"                     魔数
    u32                        格式版本
    u32 + UTF-8                模型变体 (mc / lqf / hqf)
    u32 + UTF-8 JSON           NetConfig
    u32 + UTF-8 JSON           元数据 (train_config, seed, epoch, phase, preset, provenance)
    u32                        参数个数
    每个参数:
        u32 + UTF-8            参数名
        u32                    维数 rank
        rank × u32             各维长度
        float64 × prod(dims)   数据
"""
import json
import struct
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np
from pydantic import ValidationError

from ..core.config import NetConfig, TrainConfig
from ..core.exceptions import CheckpointError
from ..core.models import Checkpoint, ModelVariant
from ..utils.logger import logger

MAGIC = b"SDTS"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")


def _dump_json(data: Dict[str, Any]) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(",", ":")).encode("utf-8")


class _Reader:
    """带越界检查的顺序读取器"""

    def __init__(self, buffer: bytes, path: str):
        self.buffer = buffer
        self.path = path
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.buffer):
            raise CheckpointError(
                f"检查点被截断: {self.path} 在偏移 {self.offset} 处需要 {size} 字节，"
                f"剩余 {len(self.buffer) - self.offset} 字节"
            )
        chunk = self.buffer[self.offset:end]
        self.offset = end
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(_U32.size))[0]

    def text(self) -> str:
        length = self.u32()
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"检查点字符串不是合法 UTF-8: {self.path}") from e


class CheckpointStore:
    """检查点读写"""

    def encode(self, ckpt: Checkpoint) -> bytes:
        """把检查点编码为字节串"""
        metadata = {
            "train_config": ckpt.train_config.model_dump() if ckpt.train_config else None,
            "seed": ckpt.seed,
            "epoch": ckpt.epoch,
            "phase": ckpt.phase,
            "preset": ckpt.preset,
            "provenance": list(ckpt.provenance),
        }
        parts = [MAGIC, _U32.pack(FORMAT_VERSION)]
        for block in (
            ckpt.variant.value.encode("utf-8"),
            _dump_json(ckpt.net_config.model_dump()),
            _dump_json(metadata),
        ):
            parts += [_U32.pack(len(block)), block]

        parts.append(_U32.pack(len(ckpt.params)))
        for name, array in ckpt.params.items():
            data = np.ascontiguousarray(array, dtype="<f8")
            encoded = name.encode("utf-8")
            parts += [_U32.pack(len(encoded)), encoded, _U32.pack(data.ndim)]
            parts += [_U32.pack(d) for d in data.shape]
            parts.append(data.tobytes())
        return b"".join(parts)

    def decode(self, buffer: bytes, path: str = "<bytes>") -> Checkpoint:
        """从字节串解码检查点"""
        reader = _Reader(buffer, path)
        magic = reader.take(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"不是 SDTS 检查点: {path} (魔数 {magic!r})")
        version = reader.u32()
        if version != FORMAT_VERSION:
            raise CheckpointError(f"不支持的检查点版本 {version}: {path}，当前支持 {FORMAT_VERSION}")

        try:
            variant = ModelVariant(reader.text())
            net_config = NetConfig(**json.loads(reader.text()))
            metadata = json.loads(reader.text())
            train_config = (
                TrainConfig(**metadata["train_config"]) if metadata.get("train_config") else None
            )
        except CheckpointError:
            raise
        except (ValueError, KeyError, TypeError, ValidationError) as e:
            raise CheckpointError(f"检查点头部损坏: {path}: {str(e)}") from e

        params: Dict[str, np.ndarray] = {}
        for _ in range(reader.u32()):
            name = reader.text()
            rank = reader.u32()
            dims: Tuple[int, ...] = tuple(reader.u32() for _ in range(rank))
            count = int(np.prod(dims)) if dims else 1
            payload = reader.take(count * 8)
            params[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)

        if reader.offset != len(buffer):
            raise CheckpointError(f"检查点末尾有多余数据: {path} ({len(buffer) - reader.offset} 字节)")

        return Checkpoint(
            variant=variant,
            net_config=net_config,
            params=params,
            train_config=train_config,
            seed=int(metadata.get("seed", 0)),
            epoch=int(metadata.get("epoch", 0)),
            phase=int(metadata.get("phase", 0)),
            preset=metadata.get("preset"),
            provenance=list(metadata.get("provenance", [])),
        )

    def save(self, ckpt: Checkpoint, path: str) -> str:
        """
        保存检查点

        Args:
            ckpt: 检查点
            path: 输出路径

        Returns:
            写出的路径
        """
        try:
            target = Path(path)
            if target.parent and not target.parent.exists():
                target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(self.encode(ckpt))
        except OSError as e:
            raise CheckpointError(f"写入检查点失败: {path}: {str(e)}") from e
        logger.info(f"检查点已保存: {path} ({ckpt.describe()}，{len(ckpt.params)} 个参数张量)")
        return str(path)

    def load(self, path: str) -> Checkpoint:
        """读取检查点"""
        try:
            buffer = Path(path).read_bytes()
        except OSError as e:
            raise CheckpointError(f"读取检查点失败: {path}: {str(e)}") from e
        ckpt = self.decode(buffer, path)
        logger.info(f"检查点已加载: {path} ({ckpt.describe()})")
        return ckpt


def get_checkpoint_store() -> CheckpointStore:
    """获取检查点存储实例"""
    return CheckpointStore()
