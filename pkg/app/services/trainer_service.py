"""
训练服务 - 帧路由、训练样本构造与三阶段训练

阶段 1: 只训练 MC 模块，损失为运动估计损失 L_ME
阶段 2: 冻结 MC，训练融合子网与 ENet，损失为 L_ENet = MSE(重建帧, 原始目标帧)
阶段 3: 全部参数联合微调，损失为 L_ME + λ₂·L_ENet

学习率按全局轮次计算，各阶段依次占用 [0, 10)、[10, 20)、[20, 30) 轮。
"""
import csv
import math
from pathlib import Path
from typing import Iterator, List, NamedTuple, Optional, Tuple

import numpy as np

from ..core.config import NetConfig, TrainConfig
from ..core.exceptions import ConfigError, ShapeMismatchError, TrainingDivergedError
from ..core.models import Checkpoint, Clip, FrameLabel, ModelVariant, TrainingPair
from ..engine import AdamState, Tensor, adam_step, add, backward, graph_scope, mse_loss, scale
from ..network import (
    ParamGroup,
    compensate,
    init_sdts_params,
    mc_loss,
    param_groups_for_phase,
    sdts_forward,
)
from ..utils.logger import logger


# ============================================================
# 帧路由
# ============================================================

class FrameRoute(NamedTuple):
    """帧路由结果: 使用的模型与前后参考 HQF 的帧号"""
    variant: ModelVariant
    prev_ref: int
    next_ref: int

    @property
    def label(self) -> FrameLabel:
        return FrameLabel.HQF if self.variant == ModelVariant.HQF else FrameLabel.LQF


def route_frame(index: int, period: int, n_frames: int) -> FrameRoute:
    """
    为一帧选择模型与最近的前后 HQF

    HQF 目标使用 ±P 处的相邻 HQF；边界处缺失的一侧复用最近的现有 HQF（帧 0 复用自身）。

    Args:
        index: 帧号
        period: HQF 间隔 P
        n_frames: 片段帧数

    Returns:
        FrameRoute
    """
    if period < 2:
        raise ConfigError(f"period 必须 ≥ 2，当前 {period}")
    if not 0 <= index < n_frames:
        raise IndexError(f"帧号 {index} 超出范围 [0, {n_frames})")

    last_hqf = period * ((n_frames - 1) // period)
    if index % period == 0:
        return FrameRoute(ModelVariant.HQF, max(index - period, 0), min(index + period, last_hqf))

    prev_ref = max(period * ((index - 1) // period), 0)
    next_ref = min(period * -(-(index + 1) // period), last_hqf)
    return FrameRoute(ModelVariant.LQF, prev_ref, next_ref)


# ============================================================
# 训练样本
# ============================================================

class Batch(NamedTuple):
    """一个 mini-batch，取值归一化到 [0, 1]，形状 (n, 1, p, p)"""
    raw_target: Tensor
    comp_target: Tensor
    comp_prev: Tensor
    comp_next: Tensor
    raw_prev: Tensor
    raw_next: Tensor


def patch_size_for(cfg: TrainConfig, h: int, w: int) -> int:
    """实际裁剪尺寸: 不超过帧尺寸，且为 4 的倍数"""
    size = (min(cfg.patch_size, h, w) // 4) * 4
    if size < 4:
        raise ShapeMismatchError(f"帧尺寸 {h}×{w} 太小，无法裁剪 4 的倍数的训练块")
    return size


def build_pairs(
    raw: Clip,
    degraded: Clip,
    cfg: TrainConfig,
    period: int,
    variant: Optional[ModelVariant] = None
) -> Iterator[TrainingPair]:
    """
    按种子随机生成训练样本（无限流）

    Args:
        raw: 原始片段
        degraded: 对齐的降质片段
        cfg: 训练配置（使用 seed 与 patch_size）
        period: HQF 间隔 P
        variant: 只生成该模型负责的目标帧；None 表示全部帧

    Yields:
        TrainingPair
    """
    if len(raw) != len(degraded):
        raise ShapeMismatchError(f"原始片段 {len(raw)} 帧与降质片段 {len(degraded)} 帧不一致")
    if (raw.height, raw.width) != (degraded.height, degraded.width):
        raise ShapeMismatchError(
            f"原始片段尺寸 {raw.height}×{raw.width} 与降质片段 {degraded.height}×{degraded.width} 不一致"
        )
    n = len(raw)
    if n < period + 1:
        raise ConfigError(f"片段至少需要 P+1={period + 1} 帧，当前 {n} 帧")

    if variant is None:
        candidates = list(range(n))
    else:
        wanted = ModelVariant(variant)
        candidates = [i for i in range(n) if route_frame(i, period, n).variant == wanted]
    if not candidates:
        raise ConfigError(f"片段中没有 {variant} 模型负责的帧")

    h, w = raw.height, raw.width
    size = patch_size_for(cfg, h, w)
    rng = np.random.default_rng([cfg.seed, 1])

    def crop(frame: np.ndarray, y: int, x: int) -> np.ndarray:
        return np.array(frame[y:y + size, x:x + size], dtype=np.float64)

    while True:
        index = candidates[int(rng.integers(len(candidates)))]
        y = int(rng.integers(0, h - size + 1))
        x = int(rng.integers(0, w - size + 1))
        route = route_frame(index, period, n)
        yield TrainingPair(
            index=index,
            prev_index=route.prev_ref,
            next_index=route.next_ref,
            label=route.label,
            origin=(y, x),
            raw_target=crop(raw.frames[index], y, x),
            comp_target=crop(degraded.frames[index], y, x),
            comp_prev=crop(degraded.frames[route.prev_ref], y, x),
            comp_next=crop(degraded.frames[route.next_ref], y, x),
            raw_prev=crop(raw.frames[route.prev_ref], y, x),
            raw_next=crop(raw.frames[route.next_ref], y, x),
        )


def collate(pairs: List[TrainingPair]) -> Batch:
    """把若干样本堆叠成归一化的 mini-batch"""
    if not pairs:
        raise ValueError("collate: 样本列表为空")

    def stack(field: str) -> Tensor:
        return Tensor(np.stack([getattr(p, field) for p in pairs])[:, None] / 255.0)

    return Batch(*(stack(field) for field in Batch._fields))


# ============================================================
# 学习率与损失日志
# ============================================================

def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """
    按全局轮次计算学习率: decay_epoch 之前为 lr，之后除以 decay_factor（只衰减一次）

    Raises:
        ValueError: epoch 不在 [0, total_epochs) 内
    """
    if not 0 <= epoch < cfg.total_epochs:
        raise ValueError(f"轮次 {epoch} 超出训练范围 [0, {cfg.total_epochs})")
    if epoch >= cfg.decay_epoch:
        return cfg.lr / cfg.decay_factor
    return cfg.lr


class LossRecord(NamedTuple):
    step: int
    epoch: int
    lr: float
    loss_me: float
    loss_enet: float
    loss_total: float


class LossLog:
    """
    逐步损失日志，CSV 表头 step,epoch,lr,loss_me,loss_enet,loss_total

    浮点数按 repr 写出，读回后与内存中的值逐位相同。
    """

    HEADER = list(LossRecord._fields)

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self.records: List[LossRecord] = []
        self._file = None
        self._writer = None
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            self._file = open(path, "w", newline="", encoding="utf-8")
            self._writer = csv.writer(self._file, lineterminator="\n")
            self._writer.writerow(self.HEADER)

    def append(self, record: LossRecord) -> None:
        self.records.append(record)
        if self._writer is not None:
            self._writer.writerow(
                [record.step, record.epoch] + [repr(float(v)) for v in record[2:]]
            )
            self._file.flush()

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None
            self._writer = None

    def __enter__(self) -> "LossLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    @staticmethod
    def read(path: str) -> List[LossRecord]:
        """读取损失日志"""
        with open(path, newline="", encoding="utf-8") as f:
            return [
                LossRecord(
                    int(row["step"]), int(row["epoch"]), float(row["lr"]),
                    float(row["loss_me"]), float(row["loss_enet"]), float(row["loss_total"])
                )
                for row in csv.DictReader(f)
            ]


# ============================================================
# 三阶段训练
# ============================================================

class SdtsTrainer:
    """
    SDTS 训练器

    持有一个模型的全部参数，按阶段依次训练；每个阶段结束时返回检查点。
    """

    def __init__(
        self,
        net_cfg: NetConfig,
        train_cfg: TrainConfig,
        variant: ModelVariant,
        preset: Optional[str] = None,
        loss_log: Optional[LossLog] = None,
        identity_init: bool = True
    ):
        """
        初始化训练器

        Args:
            net_cfg: 网络结构配置
            train_cfg: 训练配置
            variant: 目标模型变体（lqf / hqf）
            preset: 训练数据使用的降质预设名
            loss_log: 损失日志；None 时只保存在内存中
            identity_init: 是否从恒等映射开始
        """
        if ModelVariant(variant) == ModelVariant.MC:
            raise ConfigError("训练目标必须是 lqf 或 hqf 模型")
        self.net_cfg = net_cfg
        self.train_cfg = train_cfg
        self.variant = ModelVariant(variant)
        self.preset = preset
        self.loss_log = loss_log if loss_log is not None else LossLog()
        self.store = init_sdts_params(net_cfg, train_cfg.seed, identity_init=identity_init)
        self.step = 0
        self.provenance: List[str] = []

    # ---------- 内部工具 ----------

    def _checkpoint(self, phase: int, variant: ModelVariant) -> Checkpoint:
        return Checkpoint(
            variant=variant,
            net_config=self.net_cfg,
            params=self.store.to_arrays(),
            train_config=self.train_cfg,
            seed=self.train_cfg.seed,
            epoch=self.train_cfg.phase_offset(phase) + self.train_cfg.phase_epochs(phase),
            phase=phase,
            preset=self.preset,
            provenance=list(self.provenance),
        )

    def _check_config(self, ckpt: Checkpoint) -> None:
        if ckpt.net_config != self.net_cfg:
            raise ConfigError(
                f"检查点 NetConfig 与当前配置不一致: {ckpt.net_config.model_dump()} vs {self.net_cfg.model_dump()}"
            )

    def _me_loss(self, batch: Batch, flows) -> Tensor:
        return mc_loss(batch.raw_target, [batch.raw_prev, batch.raw_next], flows)

    def _losses(self, phase: int, batch: Batch) -> Tuple[Optional[Tensor], Optional[Tensor], Tensor]:
        """返回 (L_ME, L_ENet, 总损失)，不参与的项为 None"""
        if phase == 1:
            flows = [
                compensate(batch.comp_target, neighbor, self.store, self.net_cfg).total_flow
                for neighbor in (batch.comp_prev, batch.comp_next)
            ]
            me = self._me_loss(batch, flows)
            return me, None, me

        out = sdts_forward(batch.comp_prev, batch.comp_target, batch.comp_next, self.store, self.net_cfg)
        enet = mse_loss(out.recon, batch.raw_target)
        if phase == 2 or not self.net_cfg.use_mc:
            return None, enet, enet
        me = self._me_loss(batch, out.flows)
        return me, enet, add(me, scale(enet, self.train_cfg.lambda2))

    def _run_phase(self, phase: int, pairs: Iterator[TrainingPair]) -> None:
        cfg = self.train_cfg
        groups = param_groups_for_phase(self.net_cfg, phase)
        for group in ParamGroup:
            self.store.set_trainable(group, group in groups)
        params = [p for group in groups for p in self.store.list_params(group)]
        state = AdamState(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

        offset = cfg.phase_offset(phase)
        logger.info(
            f"阶段 {phase} 开始: 轮次 {offset}..{offset + cfg.phase_epochs(phase) - 1}，"
            f"{len(params)} 个可训练张量"
        )
        last_good = self.step - 1
        for e in range(cfg.phase_epochs(phase)):
            epoch = offset + e
            state.lr = lr_schedule(epoch, cfg)
            epoch_total = 0.0
            for _ in range(cfg.steps_per_epoch):
                batch = collate([next(pairs) for _ in range(cfg.batch_size)])
                with graph_scope():
                    me, enet, total = self._losses(phase, batch)
                    values = {
                        "loss_me": me.item() if me is not None else 0.0,
                        "loss_enet": enet.item() if enet is not None else 0.0,
                        "loss_total": total.item(),
                    }
                    if not all(math.isfinite(v) for v in values.values()):
                        raise TrainingDivergedError(self.step, last_good, values)
                    backward(total)
                adam_step(params, state)

                self.loss_log.append(LossRecord(
                    self.step, epoch, state.lr,
                    values["loss_me"], values["loss_enet"], values["loss_total"]
                ))
                logger.debug(
                    f"step {self.step} epoch {epoch} lr {state.lr:g} "
                    f"me {values['loss_me']:.6g} enet {values['loss_enet']:.6g} total {values['loss_total']:.6g}"
                )
                epoch_total += values["loss_total"]
                last_good = self.step
                self.step += 1
            logger.info(f"阶段 {phase} 轮次 {epoch}: 平均损失 {epoch_total / cfg.steps_per_epoch:.6g}")

        for group in ParamGroup:
            self.store.set_trainable(group, True)

    # ---------- 各阶段 ----------

    def train_phase1(self, pairs: Iterator[TrainingPair]) -> Checkpoint:
        """阶段 1: 只训练 MC 模块，返回 mc 检查点"""
        if not self.net_cfg.use_mc:
            raise ConfigError("use_mc=False 的网络没有 MC 模块，不能执行阶段 1")
        self._run_phase(1, pairs)
        return self._checkpoint(1, ModelVariant.MC)

    def train_phase2(self, pairs: Iterator[TrainingPair], mc: Optional[Checkpoint] = None) -> Checkpoint:
        """
        阶段 2: 冻结 MC，训练融合子网与 ENet

        Args:
            pairs: 训练样本流
            mc: 阶段 1 的检查点；None 时使用训练器当前的 MC 参数
        """
        if mc is not None and mc.variant != ModelVariant.MC:
            raise ConfigError(f"阶段 2 需要 mc 检查点，收到 {mc.describe()}")
        if mc is not None and self.net_cfg.use_mc:
            self._check_config(mc)
            self.store.load_arrays(mc.params, ParamGroup.MC)
            self.provenance.append(mc.describe())
        self._run_phase(2, pairs)
        return self._checkpoint(2, self.variant)

    def train_phase3(self, pairs: Iterator[TrainingPair], partial: Optional[Checkpoint] = None) -> Checkpoint:
        """
        阶段 3: 以 L_ME + λ₂·L_ENet 联合微调全部参数

        Args:
            pairs: 训练样本流
            partial: 阶段 2 的检查点；None 时使用训练器当前的参数
        """
        if partial is not None:
            if partial.phase != 2 or partial.variant != self.variant:
                raise ConfigError(
                    f"阶段 3 需要 {self.variant.value} 模型的阶段 2 检查点，收到 {partial.describe()}"
                )
            self._check_config(partial)
            self.store.load_arrays(partial.params)
            self.provenance.append(partial.describe())
        self._run_phase(3, pairs)
        return self._checkpoint(3, self.variant)

    def finetune_from(self, src: Checkpoint, pairs: Iterator[TrainingPair]) -> Checkpoint:
        """
        从已有模型（例如另一个降质预设下训练的模型）初始化全部参数后执行阶段 3

        溯源链继承 src 的溯源链并追加 src 本身。
        """
        self._check_config(src)
        self.store.load_arrays(src.params)
        self.provenance = list(src.provenance) + [src.describe()]
        logger.info(f"从检查点微调: {src.describe()}")
        self._run_phase(3, pairs)
        return self._checkpoint(3, self.variant)

    def run_all(self, pairs: Iterator[TrainingPair]) -> Checkpoint:
        """依次执行三个阶段；SF 变体跳过阶段 1"""
        if self.net_cfg.use_mc:
            self.train_phase1(pairs)
        self.train_phase2(pairs)
        return self.train_phase3(pairs)


def get_trainer(
    net_cfg: NetConfig,
    train_cfg: TrainConfig,
    variant: ModelVariant,
    **kwargs
) -> SdtsTrainer:
    """获取训练器实例"""
    return SdtsTrainer(net_cfg, train_cfg, variant, **kwargs)
