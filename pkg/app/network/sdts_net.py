"""
SDTS 网络: 时间结构融合子网 + 空间细节增强子网（ENet）

前向流程:
    前后最近的 HQF 分别经 MC 模块补偿到目标帧
    → slow fusion 分层融合三帧
    → 若干 Res_Slice_Block → 线性输出层 → 加上目标帧（全局残差）

网络内部帧取值归一化到 [0, 1]。
"""
from typing import List, NamedTuple, Optional

import numpy as np

from ..core.config import NetConfig
from ..core.exceptions import ShapeMismatchError
from ..engine import Tensor, add, concat_channels, slice_channels
from .layers import ParamGroup, ParamStore, conv_layer, register_conv
from .mc_module import FlowField, McResult, compensate, init_mc_params


class SdtsOutput(NamedTuple):
    """前向输出: 重建帧及诊断用的中间结果（前、后参考帧各一份）"""
    recon: Tensor
    flows: List[FlowField]
    warped: List[Tensor]
    mc: List[Optional[McResult]]


def init_sdts_params(cfg: NetConfig, seed: int, identity_init: bool = True) -> ParamStore:
    """
    按 NetConfig 初始化全部参数

    Args:
        cfg: 网络结构配置
        seed: 随机种子
        identity_init: True 时 MC 各分支最后一层与 ENet 输出层置零，
            整个网络在初始化时是目标帧上的恒等映射

    Returns:
        ParamStore，注册顺序为 mc → fusion → enet
    """
    rng = np.random.default_rng(seed)
    store = ParamStore()
    if cfg.use_mc:
        init_mc_params(store, cfg, rng, identity_init=identity_init)

    c = cfg.channels
    register_conv(store, "fusion.lift", 1, c, 3, rng)
    register_conv(store, "fusion.pair_prev", 2 * c, c, 3, rng)
    register_conv(store, "fusion.pair_next", 2 * c, c, 3, rng)
    register_conv(store, "fusion.merge", 2 * c, c, 3, rng)

    long_c = c - cfg.slice_split
    register_conv(store, "enet.head", c, c, 3, rng)
    for b in range(cfg.blocks):
        register_conv(store, f"enet.block{b}.long0", long_c, long_c, 3, rng)
        register_conv(store, f"enet.block{b}.long1", long_c, long_c, 3, rng)
        register_conv(store, f"enet.block{b}.merge", c, c, 1, rng)
    register_conv(store, "enet.tail", c, 1, 3, rng, zero=identity_init)
    return store


def slow_fuse(
    target: Tensor,
    warped_prev: Tensor,
    warped_next: Tensor,
    store: ParamStore,
    cfg: NetConfig
) -> Tensor:
    """
    分层融合三帧

    第一级: 共享卷积把每帧提升到特征空间
    第二级: (prev, target) 与 (target, next) 两两拼接后卷积
    第三级: 两组特征拼接后卷积，输出 channels 个通道
    """
    if not (target.shape == warped_prev.shape == warped_next.shape):
        raise ShapeMismatchError(
            f"slow_fuse: 三帧尺寸不一致 {warped_prev.shape} / {target.shape} / {warped_next.shape}"
        )
    f_prev = conv_layer(warped_prev, store, "fusion.lift")
    f_target = conv_layer(target, store, "fusion.lift")
    f_next = conv_layer(warped_next, store, "fusion.lift")

    pair_prev = conv_layer(concat_channels([f_prev, f_target]), store, "fusion.pair_prev")
    pair_next = conv_layer(concat_channels([f_target, f_next]), store, "fusion.pair_next")
    return conv_layer(concat_channels([pair_prev, pair_next]), store, "fusion.merge")


def res_slice_block(features: Tensor, store: ParamStore, cfg: NetConfig, index: int) -> Tensor:
    """
    Res_Slice_Block

    特征按 slice_split 切成短路径与长路径；只有长路径经过两级 3×3 卷积，
    再与短路径拼接，经 1×1 卷积融合后加上块输入。
    """
    if features.data.ndim != 4 or features.shape[1] != cfg.channels:
        raise ShapeMismatchError(
            f"res_slice_block: 通道数 c 必须为 {cfg.channels}，当前形状 {features.shape}"
        )
    name = f"enet.block{index}"
    short, long = slice_channels(features, cfg.slice_split)
    long = conv_layer(long, store, f"{name}.long0")
    long = conv_layer(long, store, f"{name}.long1")
    merged = conv_layer(concat_channels([short, long]), store, f"{name}.merge", activation=False)
    return add(merged, features)


def enet_forward(fused: Tensor, target: Tensor, store: ParamStore, cfg: NetConfig) -> Tensor:
    """增强子网: 头卷积 → B 个 Res_Slice_Block → 线性输出 → 加上目标帧"""
    if fused.shape[0] != target.shape[0] or fused.shape[2:] != target.shape[2:]:
        raise ShapeMismatchError(f"enet_forward: 融合特征 {fused.shape} 与目标帧 {target.shape} 尺寸不一致")
    x = conv_layer(fused, store, "enet.head")
    for b in range(cfg.blocks):
        x = res_slice_block(x, store, cfg, b)
    residual = conv_layer(x, store, "enet.tail", activation=False)
    return add(residual, target)


def sdts_forward(
    prev_hqf: Tensor,
    target: Tensor,
    next_hqf: Tensor,
    store: ParamStore,
    cfg: NetConfig
) -> SdtsOutput:
    """
    SDTS 完整前向

    Args:
        prev_hqf: 前一个最近 HQF（压缩帧）
        target: 目标帧（压缩帧）
        next_hqf: 后一个最近 HQF（压缩帧）

    Returns:
        SdtsOutput
    """
    if not (prev_hqf.shape == target.shape == next_hqf.shape):
        raise ShapeMismatchError(
            f"sdts_forward: 三帧尺寸不一致 {prev_hqf.shape} / {target.shape} / {next_hqf.shape}"
        )
    if cfg.use_mc:
        mc_prev = compensate(target, prev_hqf, store, cfg)
        mc_next = compensate(target, next_hqf, store, cfg)
        mc = [mc_prev, mc_next]
        warped = [mc_prev.warped, mc_next.warped]
        flows = [mc_prev.total_flow, mc_next.total_flow]
    else:
        # SF 变体: 不做运动补偿，直接融合未对齐的参考帧
        n, _, h, w = target.shape
        mc = [None, None]
        warped = [prev_hqf, next_hqf]
        flows = [Tensor(np.zeros((n, 2, h, w))), Tensor(np.zeros((n, 2, h, w)))]

    fused = slow_fuse(target, warped[0], warped[1], store, cfg)
    recon = enet_forward(fused, target, store, cfg)
    return SdtsOutput(recon=recon, flows=flows, warped=warped, mc=mc)


def param_groups_for_phase(cfg: NetConfig, phase: int) -> List[ParamGroup]:
    """各训练阶段参与优化的参数组"""
    if phase == 1:
        return [ParamGroup.MC]
    if phase == 2:
        return [ParamGroup.FUSION, ParamGroup.ENET]
    groups = [ParamGroup.FUSION, ParamGroup.ENET]
    return ([ParamGroup.MC] + groups) if cfg.use_mc else groups
