"""
运动补偿（MC）模块

三个光流估计分支:
1. coarse: ×4 下采样后估计，处理大尺度运动
2. fine:   ×2 下采样后估计粗光流的残差
3. still:  不下采样，处理静止场景的残差

每个分支的输入除帧本身外还有一组局部匹配代价（cost_volume），
输出层同时接收最后一个隐层与分支输入（密集连接）。

总光流为三者逐元素相加，只对参考帧做一次 warp:
    I'(x, y) = I(x + Δx, y + Δy)，Δ = Δc + Δf + Δs
"""
from typing import List, NamedTuple

import numpy as np

from ..core.config import NetConfig
from ..core.exceptions import ShapeMismatchError
from ..engine import (
    Tensor,
    add,
    avg_downsample2,
    bilinear_sample,
    bilinear_upsample2,
    concat_channels,
    cost_volume,
    mse_loss,
    scale,
)
from .layers import ParamStore, conv_layer, register_conv

# 光流场: (n, 2, h, w)，通道 0 为 Δx，通道 1 为 Δy，像素单位
FlowField = Tensor

# 各分支的帧通道: coarse = 目标 + 参考；fine = 目标 + 粗 warp 参考 + 粗光流；still = 目标 + 细 warp 参考
BRANCH_INPUTS = {"coarse": 2, "fine": 4, "still": 2}


def cost_channels(cfg: NetConfig) -> int:
    """匹配代价的通道数 (2r+1)²"""
    return (2 * cfg.mc_radius + 1) ** 2


def branch_in_channels(branch: str, cfg: NetConfig) -> int:
    """分支第一层的输入通道数: 帧通道 + 匹配代价"""
    return BRANCH_INPUTS[branch] + cost_channels(cfg)


class McResult(NamedTuple):
    """一次运动补偿的输出"""
    warped: Tensor
    total_flow: FlowField
    coarse: FlowField
    fine: FlowField
    still: FlowField


def init_mc_params(
    store: ParamStore,
    cfg: NetConfig,
    rng: np.random.Generator,
    identity_init: bool = True
) -> None:
    """
    注册三个光流分支的参数

    每个分支 mc_layers 层 3×3 卷积，隐层 ReLU，最后一层线性输出 2 通道；
    最后一层的输入是最后一个隐层与分支输入的拼接。
    identity_init=True 时最后一层置零，训练从恒等 warp 开始。
    """
    for branch in BRANCH_INPUTS:
        c_in = branch_in_channels(branch, cfg)
        channels = c_in
        for i in range(cfg.mc_layers - 1):
            register_conv(store, f"mc.{branch}.conv{i}", channels, cfg.mc_channels, 3, rng)
            channels = cfg.mc_channels
        register_conv(
            store, f"mc.{branch}.conv{cfg.mc_layers - 1}", channels + c_in, 2, 3, rng,
            zero=identity_init
        )


def _run_branch(x: Tensor, store: ParamStore, branch: str, cfg: NetConfig) -> Tensor:
    hidden = x
    for i in range(cfg.mc_layers - 1):
        hidden = conv_layer(hidden, store, f"mc.{branch}.conv{i}")
    return conv_layer(
        concat_channels([hidden, x]), store, f"mc.{branch}.conv{cfg.mc_layers - 1}", activation=False
    )


def _check_pair(target: Tensor, other: Tensor, op: str, multiple: int) -> None:
    if target.data.ndim != 4 or other.data.ndim != 4:
        raise ShapeMismatchError(f"{op}: 帧必须是 (n, 1, h, w)")
    if target.shape[0] != other.shape[0] or target.shape[2:] != other.shape[2:]:
        raise ShapeMismatchError(f"{op}: 帧尺寸不一致 {target.shape} vs {other.shape}")
    h, w = target.shape[2:]
    if h % multiple or w % multiple:
        raise ShapeMismatchError(f"{op}: 帧尺寸 h/w 必须是 {multiple} 的倍数，当前 {h}×{w}")


def estimate_flow_coarse(target: Tensor, neighbor: Tensor, store: ParamStore, cfg: NetConfig) -> FlowField:
    """×4 尺度估计光流，上采样回全分辨率并把位移乘以 4"""
    _check_pair(target, neighbor, "estimate_flow_coarse", 4)
    t4 = avg_downsample2(avg_downsample2(target))
    n4 = avg_downsample2(avg_downsample2(neighbor))
    x = concat_channels([t4, n4, cost_volume(t4, n4, cfg.mc_radius)])
    flow = _run_branch(x, store, "coarse", cfg)
    flow = bilinear_upsample2(bilinear_upsample2(flow))
    return scale(flow, 4.0)


def estimate_flow_fine(
    target: Tensor,
    neighbor_coarse_warped: Tensor,
    coarse_flow: FlowField,
    store: ParamStore,
    cfg: NetConfig
) -> FlowField:
    """×2 尺度估计粗光流的残差"""
    _check_pair(target, neighbor_coarse_warped, "estimate_flow_fine", 2)
    _check_pair(target, coarse_flow, "estimate_flow_fine", 2)
    t2 = avg_downsample2(target)
    w2 = avg_downsample2(neighbor_coarse_warped)
    x = concat_channels([t2, w2, avg_downsample2(coarse_flow), cost_volume(t2, w2, cfg.mc_radius)])
    flow = _run_branch(x, store, "fine", cfg)
    return scale(bilinear_upsample2(flow), 2.0)


def estimate_flow_still(
    target: Tensor,
    neighbor_fine_warped: Tensor,
    store: ParamStore,
    cfg: NetConfig
) -> FlowField:
    """全分辨率（无金字塔）估计残差光流，处理静止场景"""
    _check_pair(target, neighbor_fine_warped, "estimate_flow_still", 1)
    x = concat_channels([target, neighbor_fine_warped, cost_volume(target, neighbor_fine_warped, cfg.mc_radius)])
    return _run_branch(x, store, "still", cfg)


def compose_total_flow(coarse: FlowField, fine: FlowField, still: FlowField) -> FlowField:
    """总光流 = 三个分支逐元素相加"""
    for flow in (coarse, fine, still):
        if flow.data.ndim != 4 or flow.shape[1] != 2:
            raise ShapeMismatchError(f"compose_total_flow: 光流必须是 (n, 2, h, w)，当前 {flow.shape}")
    return add(add(coarse, fine), still)


def compensate(target: Tensor, neighbor: Tensor, store: ParamStore, cfg: NetConfig) -> McResult:
    """
    把参考帧补偿到目标帧

    coarse → warp → fine → warp → still，最后用总光流对参考帧做一次 warp。

    Args:
        target: 目标帧 (n, 1, h, w)
        neighbor: 参考帧 (n, 1, h, w)

    Returns:
        McResult
    """
    _check_pair(target, neighbor, "compensate", 4)
    coarse = estimate_flow_coarse(target, neighbor, store, cfg)
    warped_coarse = bilinear_sample(neighbor, coarse)

    fine = estimate_flow_fine(target, warped_coarse, coarse, store, cfg)
    warped_fine = bilinear_sample(neighbor, add(coarse, fine))

    still = estimate_flow_still(target, warped_fine, store, cfg)
    total = compose_total_flow(coarse, fine, still)
    return McResult(
        warped=bilinear_sample(neighbor, total),
        total_flow=total,
        coarse=coarse,
        fine=fine,
        still=still,
    )


def mc_loss(raw_target: Tensor, raw_neighbors: List[Tensor], flows: List[FlowField]) -> Tensor:
    """
    运动估计损失: 用估计的光流 warp 原始参考帧，与原始目标帧求 MSE 后累加

    目标帧 warp 到自身的一项恒为零，不计入。
    """
    if len(raw_neighbors) != len(flows):
        raise ShapeMismatchError(
            f"mc_loss: 参考帧数量 {len(raw_neighbors)} 与光流数量 {len(flows)} 不一致"
        )
    if not flows:
        raise ShapeMismatchError("mc_loss: 至少需要一个参考帧")

    loss = None
    for neighbor, flow in zip(raw_neighbors, flows):
        term = mse_loss(bilinear_sample(neighbor, flow), raw_target)
        loss = term if loss is None else add(loss, term)
    return loss
