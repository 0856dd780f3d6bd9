"""
网络模块: 运动补偿子网与 SDTS 增强网络
"""
from .layers import ParamGroup, ParamStore, glorot_uniform, register_conv, conv_layer
from .mc_module import (
    FlowField,
    McResult,
    init_mc_params,
    estimate_flow_coarse,
    estimate_flow_fine,
    estimate_flow_still,
    compose_total_flow,
    compensate,
    mc_loss,
)
from .sdts_net import (
    SdtsOutput,
    init_sdts_params,
    slow_fuse,
    res_slice_block,
    enet_forward,
    sdts_forward,
    param_groups_for_phase,
)

__all__ = [
    "ParamGroup",
    "ParamStore",
    "glorot_uniform",
    "register_conv",
    "conv_layer",
    "FlowField",
    "McResult",
    "init_mc_params",
    "estimate_flow_coarse",
    "estimate_flow_fine",
    "estimate_flow_still",
    "compose_total_flow",
    "compensate",
    "mc_loss",
    "SdtsOutput",
    "init_sdts_params",
    "slow_fuse",
    "res_slice_block",
    "enet_forward",
    "sdts_forward",
    "param_groups_for_phase",
]
