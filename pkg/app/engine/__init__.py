"""
自动微分引擎
"""
from .tensor import Tensor, Graph, Node, current_graph, graph_scope, no_grad, backward
from .ops import (
    conv2d,
    relu,
    bilinear_sample,
    cost_volume,
    avg_downsample2,
    bilinear_upsample2,
    concat_channels,
    slice_channels,
    add,
    scale,
    sum_all,
    mse_loss,
)
from .optim import AdamState, adam_step

__all__ = [
    "Tensor",
    "Graph",
    "Node",
    "current_graph",
    "graph_scope",
    "no_grad",
    "backward",
    "conv2d",
    "relu",
    "bilinear_sample",
    "cost_volume",
    "avg_downsample2",
    "bilinear_upsample2",
    "concat_channels",
    "slice_channels",
    "add",
    "scale",
    "sum_all",
    "mse_loss",
    "AdamState",
    "adam_step",
]
