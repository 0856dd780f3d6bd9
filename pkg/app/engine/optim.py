"""
Adam 优化器
"""
from typing import List

import numpy as np

from .tensor import Tensor


class AdamState:
    """
    Adam 状态: 每个参数的一阶矩 m、二阶矩 v 与步数 t

    m、v 初始为零，t 从 0 开始，每次 adam_step 加 1。
    """

    def __init__(
        self,
        params: List[Tensor],
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8
    ):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: List[Tensor], state: AdamState) -> None:
    """
    执行一次带偏差修正的 Adam 更新，然后清空梯度

    Args:
        params: 参数列表（顺序须与创建 state 时一致）
        state: Adam 状态

    Raises:
        ValueError: 参数数量不匹配或某个参数没有梯度
    """
    if len(params) != len(state.m):
        raise ValueError(f"参数数量 {len(params)} 与优化器状态 {len(state.m)} 不一致")
    missing = [p.name or str(i) for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise ValueError(f"以下参数缺少梯度: {', '.join(missing)}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t

    for i, p in enumerate(params):
        g = p.grad
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / correction1
        v_hat = state.v[i] / correction2
        p.data = p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = None
