"""
测试公共工具: 有限差分梯度检查、小型网络配置、脚本方式运行测试
"""
import inspect
import os
import sys
from typing import Callable, Dict, List

import numpy as np
import pytest

sys.path.append('.')

from app.core.config import NetConfig
from app.engine import Tensor, backward, graph_scope, no_grad
from app.network import ParamStore

RUN_SLOW = os.getenv("SDTS_RUN_SLOW") == "1"


def slow(func: Callable) -> Callable:
    """长时间训练用例: 只有 SDTS_RUN_SLOW=1 时运行"""
    func = pytest.mark.slow(func)
    return pytest.mark.skipif(not RUN_SLOW, reason="设置 SDTS_RUN_SLOW=1 运行训练用例")(func)


def tiny_net_config(**overrides) -> NetConfig:
    """梯度检查用的小网络"""
    values = dict(channels=4, blocks=1, mc_channels=2, mc_layers=2)
    values.update(overrides)
    return NetConfig(**values)


def randomize_biases(store: ParamStore, seed: int = 0, std: float = 0.1) -> None:
    """偏置改为随机值，避免激活前的值恰好落在 ReLU 拐点上"""
    rng = np.random.default_rng(seed)
    for tensor in store:
        if tensor.name.endswith(".bias"):
            tensor.data = rng.normal(0.0, std, size=tensor.shape)


def random_frames(n: int, h: int, w: int, seed: int) -> Tensor:
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(0.1, 0.9, size=(n, 1, h, w)))


def _numeric(build_loss: Callable[[], Tensor], tensor: Tensor, index, h: float) -> float:
    orig = tensor.data[index]
    tensor.data[index] = orig + h
    with no_grad():
        plus = build_loss().item()
    tensor.data[index] = orig - h
    with no_grad():
        minus = build_loss().item()
    tensor.data[index] = orig
    return (plus - minus) / (2.0 * h)


def check_gradients(
    build_loss: Callable[[], Tensor],
    tensors: List[Tensor],
    samples: int = 3,
    seed: int = 0,
    h: float = 1e-5,
    rtol: float = 1e-6,
    atol: float = 1e-8
) -> int:
    """
    用中心差分检查解析梯度

    同一元素用 h 与 h/2 两个步长各算一次数值梯度；两者不一致说明步长范围内有拐点
    （ReLU 或双线性插值的整数坐标），该元素跳过。

    Returns:
        实际比较过的元素个数
    """
    for t in tensors:
        t.grad = None
    with graph_scope():
        backward(build_loss())

    rng = np.random.default_rng(seed)
    checked = 0
    for t in tensors:
        assert t.grad is not None, f"{t.name or t.shape} 没有梯度"
        analytic = t.grad.copy()
        t.grad = None
        done = 0
        order = rng.permutation(t.size)
        for flat in order[: samples * 4]:
            if done >= samples:
                break
            index = np.unravel_index(int(flat), t.shape)
            n1 = _numeric(build_loss, t, index, h)
            n2 = _numeric(build_loss, t, index, h / 2)
            if abs(n1 - n2) > rtol * max(abs(n1), abs(n2)) + atol:
                continue
            a = float(analytic[index])
            assert abs(a - n1) <= rtol * max(abs(a), abs(n1)) + atol, (
                f"{t.name or t.shape}{index}: 解析 {a!r} vs 数值 {n1!r}"
            )
            done += 1
        assert done > 0, f"{t.name or t.shape}: 所有采样点都落在拐点附近"
        checked += done
    return checked


def run_tests(namespace: Dict[str, object]) -> None:
    """脚本方式运行: 依次执行所有 test_ 函数并打印结果"""
    tests = [
        (name, func) for name, func in namespace.items()
        if name.startswith("test_") and inspect.isfunction(func)
    ]
    print("=" * 60)
    failed = 0
    for name, func in tests:
        marks = [m.name for m in getattr(func, "pytestmark", [])]
        if "slow" in marks and not RUN_SLOW:
            print(f"- {name} (跳过: 设置 SDTS_RUN_SLOW=1 运行)")
            continue
        try:
            func()
            print(f"✓ {name}")
        except Exception as e:  # noqa: BLE001
            failed += 1
            print(f"✗ {name}: {type(e).__name__}: {e}")
    print("=" * 60)
    print(f"  {len(tests) - failed}/{len(tests)} 通过")
    if failed:
        sys.exit(1)
