"""
参数注册与卷积层

参数名形如 "mc.coarse.conv4.weight"，第一段为参数组（mc / fusion / enet）。
"""
from enum import Enum
from typing import Dict, Iterator, List, Optional

import numpy as np

from ..core.exceptions import ShapeMismatchError
from ..engine import Tensor, conv2d, relu


class ParamGroup(str, Enum):
    """参数组"""
    MC = "mc"
    FUSION = "fusion"
    ENET = "enet"


class ParamStore:
    """
    参数注册中心 - 按名称管理一个模型的全部参数张量

    注册顺序即优化器中的参数顺序，保证训练可复现。
    """

    def __init__(self):
        self._params: Dict[str, Tensor] = {}

    def register(self, name: str, data: np.ndarray, requires_grad: bool = True) -> Tensor:
        """
        注册参数

        Args:
            name: 参数名
            data: 初始值
            requires_grad: 是否参与求导
        """
        if name in self._params:
            raise ValueError(f"参数 {name} 已注册")
        tensor = Tensor(data, requires_grad=requires_grad, name=name)
        self._params[name] = tensor
        return tensor

    def get(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"未注册的参数: {name}") from None

    def __getitem__(self, name: str) -> Tensor:
        return self.get(name)

    def list_params(self, group: Optional[ParamGroup] = None) -> List[Tensor]:
        """
        列出参数

        Args:
            group: 可选的参数组过滤
        """
        if group is None:
            return list(self._params.values())
        prefix = f"{ParamGroup(group).value}."
        return [t for name, t in self._params.items() if name.startswith(prefix)]

    def set_trainable(self, group: ParamGroup, trainable: bool) -> None:
        """冻结或解冻一个参数组"""
        for tensor in self.list_params(group):
            tensor.requires_grad = trainable
            tensor.grad = None

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def to_arrays(self) -> Dict[str, np.ndarray]:
        """导出参数副本（用于检查点）"""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray], group: Optional[ParamGroup] = None) -> None:
        """
        从数组载入参数

        Args:
            arrays: 参数名到数组的映射
            group: 只载入该组；None 表示全部
        """
        for tensor in self.list_params(group):
            if tensor.name not in arrays:
                raise KeyError(f"检查点缺少参数: {tensor.name}")
            value = np.asarray(arrays[tensor.name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ShapeMismatchError(
                    f"参数 {tensor.name} 形状不一致: 检查点 {value.shape}，模型 {tensor.shape}"
                )
            tensor.data = value.copy()
            tensor.grad = None

    def names(self) -> List[str]:
        return list(self._params.keys())

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def __contains__(self, name: str) -> bool:
        return name in self._params


def glorot_uniform(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> np.ndarray:
    """均匀分布 ±sqrt(6 / (fan_in + fan_out))"""
    fan_in, fan_out = c_in * k * k, c_out * k * k
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(c_out, c_in, k, k))


def register_conv(
    store: ParamStore,
    name: str,
    c_in: int,
    c_out: int,
    k: int,
    rng: np.random.Generator,
    zero: bool = False
) -> None:
    """
    注册一个卷积层的权重与偏置（偏置为零）

    zero=True 时权重也置零，用于让网络从恒等映射开始训练。
    """
    weight = np.zeros((c_out, c_in, k, k)) if zero else glorot_uniform(rng, c_out, c_in, k)
    store.register(f"{name}.weight", weight)
    store.register(f"{name}.bias", np.zeros(c_out))


def conv_layer(x: Tensor, store: ParamStore, name: str, activation: bool = True) -> Tensor:
    """卷积（同尺寸填充），activation=False 时为线性输出"""
    out = conv2d(x, store[f"{name}.weight"], store[f"{name}.bias"], stride=1)
    return relu(out) if activation else out
