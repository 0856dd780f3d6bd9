"""
反向模式自动微分的张量与计算图

每个线程持有自己的当前计算图（Graph），算子按执行顺序把节点追加进去；
backward 严格按逆序遍历后清空计算图，训练时每一步重建一次。
"""
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import ShapeMismatchError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """
    N×C×H×W 的 float64 数组，参与反向模式求导

    标量损失的 data 形状为 ()。
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_graph")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._graph: Optional["Graph"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatchError(f"item() 只适用于单元素张量，当前形状 {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __add__(self, other: "Tensor") -> "Tensor":
        from .ops import add
        return add(self, other)

    def __repr__(self) -> str:
        label = f"{self.name}, " if self.name else ""
        return f"Tensor({label}shape={self.shape}, requires_grad={self.requires_grad})"


class Node:
    """计算图中一次已执行的算子"""

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward_fn: BackwardFn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Graph:
    """只追加的节点列表，拓扑顺序即执行顺序"""

    def __init__(self):
        self.nodes: List[Node] = []

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


_state = threading.local()


def current_graph() -> Graph:
    """获取当前线程的计算图"""
    graph = getattr(_state, "graph", None)
    if graph is None:
        graph = Graph()
        _state.graph = graph
    return graph


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def graph_scope() -> Iterator[Graph]:
    """在新的计算图中执行一段前向/反向计算"""
    previous = getattr(_state, "graph", None)
    graph = Graph()
    _state.graph = graph
    try:
        yield graph
    finally:
        graph.clear()
        _state.graph = previous


@contextmanager
def no_grad() -> Iterator[None]:
    """推理模式: 不记录计算图"""
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def make_output(
    op: str,
    data: np.ndarray,
    inputs: Tuple[Tensor, ...],
    backward_fn: BackwardFn
) -> Tensor:
    """创建算子输出，并在需要求导时记录节点"""
    requires = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    if requires:
        graph = current_graph()
        out._graph = graph
        graph.record(Node(op, inputs, out, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """
    从标量损失反向传播

    Args:
        loss: 当前计算图产生的标量

    Raises:
        ShapeMismatchError: 损失不是标量
        ValueError: 损失不在任何计算图中
    """
    if loss.size != 1:
        raise ShapeMismatchError(f"backward 只接受标量损失，当前形状 {loss.shape}")
    graph = loss._graph
    if graph is None or not loss.requires_grad:
        raise ValueError("损失不依赖任何 requires_grad 张量，无法反向传播")

    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.nodes):
        upstream = node.output.grad
        if upstream is None:
            continue
        grads = node.backward_fn(upstream)
        for tensor, grad in zip(node.inputs, grads):
            if grad is None or not tensor.requires_grad:
                continue
            # 非原地累加: 多处使用同一张量时梯度相加，且不与其他缓冲区共享内存
            tensor.grad = grad if tensor.grad is None else tensor.grad + grad
    graph.clear()
    loss._graph = None
