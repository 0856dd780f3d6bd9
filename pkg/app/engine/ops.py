"""
可微算子

全部为 float64，输入形状为 (n, c, h, w)。不支持广播。
"""
from functools import lru_cache
from typing import List, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..core.exceptions import ShapeMismatchError
from .tensor import Tensor, make_output


def _require_4d(x: Tensor, op: str) -> Tuple[int, int, int, int]:
    if x.data.ndim != 4:
        raise ShapeMismatchError(f"{op}: 输入必须是 (n, c, h, w)，当前形状 {x.shape}")
    return x.shape


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        dims = ("n", "c", "h", "w")
        bad = [
            dims[i] if i < len(dims) else str(i)
            for i, (p, q) in enumerate(zip(a.shape, b.shape)) if p != q
        ]
        detail = f"维度 {','.join(bad)} 不一致" if bad else "维数不一致"
        raise ShapeMismatchError(f"{op}: 形状 {a.shape} 与 {b.shape} {detail}")


# ============================================================
# 卷积与激活
# ============================================================

def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    stride: int = 1,
    padding: int = None
) -> Tensor:
    """
    二维卷积（互相关），零填充

    Args:
        x: 输入 (n, c_in, h, w)
        weight: 卷积核 (c_out, c_in, k, k)，k 为奇数
        bias: 偏置 (c_out,)
        stride: 步长
        padding: 填充，默认 (k-1)/2 保持尺寸

    Returns:
        (n, c_out, floor((h + 2p - k)/stride) + 1, ...)
    """
    n, c, h, w = _require_4d(x, "conv2d")
    if weight.data.ndim != 4:
        raise ShapeMismatchError(f"conv2d: 卷积核必须是 (c_out, c_in, k, k)，当前形状 {weight.shape}")
    c_out, c_in, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeMismatchError(f"conv2d: 卷积核尺寸 k 必须为奇数且为方形，当前 {kh}×{kw}")
    if c_in != c:
        raise ShapeMismatchError(f"conv2d: 输入通道 c_in 不匹配，卷积核 {c_in}，输入 {c}")
    if bias.shape != (c_out,):
        raise ShapeMismatchError(f"conv2d: 偏置维度 c_out 不匹配，期望 ({c_out},)，当前 {bias.shape}")
    if stride < 1:
        raise ShapeMismatchError(f"conv2d: stride 必须 ≥ 1，当前 {stride}")

    k = kh
    p = (k - 1) // 2 if padding is None else padding
    if h + 2 * p < k or w + 2 * p < k:
        raise ShapeMismatchError(f"conv2d: 空间尺寸 h/w 过小 ({h}×{w})，无法容纳 {k}×{k} 卷积核")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]

    # im2col: (n·ho·wo, c·k·k)，反向求权重梯度时复用
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)
    w_mat = weight.data.reshape(c_out, c * k * k)
    out = (cols @ w_mat.T).reshape(n, ho, wo, c_out)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2)) + bias.data[None, :, None, None]
    saved_cols = cols if weight.requires_grad else None
    del cols, windows

    def _backward(g: np.ndarray):
        g_mat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, c_out)
        gw = (g_mat.T @ saved_cols).reshape(c_out, c, k, k) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        gx = None
        if x.requires_grad:
            g_cols = (g_mat @ w_mat).reshape(n, ho, wo, c, k, k).transpose(4, 5, 0, 3, 1, 2)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += g_cols[i, j]
            gx = gxp[:, :, p:p + h, p:p + w]
        return gx, gw, gb

    return make_output("conv2d", out, (x, weight, bias), _backward)


def relu(x: Tensor) -> Tensor:
    """逐元素 max(0, x)"""
    mask = x.data > 0
    out = np.where(mask, x.data, 0.0)

    def _backward(g: np.ndarray):
        return (g * mask,)

    return make_output("relu", out, (x,), _backward)


# ============================================================
# 双线性采样（可微 warp）
# ============================================================

def bilinear_sample(image: Tensor, flow: Tensor) -> Tensor:
    """
    按光流对图像做双线性采样

    output(x, y) = image(x + Δx(x, y), y + Δy(x, y))，越界坐标截断到边缘。
    flow 通道 0 为 Δx（列方向），通道 1 为 Δy（行方向），单位为像素。

    Args:
        image: (n, c, h, w)
        flow: (n, 2, h, w)

    Returns:
        (n, c, h, w)
    """
    n, c, h, w = _require_4d(image, "bilinear_sample")
    _require_4d(flow, "bilinear_sample")
    if flow.shape[1] != 2:
        raise ShapeMismatchError(f"bilinear_sample: 光流必须是 2 通道，当前 {flow.shape[1]}")
    if flow.shape[0] != n or flow.shape[2:] != (h, w):
        raise ShapeMismatchError(
            f"bilinear_sample: 光流 {flow.shape} 与图像 {image.shape} 的 n/h/w 不一致"
        )

    gx = np.arange(w, dtype=np.float64)[None, None, :]
    gy = np.arange(h, dtype=np.float64)[None, :, None]
    sx_raw = gx + flow.data[:, 0]
    sy_raw = gy + flow.data[:, 1]
    sx = np.clip(sx_raw, 0.0, w - 1)
    sy = np.clip(sy_raw, 0.0, h - 1)

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (sx - x0)[..., None]
    wy = (sy - y0)[..., None]

    img = image.data.transpose(0, 2, 3, 1)
    b = np.arange(n)[:, None, None]
    v00 = img[b, y0, x0]
    v01 = img[b, y0, x1]
    v10 = img[b, y1, x0]
    v11 = img[b, y1, x1]

    top = v00 * (1.0 - wx) + v01 * wx
    bottom = v10 * (1.0 - wx) + v11 * wx
    out = top * (1.0 - wy) + bottom * wy
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def _backward(g: np.ndarray):
        gt = g.transpose(0, 2, 3, 1)
        g_image = None
        if image.requires_grad:
            corners = (
                (y0, x0, (1.0 - wx) * (1.0 - wy)),
                (y0, x1, wx * (1.0 - wy)),
                (y1, x0, (1.0 - wx) * wy),
                (y1, x1, wx * wy),
            )
            flat_idx = np.concatenate([((b * h + yy) * w + xx).ravel() for yy, xx, _ in corners])
            g_img = np.empty((n * h * w, c))
            for ch in range(c):
                weights = np.concatenate([(gt[..., ch] * wt[..., 0]).ravel() for _, _, wt in corners])
                g_img[:, ch] = np.bincount(flat_idx, weights=weights, minlength=n * h * w)
            g_image = np.ascontiguousarray(g_img.reshape(n, h, w, c).transpose(0, 3, 1, 2))

        g_flow = None
        if flow.requires_grad:
            d_sx = (v01 - v00) * (1.0 - wy) + (v11 - v10) * wy
            d_sy = (v10 - v00) * (1.0 - wx) + (v11 - v01) * wx
            inside_x = (sx_raw >= 0.0) & (sx_raw <= w - 1)
            inside_y = (sy_raw >= 0.0) & (sy_raw <= h - 1)
            g_flow = np.stack(
                [(gt * d_sx).sum(axis=-1) * inside_x, (gt * d_sy).sum(axis=-1) * inside_y],
                axis=1
            )
        return g_image, g_flow

    return make_output("bilinear_sample", out, (image, flow), _backward)


# ============================================================
# 局部匹配代价
# ============================================================

COST_EPS = 1e-4


def _box3(x: np.ndarray) -> np.ndarray:
    """最后两维上的 3×3 均值滤波（零填充），自身即为伴随算子"""
    pad = [(0, 0)] * (x.ndim - 2) + [(1, 1), (1, 1)]
    xp = np.pad(x, pad)
    h, w = x.shape[-2:]
    out = np.zeros_like(x)
    for i in range(3):
        for j in range(3):
            out += xp[..., i:i + h, j:j + w]
    return out / 9.0


def _fold_edge_pad(g: np.ndarray, r: int) -> np.ndarray:
    """edge 填充 r 像素的伴随: 把填充区的梯度累加回边缘行列"""
    h, w = g.shape[2] - 2 * r, g.shape[3] - 2 * r
    rows = g[:, :, r:r + h, :].copy()
    rows[:, :, 0, :] += g[:, :, :r, :].sum(axis=2)
    rows[:, :, h - 1, :] += g[:, :, r + h:, :].sum(axis=2)
    out = rows[:, :, :, r:r + w].copy()
    out[:, :, :, 0] += rows[:, :, :, :r].sum(axis=3)
    out[:, :, :, w - 1] += rows[:, :, :, r + w:].sum(axis=3)
    return out


def cost_volume(target: Tensor, neighbor: Tensor, radius: int, eps: float = COST_EPS) -> Tensor:
    """
    局部匹配代价

    对 [-radius, radius]² 内的每个整数位移 d，计算
    S_d(x) = box3(Σ_c (target(x) − neighbor(x + d))²)，越界坐标截断到边缘；
    再按像素除以所有位移的平均代价（加 eps），输出与图像对比度无关。
    通道顺序: Δy 从 −radius 到 radius，每个 Δy 内 Δx 从 −radius 到 radius。

    Args:
        target: (n, c, h, w)
        neighbor: (n, c, h, w)
        radius: 搜索半径（像素）

    Returns:
        (n, (2·radius+1)², h, w)
    """
    n, c, h, w = _require_4d(target, "cost_volume")
    _require_same_shape(target, neighbor, "cost_volume")
    if radius < 1:
        raise ShapeMismatchError(f"cost_volume: radius 必须 ≥ 1，当前 {radius}")

    r = radius
    offsets = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
    a = target.data
    bp = np.pad(neighbor.data, ((0, 0), (0, 0), (r, r), (r, r)), mode="edge")
    diffs = np.stack([a - bp[:, :, r + dy:r + dy + h, r + dx:r + dx + w] for dy, dx in offsets], axis=1)
    s = _box3((diffs * diffs).sum(axis=2))
    mean = s.mean(axis=1, keepdims=True) + eps
    out = s / mean

    def _backward(g: np.ndarray):
        d_s = g / mean - (g * s).sum(axis=1, keepdims=True) / (mean * mean * len(offsets))
        d_sq = 2.0 * _box3(d_s)[:, :, None] * diffs
        g_target = d_sq.sum(axis=1) if target.requires_grad else None
        g_neighbor = None
        if neighbor.requires_grad:
            gp = np.zeros_like(bp)
            for k, (dy, dx) in enumerate(offsets):
                gp[:, :, r + dy:r + dy + h, r + dx:r + dx + w] -= d_sq[:, k]
            g_neighbor = _fold_edge_pad(gp, r)
        return g_target, g_neighbor

    return make_output("cost_volume", out, (target, neighbor), _backward)


# ============================================================
# 金字塔缩放
# ============================================================

def avg_downsample2(x: Tensor) -> Tensor:
    """2×2 块均值下采样"""
    n, c, h, w = _require_4d(x, "avg_downsample2")
    if h % 2 or w % 2:
        raise ShapeMismatchError(f"avg_downsample2: h/w 必须为偶数，当前 {h}×{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def _backward(g: np.ndarray):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * 0.25,)

    return make_output("avg_downsample2", out, (x,), _backward)


@lru_cache(maxsize=64)
def _upsample_matrix(size: int) -> np.ndarray:
    """
    角点对齐的 ×2 线性插值矩阵 (2·size, size)

    细网格第 i 个采样点对应粗网格坐标 i·(size−1)/(2·size−1)，两端角点重合。
    """
    out_size = 2 * size
    if size == 1:
        src = np.zeros(out_size)
    else:
        src = np.arange(out_size) * (size - 1) / (out_size - 1)
    i0 = np.minimum(np.floor(src).astype(np.int64), size - 1)
    i1 = np.minimum(i0 + 1, size - 1)
    t = src - i0
    mat = np.zeros((out_size, size))
    rows = np.arange(out_size)
    np.add.at(mat, (rows, i0), 1.0 - t)
    np.add.at(mat, (rows, i1), t)
    mat.setflags(write=False)
    return mat


def bilinear_upsample2(x: Tensor) -> Tensor:
    """
    ×2 双线性上采样（角点对齐）

    只做插值；光流的位移值需要调用方另行乘以缩放倍数。
    """
    n, c, h, w = _require_4d(x, "bilinear_upsample2")
    uh = _upsample_matrix(h)
    uw = _upsample_matrix(w)
    out = np.matmul(np.matmul(uh, x.data), uw.T)

    def _backward(g: np.ndarray):
        return (np.matmul(np.matmul(uh.T, g), uw),)

    return make_output("bilinear_upsample2", out, (x,), _backward)


# ============================================================
# 通道拼接 / 切分 / 逐元素运算
# ============================================================

def concat_channels(parts: List[Tensor]) -> Tensor:
    """沿通道维拼接，保持顺序"""
    if not parts:
        raise ShapeMismatchError("concat_channels: 输入列表为空")
    n, _, h, w = _require_4d(parts[0], "concat_channels")
    for part in parts[1:]:
        pn, _, ph, pw = _require_4d(part, "concat_channels")
        if (pn, ph, pw) != (n, h, w):
            raise ShapeMismatchError(
                f"concat_channels: {part.shape} 与 {parts[0].shape} 的 n/h/w 不一致"
            )
    sizes = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)
    out = np.concatenate([p.data for p in parts], axis=1)

    def _backward(g: np.ndarray):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return make_output("concat_channels", out, tuple(parts), _backward)


def slice_channels(x: Tensor, split: int) -> Tuple[Tensor, Tensor]:
    """按通道切分为 [0, split) 与 [split, c) 两部分"""
    n, c, h, w = _require_4d(x, "slice_channels")
    if not 0 < split < c:
        raise ShapeMismatchError(f"slice_channels: split 必须满足 0 < split < {c}，当前 {split}")

    def _head_backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[:, :split] = g
        return (full,)

    def _tail_backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[:, split:] = g
        return (full,)

    head = make_output("slice_channels", x.data[:, :split].copy(), (x,), _head_backward)
    tail = make_output("slice_channels", x.data[:, split:].copy(), (x,), _tail_backward)
    return head, tail


def add(a: Tensor, b: Tensor) -> Tensor:
    """逐元素相加（形状必须完全相同）"""
    _require_same_shape(a, b, "add")

    def _backward(g: np.ndarray):
        return g, g

    return make_output("add", a.data + b.data, (a, b), _backward)


def scale(x: Tensor, factor: float) -> Tensor:
    """乘以常数"""
    factor = float(factor)

    def _backward(g: np.ndarray):
        return (g * factor,)

    return make_output("scale", x.data * factor, (x,), _backward)


def sum_all(x: Tensor) -> Tensor:
    """全部元素求和，返回标量"""

    def _backward(g: np.ndarray):
        return (np.full_like(x.data, float(g)),)

    return make_output("sum_all", np.asarray(x.data.sum()), (x,), _backward)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """
    均方误差（对全部元素取平均），只对 pred 求导
    """
    _require_same_shape(pred, target, "mse_loss")
    diff = pred.data - target.data
    count = diff.size

    def _backward(g: np.ndarray):
        return g * (2.0 / count) * diff, None

    return make_output("mse_loss", np.asarray(np.mean(diff * diff)), (pred, target), _backward)
