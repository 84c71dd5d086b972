"""
SA3 - Differentiable Primitives

Every function takes tensors (or numbers/arrays, wrapped as constants),
computes its forward value with numpy, and records a backward rule on the
active GradTape when an input requires a gradient.

Complexity Guarantees:
- Elementwise ops, reductions, softmax: O(n)
- matmul: O(m·k·n)
- conv2d: O(Ho·Wo·kh·kw·Cin·Cout) via im2col
- crop_resize: O(S²·Hf·Wf·C) dense sampling matrix (feature maps are small)

Reductions use correctly rounded summation (math.fsum), so their results
do not depend on element order.
"""

import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from standards.errors import InvalidArgumentError, EmptyBoxError
from standards.formal_specs import verify_complexity
from .tensor import Tensor, as_tensor, record_op

BCE_EPS = 1e-7
_SIGMOID_LOW = np.finfo(np.float64).tiny
_SIGMOID_HIGH = 1.0 - 2.0 ** -53

Axis = Union[None, int, Tuple[int, ...]]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def exact_sum(array: np.ndarray, axis: Axis = None, keepdims: bool = False) -> np.ndarray:
    """Order-independent sum: each output element is the correctly rounded sum of its inputs."""
    array = np.asarray(array, dtype=np.float64)
    if axis is None:
        total = np.array(math.fsum(array.ravel().tolist()))
        return total.reshape((1,) * array.ndim) if keepdims else total
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % array.ndim for a in axes)
    kept = [a for a in range(array.ndim) if a not in axes]
    moved = np.transpose(array, kept + list(axes))
    kept_shape = tuple(array.shape[a] for a in kept)
    rows = moved.reshape(int(np.prod(kept_shape, dtype=np.int64)), -1)
    sums = np.array([math.fsum(row) for row in rows.tolist()], dtype=np.float64).reshape(kept_shape)
    if keepdims:
        sums = sums.reshape(tuple(1 if a in axes else array.shape[a] for a in range(array.ndim)))
    return sums


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)
    return record_op("add", (a, b), a.data + b.data, back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)
    return record_op("sub", (a, b), a.data - b.data, back)


def mul(a, b) -> Tensor:
    """Elementwise product; broadcasting covers per-channel scaling of H×W×C maps."""
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
    return record_op("mul", (a, b), a.data * b.data, back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record_op("neg", (a,), -a.data, lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    e = float(exponent)

    def back(g):
        return (g * e * a.data ** (e - 1.0),)
    return record_op("power", (a,), a.data ** e, back)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise InvalidArgumentError(f"matmul needs (m,k)@(k,n), got {a.shape} @ {b.shape}")

    def back(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)
    return record_op("matmul", (a, b), a.data @ b.data, back)


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(tuple(shape))
    return record_op("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def take(a, indices: Sequence[int], axis: int = 0) -> Tensor:
    """Gather entries along one axis; repeated indices accumulate gradient."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise InvalidArgumentError("take() needs at least one index")

    def back(g):
        grad = np.zeros(a.shape, dtype=np.float64)
        np.add.at(np.moveaxis(grad, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (grad,)
    return record_op("take", (a,), np.take(a.data, idx, axis=axis), back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    items = tuple(as_tensor(t) for t in tensors)
    if not items:
        raise InvalidArgumentError("stack() needs at least one tensor")

    def back(g):
        return tuple(np.take(g, i, axis=axis) if t.requires_grad else None
                     for i, t in enumerate(items))
    return record_op("stack", items, np.stack([t.data for t in items], axis=axis), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    items = tuple(as_tensor(t) for t in tensors)
    if not items:
        raise InvalidArgumentError("concat() needs at least one tensor")
    bounds = np.cumsum([0] + [t.shape[axis] for t in items])

    def back(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(np.moveaxis(moved[bounds[i]:bounds[i + 1]], 0, axis) if t.requires_grad else None
                     for i, t in enumerate(items))
    return record_op("concat", items, np.concatenate([t.data for t in items], axis=axis), back)


# ---------------------------------------------------------------------------
# Nonlinearities
# ---------------------------------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return record_op("relu", (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    flat = x.reshape(-1)
    out = np.empty(flat.shape, dtype=np.float64)
    positive = flat >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-flat[positive]))
    e = np.exp(flat[~positive])
    out[~positive] = e / (1.0 + e)
    return np.clip(out, _SIGMOID_LOW, _SIGMOID_HIGH).reshape(x.shape)


def sigmoid(a) -> Tensor:
    """Elementwise 1/(1+e^-x), kept strictly inside (0, 1)."""
    a = as_tensor(a)
    s = _sigmoid_values(a.data)
    return record_op("sigmoid", (a,), s, lambda g: (g * s * (1.0 - s),))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise InvalidArgumentError("log() of a non-positive value")
    return record_op("log", (a,), np.log(a.data), lambda g: (g / a.data,))


_SOFTMAX_AXES = {"row": 1, "column": 0, "col": 0}


@verify_complexity(time="O(n)", space="O(n)", description="n = matrix entries")
def softmax_axis(a, axis: str) -> Tensor:
    """
    Softmax of a rank-2 tensor along rows ("row": each row sums to 1) or
    columns ("column": each column sums to 1), stabilised by max subtraction.
    """
    a = as_tensor(a)
    if a.ndim != 2:
        raise InvalidArgumentError(f"softmax_axis needs a rank-2 tensor, got shape {a.shape}")
    if axis not in _SOFTMAX_AXES:
        raise InvalidArgumentError(f"axis must be 'row' or 'column', got {axis!r}")
    ax = _SOFTMAX_AXES[axis]
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    s = e / exact_sum(e, axis=ax, keepdims=True)

    def back(g):
        return (s * (g - np.sum(g * s, axis=ax, keepdims=True)),)
    return record_op("softmax_axis", (a,), s, back)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis: Axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    kept = list(shape)
    for ax in axes:
        kept[ax % len(shape)] = 1
    return np.broadcast_to(g.reshape(kept), shape)


def sum(a, axis: Axis = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    out = exact_sum(a.data, axis=axis)
    return record_op("sum", (a,), out, lambda g: (_expand_reduced(g, a.shape, axis),))


def mean(a, axis: Axis = None) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    out = exact_sum(a.data, axis=axis) / count
    return record_op("mean", (a,), out, lambda g: (_expand_reduced(g / count, a.shape, axis),))


def global_avg_pool(x) -> Tensor:
    """Channel-wise mean of an H×W×C map: y_c = (1/HW) Σ x_ijc."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise InvalidArgumentError(f"global_avg_pool needs H×W×C, got shape {x.shape}")
    height, width, _ = x.shape
    count = height * width
    out = exact_sum(x.data, axis=(0, 1)) / count

    def back(g):
        return (np.broadcast_to(g / count, x.shape),)
    return record_op("global_avg_pool", (x,), out, back)


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------

def largest_odd_at_most(n: int) -> int:
    return n if n % 2 == 1 else n - 1


def conv1d(signal, kernel) -> Tensor:
    """
    Zero-padded 1-D cross-correlation preserving length:
    out[i] = Σ_j kernel[j] · padded[i + j], padding (k-1)/2 on both sides.

    A kernel longer than the signal is trimmed to its central taps (the
    largest odd length ≤ C).

    Raises:
        InvalidArgumentError: even kernel length or non-vector inputs
    """
    signal, kernel = as_tensor(signal), as_tensor(kernel)
    if signal.ndim != 1 or kernel.ndim != 1:
        raise InvalidArgumentError("conv1d needs a vector signal and a vector kernel")
    k = kernel.shape[0]
    if k % 2 == 0:
        raise InvalidArgumentError(f"conv1d kernel length must be odd, got {k}")
    channels = signal.shape[0]
    k_eff = min(k, largest_odd_at_most(channels))
    offset = (k - k_eff) // 2
    taps = kernel.data[offset:offset + k_eff]
    pad = (k_eff - 1) // 2
    padded = np.pad(signal.data, pad)
    windows = sliding_window_view(padded, k_eff)
    out = windows @ taps

    def back(g):
        grad_signal = None
        if signal.requires_grad:
            grad_padded = np.zeros_like(padded)
            for j in range(k_eff):
                grad_padded[j:j + channels] += g * taps[j]
            grad_signal = grad_padded[pad:pad + channels]
        grad_kernel = None
        if kernel.requires_grad:
            grad_kernel = np.zeros(k, dtype=np.float64)
            grad_kernel[offset:offset + k_eff] = windows.T @ g
        return grad_signal, grad_kernel
    return record_op("conv1d", (signal, kernel), out, back)


@verify_complexity(time="O(n)", space="O(n)", description="n = Ho·Wo·kh·kw·Cin")
def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """
    2-D convolution of an H×W×Cin map with a kh×kw×Cin×Cout kernel.

    Raises:
        InvalidArgumentError: stride not 1 or 2, or mismatched channels
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if stride not in (1, 2):
        raise InvalidArgumentError(f"conv2d stride must be 1 or 2, got {stride}")
    if x.ndim != 3 or weight.ndim != 4 or x.shape[2] != weight.shape[2]:
        raise InvalidArgumentError(f"conv2d shape mismatch: input {x.shape}, weight {weight.shape}")
    kh, kw, cin, cout = weight.shape
    height, width = x.shape[:2]
    p = padding
    padded = np.pad(x.data, ((p, p), (p, p), (0, 0)))
    windows = sliding_window_view(padded, (kh, kw), axis=(0, 1))[::stride, ::stride]
    out_h, out_w = windows.shape[:2]
    cols = windows.transpose(0, 1, 3, 4, 2).reshape(out_h * out_w, kh * kw * cin)
    wmat = weight.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    inputs: Tuple[Tensor, ...] = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        inputs = (x, weight, bias)
    out = out.reshape(out_h, out_w, cout)

    def back(g):
        g2 = g.reshape(out_h * out_w, cout)
        grad_x = None
        if x.requires_grad:
            dcols = (g2 @ wmat.T).reshape(out_h, out_w, kh, kw, cin)
            grad_padded = np.zeros(padded.shape, dtype=np.float64)
            row_end = stride * (out_h - 1) + 1
            col_end = stride * (out_w - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    grad_padded[i:i + row_end:stride, j:j + col_end:stride, :] += dcols[:, :, i, j, :]
            grad_x = grad_padded[p:p + height, p:p + width, :]
        grad_w = (cols.T @ g2).reshape(weight.shape) if weight.requires_grad else None
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(g2.sum(axis=0) if bias.requires_grad else None)
        return tuple(grads)
    return record_op("conv2d", inputs, out, back)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def bce_loss(p, y) -> Tensor:
    """
    Mean binary cross-entropy of probabilities p against 0/1 targets y,
    with p clamped to [1e-7, 1 - 1e-7].
    """
    p = as_tensor(p)
    target = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=np.float64)
    if p.shape != target.shape:
        raise InvalidArgumentError(f"bce_loss shape mismatch: {p.shape} vs {target.shape}")
    clamped = np.clip(p.data, BCE_EPS, 1.0 - BCE_EPS)
    terms = -(target * np.log(clamped) + (1.0 - target) * np.log(1.0 - clamped))
    count = p.size
    out = exact_sum(terms) / count
    inside = (p.data >= BCE_EPS) & (p.data <= 1.0 - BCE_EPS)

    def back(g):
        dp = (-target / clamped + (1.0 - target) / (1.0 - clamped)) / count
        return (g * dp * inside,)
    return record_op("bce_loss", (p,), out, back)


def smooth_l1(pred, target, beta: float = 1.0, reduction: str = "sum") -> Tensor:
    """Huber-style loss: 0.5·d²/β for |d| < β, |d| − 0.5β otherwise."""
    pred = as_tensor(pred)
    goal = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != goal.shape:
        raise InvalidArgumentError(f"smooth_l1 shape mismatch: {pred.shape} vs {goal.shape}")
    if reduction not in ("sum", "mean"):
        raise InvalidArgumentError(f"unknown reduction {reduction!r}")
    diff = pred.data - goal
    small = np.abs(diff) < beta
    terms = np.where(small, 0.5 * diff * diff / beta, np.abs(diff) - 0.5 * beta)
    scale = 1.0 if reduction == "sum" else 1.0 / pred.size
    out = exact_sum(terms) * scale

    def back(g):
        return (g * scale * np.where(small, diff / beta, np.sign(diff)),)
    return record_op("smooth_l1", (pred,), out, back)


def softmax_cross_entropy(logits, labels: Sequence[int]) -> Tensor:
    """Mean over rows of −log softmax(logits)[label]."""
    logits = as_tensor(logits)
    idx = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or idx.shape != (logits.shape[0],):
        raise InvalidArgumentError(f"cross-entropy needs (N,K) logits and N labels, got {logits.shape}, {idx.shape}")
    rows = np.arange(logits.shape[0])
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    total = e.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    count = logits.shape[0]
    out = -exact_sum(log_probs[rows, idx]) / count

    def back(g):
        grad = e / total
        grad[rows, idx] -= 1.0
        return (g * grad / count,)
    return record_op("softmax_cross_entropy", (logits,), out, back)


# ---------------------------------------------------------------------------
# Alignment and RoI primitives
# ---------------------------------------------------------------------------

def gradient_reversal(a) -> Tensor:
    """Identity forward (same buffer); backward multiplies the upstream gradient by −1."""
    a = as_tensor(a)
    return record_op("gradient_reversal", (a,), a.data, lambda g: (-g,))


def bilinear_sampling_matrix(box: Tuple[float, float, float, float], size: int, stride: int,
                             feat_h: int, feat_w: int) -> np.ndarray:
    """
    (size², feat_h·feat_w) matrix of bilinear weights sampling `box`
    (image pixels) at size×size bin centres on a feature map of the given
    stride. Sample coordinates are clamped to the feature extent.
    """
    x1, y1, x2, y2 = (c / stride for c in box)
    bin_w = (x2 - x1) / size
    bin_h = (y2 - y1) / size
    steps = np.arange(size) + 0.5
    u = np.clip(x1 + steps * bin_w - 0.5, 0.0, feat_w - 1.0)
    v = np.clip(y1 + steps * bin_h - 0.5, 0.0, feat_h - 1.0)
    c0 = np.floor(u).astype(np.int64)
    r0 = np.floor(v).astype(np.int64)
    c1 = np.minimum(c0 + 1, feat_w - 1)
    r1 = np.minimum(r0 + 1, feat_h - 1)
    ax = u - c0
    ay = v - r0

    matrix = np.zeros((size * size, feat_h * feat_w), dtype=np.float64)
    rows = np.arange(size * size)
    ri = np.repeat(np.arange(size), size)
    cj = np.tile(np.arange(size), size)
    for r_idx, wy in ((r0, 1.0 - ay), (r1, ay)):
        for c_idx, wx in ((c0, 1.0 - ax), (c1, ax)):
            np.add.at(matrix, (rows, r_idx[ri] * feat_w + c_idx[cj]), wy[ri] * wx[cj])
    return matrix


def crop_resize(feature, box: Tuple[float, float, float, float], size: int, stride: int) -> Tensor:
    """
    Bilinear crop-resize of an H×W×C feature map to size×size×C.

    Raises:
        EmptyBoxError: zero-area box
    """
    feature = as_tensor(feature)
    if feature.ndim != 3:
        raise InvalidArgumentError(f"crop_resize needs H×W×C, got {feature.shape}")
    if not (box[0] < box[2] and box[1] < box[3]):
        raise EmptyBoxError(f"crop box {tuple(box)} has zero area")
    feat_h, feat_w, channels = feature.shape
    matrix = bilinear_sampling_matrix(box, size, stride, feat_h, feat_w)
    flat = feature.data.reshape(feat_h * feat_w, channels)
    out = (matrix @ flat).reshape(size, size, channels)

    def back(g):
        return ((matrix.T @ g.reshape(size * size, channels)).reshape(feature.shape),)
    return record_op("crop_resize", (feature,), out, back)


def crop_resize_batch(feature, boxes: np.ndarray, size: int, stride: int) -> Tensor:
    """
    crop_resize over N boxes in one recorded op: output N×size×size×C.

    Raises:
        EmptyBoxError: any zero-area box
    """
    feature = as_tensor(feature)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if feature.ndim != 3:
        raise InvalidArgumentError(f"crop_resize_batch needs H×W×C, got {feature.shape}")
    if boxes.shape[0] == 0:
        raise InvalidArgumentError("crop_resize_batch needs at least one box")
    empty = ~((boxes[:, 0] < boxes[:, 2]) & (boxes[:, 1] < boxes[:, 3]))
    if empty.any():
        raise EmptyBoxError(f"crop box {tuple(boxes[np.argmax(empty)])} has zero area")
    feat_h, feat_w, channels = feature.shape
    matrix = np.vstack([bilinear_sampling_matrix(tuple(b), size, stride, feat_h, feat_w) for b in boxes])
    flat = feature.data.reshape(feat_h * feat_w, channels)
    count = boxes.shape[0]
    out = (matrix @ flat).reshape(count, size, size, channels)

    def back(g):
        return ((matrix.T @ g.reshape(count * size * size, channels)).reshape(feature.shape),)
    return record_op("crop_resize_batch", (feature,), out, back)


# Operator sugar on Tensor
Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
Tensor.__neg__ = lambda self: neg(self)
