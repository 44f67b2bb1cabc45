"""Differentiable layer primitives in NHWC layout.

Kernels are stored as ``(K, K, C_in, C_out)`` for ``conv2d``.  ``deconv2d``
reuses that layout with the roles swapped, ``(K, K, C_out, C_in)``, so that
``deconv2d(y, w)`` is exactly the adjoint of ``conv2d(x, w)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import Tensor, make_node, reshape

PADDINGS = ("same", "valid")


def _check_padding(padding: str) -> None:
    if padding not in PADDINGS:
        raise ValueError(f"padding must be one of {PADDINGS}, got {padding!r}")


def _check_stride(stride: int) -> None:
    if not isinstance(stride, (int, np.integer)) or stride <= 0:
        raise ValueError(f"stride must be a positive integer, got {stride!r}")


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-size // stride)
    return (size - kernel) // stride + 1


def deconv_output_size(size: int, kernel: int, stride: int, padding: str, output_padding: int = 0) -> int:
    if padding == "same":
        return size * stride + output_padding
    return (size - 1) * stride + kernel + output_padding


def _conv_pads(size: int, kernel: int, stride: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _deconv_pads(out_size: int, in_size: int, kernel: int, stride: int, padding: str) -> tuple[int, int]:
    # pads of the forward convolution (input out_size -> output in_size); negative means crop
    total = (in_size - 1) * stride + kernel - out_size
    if padding == "valid":
        return 0, total
    before = max(total, 0) // 2
    return before, total - before


def _pad_or_crop(x: np.ndarray, pads, value=0.0) -> np.ndarray:
    (pt, pb), (pl, pr) = pads
    h, w = x.shape[1], x.shape[2]
    x = x[:, max(-pt, 0):h - max(-pb, 0), max(-pl, 0):w - max(-pr, 0), :]
    width = ((0, 0), (max(pt, 0), max(pb, 0)), (max(pl, 0), max(pr, 0)), (0, 0))
    if any(a or b for a, b in width):
        x = np.pad(x, width, constant_values=value)
    return x


def _unpad(xp: np.ndarray, pads, in_shape) -> np.ndarray:
    """Adjoint of ``_pad_or_crop``: drop padding, restore cropped rows as zeros."""
    (pt, pb), (pl, pr) = pads
    core = xp[:, max(pt, 0):xp.shape[1] - max(pb, 0), max(pl, 0):xp.shape[2] - max(pr, 0), :]
    if pt >= 0 and pb >= 0 and pl >= 0 and pr >= 0:
        return core
    out = np.zeros(in_shape, dtype=xp.dtype)
    h, w = in_shape[1], in_shape[2]
    out[:, max(-pt, 0):h - max(-pb, 0), max(-pl, 0):w - max(-pr, 0), :] = core
    return out


def _windows(xp: np.ndarray, kernel: int, stride: int, out_hw) -> np.ndarray:
    ho, wo = out_hw
    win = sliding_window_view(xp, (kernel, kernel), axis=(1, 2))
    return win[:, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, pads) -> np.ndarray:
    k = w.shape[0]
    xp = _pad_or_crop(x, pads)
    ho = (xp.shape[1] - k) // stride + 1
    wo = (xp.shape[2] - k) // stride + 1
    win = _windows(xp, k, stride, (ho, wo))  # N, Ho, Wo, C, K, K
    return np.tensordot(win, w.transpose(2, 0, 1, 3), axes=([3, 4, 5], [0, 1, 2]))


def _conv_input_grad(g: np.ndarray, w: np.ndarray, stride: int, pads, in_shape) -> np.ndarray:
    k = w.shape[0]
    (pt, pb), (pl, pr) = pads
    n, h, wd, c = in_shape
    hp = h + pt + pb
    wp = wd + pl + pr
    ho, wo = g.shape[1], g.shape[2]
    dxp = np.zeros((n, hp, wp, c), dtype=g.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride, :] += g @ w[i, j].T
    return _unpad(dxp, pads, in_shape)


def _conv_kernel_grad(x: np.ndarray, g: np.ndarray, k: int, stride: int, pads) -> np.ndarray:
    xp = _pad_or_crop(x, pads)
    win = _windows(xp, k, stride, g.shape[1:3])
    dw = np.tensordot(win, g, axes=([0, 1, 2], [0, 1, 2]))  # C, K, K, F
    return dw.transpose(1, 2, 0, 3)


def _check_kernel(x: Tensor, kernel: Tensor, in_axis: int, what: str) -> None:
    if x.ndim != 4:
        raise ValueError(f"{what} expects NHWC input, got shape {x.shape}")
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise ValueError(f"{what} expects a (K, K, ., .) kernel, got shape {kernel.shape}")
    if x.shape[3] != kernel.shape[in_axis]:
        raise ValueError(
            f"{what}: input channels {x.shape[3]} (input shape {x.shape}) do not match "
            f"kernel shape {kernel.shape}"
        )


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: str = "same", bias: Tensor | None = None) -> Tensor:
    """2-D cross-correlation with TensorFlow-style ``same``/``valid`` padding."""
    _check_stride(stride)
    _check_padding(padding)
    _check_kernel(x, kernel, 2, "conv2d")
    k = kernel.shape[0]
    h, w = x.shape[1:3]
    if padding == "valid" and (h < k or w < k):
        raise ValueError(f"conv2d: kernel {k} larger than valid input {x.shape}")
    pads = (_conv_pads(h, k, stride, padding), _conv_pads(w, k, stride, padding))
    out = _conv_forward(x.data, kernel.data, stride, pads)
    if bias is not None:
        out = out + bias.data

    def bw(g):
        dx = _conv_input_grad(g, kernel.data, stride, pads, x.shape) if x.requires_grad else None
        dw = _conv_kernel_grad(x.data, g, k, stride, pads) if kernel.requires_grad else None
        db = g.sum(axis=(0, 1, 2)) if bias is not None else None
        return dx, dw, db

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return make_node(out, parents, bw, "conv2d")


def deconv2d(
    y: Tensor,
    kernel: Tensor,
    stride: int = 1,
    padding: str = "same",
    output_padding: int = 0,
    bias: Tensor | None = None,
) -> Tensor:
    """Transposed convolution: the adjoint of ``conv2d`` used as a forward map.

    ``same`` padding maps H to H*S + output_padding, ``valid`` maps H to
    (H-1)*S + K + output_padding.
    """
    _check_stride(stride)
    _check_padding(padding)
    _check_kernel(y, kernel, 3, "deconv2d")
    if not 0 <= output_padding < stride:
        raise ValueError(f"output_padding must satisfy 0 <= output_padding < stride, got {output_padding}")
    k = kernel.shape[0]
    n, hy, wy, _ = y.shape
    ho = deconv_output_size(hy, k, stride, padding, output_padding)
    wo = deconv_output_size(wy, k, stride, padding, output_padding)
    pads = (_deconv_pads(ho, hy, k, stride, padding), _deconv_pads(wo, wy, k, stride, padding))
    out_shape = (n, ho, wo, kernel.shape[2])
    out = _conv_input_grad(y.data, kernel.data, stride, pads, out_shape)
    if bias is not None:
        out = out + bias.data

    def bw(g):
        dy = _conv_forward(g, kernel.data, stride, pads) if y.requires_grad else None
        dw = _conv_kernel_grad(g, y.data, k, stride, pads) if kernel.requires_grad else None
        db = g.sum(axis=(0, 1, 2)) if bias is not None else None
        return dy, dw, db

    parents = (y, kernel) if bias is None else (y, kernel, bias)
    return make_node(out, parents, bw, "deconv2d")


class RunningStats:
    """Exponential moving averages of per-channel batch statistics."""

    def __init__(self, channels: int, momentum: float = 0.9, dtype=np.float32):
        self.momentum = momentum
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)

    def update(self, mean: np.ndarray, var: np.ndarray) -> None:
        self.mean *= self.momentum
        self.mean += (1 - self.momentum) * mean
        self.var *= self.momentum
        self.var += (1 - self.momentum) * var


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mode: str = "train",
    running_stats: RunningStats | None = None,
    epsilon: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation over every axis but the last."""
    axes = tuple(range(x.ndim - 1))
    if mode == "train":
        if x.shape[0] < 2:
            raise ValueError("batch_norm in train mode needs a batch of at least 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running_stats is not None:
            count = x.data.size // x.shape[-1]
            running_stats.update(mu, var * count / max(count - 1, 1))
    elif mode == "eval":
        if running_stats is None:
            raise ValueError("batch_norm in eval mode needs running statistics")
        mu, var = running_stats.mean, running_stats.var
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    inv = (1.0 / np.sqrt(var + epsilon)).astype(x.dtype)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data
        if mode == "eval":
            return dxhat * inv, dgamma, dbeta
        m = x.data.size // x.shape[-1]
        dx = (inv / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        return dx, dgamma, dbeta

    return make_node(out.astype(x.dtype, copy=False), (x, gamma, beta), bw, "batch_norm")


def max_pool(x: Tensor, kernel: int = 2, stride: int = 2, padding: str = "valid") -> Tensor:
    """Windowed maximum; ties send the gradient to the first element in scan order."""
    _check_stride(stride)
    _check_padding(padding)
    if x.ndim != 4:
        raise ValueError(f"max_pool expects NHWC input, got shape {x.shape}")
    h, w = x.shape[1:3]
    if padding == "valid" and (h < kernel or w < kernel):
        raise ValueError(f"max_pool: kernel {kernel} larger than spatial dims of {x.shape}")
    pads = (_conv_pads(h, kernel, stride, padding), _conv_pads(w, kernel, stride, padding))
    xp = _pad_or_crop(x.data, pads, value=-np.inf)
    ho = (xp.shape[1] - kernel) // stride + 1
    wo = (xp.shape[2] - kernel) // stride + 1
    win = _windows(xp, kernel, stride, (ho, wo)).reshape(x.shape[0], ho, wo, x.shape[3], kernel * kernel)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for idx in range(kernel * kernel):
            i, j = divmod(idx, kernel)
            dxp[:, i : i + (ho - 1) * stride + 1 : stride, j : j + (wo - 1) * stride + 1 : stride, :] += np.where(
                arg == idx, g, 0
            )
        return (_unpad(dxp, pads, x.shape),)

    return make_node(np.ascontiguousarray(out), (x,), bw, "max_pool")


def fully_connected(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map of the flattened input: ``flatten(x) @ W + b``."""
    flat = x.data.reshape(x.shape[0], -1)
    if flat.shape[1] != weights.shape[0]:
        raise ValueError(
            f"fully_connected: flattened input length {flat.shape[1]} (input shape {x.shape}) "
            f"does not match weight shape {weights.shape}"
        )
    out = flat @ weights.data + bias.data

    def bw(g):
        return (g @ weights.data.T).reshape(x.shape), flat.T @ g, g.sum(axis=0)

    return make_node(out, (x, weights, bias), bw, "fully_connected")


def log_softmax(logits: Tensor) -> Tensor:
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    probs = np.exp(out)

    def bw(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return make_node(out, (logits,), bw, "log_softmax")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    lsm = log_softmax(logits)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(n), labels] = -1.0 / n
    out = np.asarray((lsm.data * onehot).sum(), dtype=logits.dtype)
    return make_node(out, (lsm,), lambda g: (g * onehot,), "cross_entropy")


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))
