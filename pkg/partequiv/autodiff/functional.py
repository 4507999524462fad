"""Differentiable nonlinearities and network ops on Tensors."""
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, log_softmax, softmax

from partequiv.autodiff.tensor import Tensor, as_tensor
from partequiv.errors import get_error_message
from partequiv.utils.error_handling import ShapeError


def _require_rank(op: str, x: Tensor, rank: int):
    if x.ndim != rank:
        raise ShapeError(get_error_message('BAD_RANK', op=op, expected=rank, shape=x.shape))


# *** elementwise ***
def sin(x: Tensor) -> Tensor:
    x = as_tensor(x)
    a = x.data
    return Tensor.from_op(np.sin(a), (x,), lambda g: (g * np.cos(a),), 'sin')


def cos(x: Tensor) -> Tensor:
    x = as_tensor(x)
    a = x.data
    return Tensor.from_op(np.cos(a), (x,), lambda g: (-g * np.sin(a),), 'cos')


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * out,), 'exp')


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    a = x.data
    return Tensor.from_op(np.log(a), (x,), lambda g: (g / a,), 'log')


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = expit(x.data)
    return Tensor.from_op(s, (x,), lambda g: (g * s * (1 - s),), 'sigmoid')


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), 'relu')


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return Tensor.from_op(x.data * scale, (x,), lambda g: (g * scale,), 'leaky_relu')


def swish(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    x = as_tensor(x)
    a = x.data
    s = expit(a)
    return Tensor.from_op(a * s, (x,), lambda g: (g * (s + a * s * (1 - s)),), 'swish')


# *** convolution and pooling ***
def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """
    Cross-correlation of a B x C_in x H x W input with a C_out x C_in x k x k kernel.

    Args:
        x: Input tensor
        w: Kernel tensor (square kernels only)
        stride: Spatial stride
        padding: Zero padding added on every side

    Returns:
        Tensor of shape B x C_out x H_out x W_out
    """
    x, w = as_tensor(x), as_tensor(w)
    _require_rank('conv2d', x, 4)
    _require_rank('conv2d', w, 4)
    if x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise ShapeError(get_error_message('SHAPE_MISMATCH', op='conv2d', left=x.shape, right=w.shape))
    k = w.shape[2]
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    if xp.shape[2] < k or xp.shape[3] < k:
        raise ShapeError(get_error_message('SHAPE_MISMATCH', op='conv2d', left=x.shape, right=w.shape))

    windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    h_out, w_out = windows.shape[2], windows.shape[3]
    out = np.tensordot(windows, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    kernel = w.data

    def backward(g):
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        gxp = np.zeros(xp.shape, dtype=np.result_type(g, kernel))
        for i in range(k):
            for j in range(k):
                contribution = np.tensordot(g, kernel[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
                gxp[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += contribution
        if padding:
            gxp = gxp[:, :, padding:-padding, padding:-padding]
        return gxp, gw

    return Tensor.from_op(np.ascontiguousarray(out), (x, w), backward, 'conv2d')


def maxpool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling over the last two axes; trailing rows/cols are dropped."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(get_error_message('BAD_RANK', op='maxpool2d', expected='>=2', shape=x.shape))
    h, w = x.shape[-2] // size, x.shape[-1] // size
    lead = x.shape[:-2]
    cropped = x.data[..., :h * size, :w * size]
    view = cropped.reshape(lead + (h, size, w, size))
    out = view.max(axis=(-3, -1))
    mask = view == np.expand_dims(out, (-3, -1))
    counts = mask.sum(axis=(-3, -1), keepdims=True)
    full_shape = x.shape

    def backward(g):
        spread = mask * (np.expand_dims(g, (-3, -1)) / counts)
        full = np.zeros(full_shape, dtype=spread.dtype)
        full[..., :h * size, :w * size] = spread.reshape(lead + (h * size, w * size))
        return (full,)

    return Tensor.from_op(out, (x,), backward, 'maxpool2d')


def max_reduce(x: Tensor, axis) -> Tensor:
    """Max over the given axes; ties share the gradient equally."""
    x = as_tensor(x)
    out = x.data.max(axis=axis, keepdims=True)
    mask = x.data == out
    counts = mask.sum(axis=axis, keepdims=True)

    def backward(g):
        return (mask * (np.expand_dims(g, axis) / counts),)

    return Tensor.from_op(np.squeeze(out, axis=axis), (x,), backward, 'max_reduce')


# *** normalisation and losses ***
def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
              training: bool, momentum: float = 0.1, eps: float = 1e-5, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Per-channel batch normalisation for inputs shaped B x C x ...

    Statistics pool over every axis except the channel axis. In training mode
    the running statistics are updated in place with the unbiased variance.
    `mask`, broadcastable to x, restricts the training statistics to the
    positions where it is nonzero; masked-out positions are still normalised
    with those statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim < 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(get_error_message('SHAPE_MISMATCH', op='batchnorm', left=x.shape, right=gamma.shape))
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    weight = 1.0 if mask is None else np.broadcast_to(np.asarray(mask, dtype=x.dtype), x.shape)
    count = x.data.size // x.shape[1] if mask is None else float(weight.sum() / x.shape[1])

    if training:
        mean = (x.data * weight).sum(axis=axes) / count
        var = (((x.data - mean.reshape(bshape)) ** 2) * weight).sum(axis=axes) / count
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * count / max(count - 1, 1)
    else:
        mean, var = running_mean, running_var

    inv_std = (1.0 / np.sqrt(var + eps)).reshape(bshape)
    xhat = (x.data - mean.reshape(bshape)) * inv_std
    g_w = gamma.data.reshape(bshape)
    out = xhat * g_w + beta.data.reshape(bshape)

    def backward(g):
        d_gamma = (g * xhat).sum(axis=axes)
        d_beta = g.sum(axis=axes)
        dxhat = g * g_w
        if training:
            through_stats = (dxhat.sum(axis=axes, keepdims=True)
                             + xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)) / count
            dx = inv_std * (dxhat - through_stats * weight)
        else:
            dx = dxhat * inv_std
        return dx, d_gamma, d_beta

    return Tensor.from_op(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, 'batchnorm')


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of B x K logits against integer labels."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    _require_rank('softmax_cross_entropy', logits, 2)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(get_error_message('SHAPE_MISMATCH', op='softmax_cross_entropy',
                                           left=logits.shape, right=labels.shape))
    batch = logits.shape[0]
    log_probs = log_softmax(logits.data, axis=1)
    loss = -log_probs[np.arange(batch), labels].mean()
    probs = softmax(logits.data, axis=1)

    def backward(g):
        grad = probs.copy()
        grad[np.arange(batch), labels] -= 1.0
        return (g * grad / batch,)

    return Tensor.from_op(np.asarray(loss, dtype=logits.dtype), (logits,), backward, 'softmax_cross_entropy')


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward the hard values, backpropagate through the soft ones."""
    return (as_tensor(hard) - soft).detach() + soft
