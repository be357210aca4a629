"""Forward and backward passes for the primitive layers.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``.  Convolutions use an im2col lowering so the heavy
lifting is a single BLAS matmul per call.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _im2col(x, kernel, stride, padding):
    """Receptive fields as columns, laid out (c, kh, kw) x (n, ho, wo).

    Filled one kernel offset at a time: k*k strided slab copies are much
    cheaper than transposing a 6-d window view.
    """
    n, c, h, w = x.shape
    xt = x.transpose(1, 0, 2, 3)
    if padding:
        xt = np.pad(xt, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kernel) // stride + 1
    wo = (w + 2 * padding - kernel) // stride + 1
    cols = np.empty((c, kernel, kernel, n, ho, wo), dtype=x.dtype)
    for i in range(kernel):
        for j in range(kernel):
            cols[:, i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(c * kernel * kernel, n * ho * wo), ho, wo


def _col2im(dcols_t, x_shape, kernel, stride, padding, ho, wo):
    """Scatter-add column gradients back onto the (padded) input grid.

    ``dcols_t`` is laid out (c, kh, kw, n, ho, wo) so every slice added below
    is contiguous in its two trailing axes.
    """
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    d = dcols_t.reshape(c, kernel, kernel, n, ho, wo)
    dx = np.zeros((c, n, hp, wp), dtype=dcols_t.dtype)
    for i in range(kernel):
        for j in range(kernel):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += d[:, i, j]
    dx = dx[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(dx.transpose(1, 0, 2, 3))


def conv2d_forward(x, weight, bias, stride=1, padding=0):
    f, c, k, _ = weight.shape
    if x.ndim != 4 or x.shape[1] != c:
        raise ValueError(f"conv2d expects input with {c} channels, got shape {x.shape}")
    cols, ho, wo = _im2col(x, k, stride, padding)
    out = weight.reshape(f, -1) @ cols
    if bias is not None:
        out += bias[:, None]
    out = out.reshape(f, x.shape[0], ho, wo).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), (x.shape, cols, weight, stride, padding, ho, wo, bias is not None)


def conv2d_backward(dout, cache, param_grads=True):
    x_shape, cols, weight, stride, padding, ho, wo, has_bias = cache
    f, c, k, _ = weight.shape
    d2 = dout.transpose(1, 0, 2, 3).reshape(f, -1)
    grads = {}
    if param_grads:
        grads["weight"] = (d2 @ cols.T).reshape(weight.shape)
        if has_bias:
            grads["bias"] = d2.sum(axis=1)
    dcols_t = weight.reshape(f, -1).T @ d2
    dx = _col2im(dcols_t, x_shape, k, stride, padding, ho, wo)
    return dx, grads


def fc_forward(x, weight, bias):
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"fc expects {weight.shape[1]} input features, got shape {x.shape}")
    out = x @ weight.T
    if bias is not None:
        out += bias
    return out, (x, weight, bias is not None)


def fc_backward(dout, cache, param_grads=True):
    x, weight, has_bias = cache
    grads = {}
    if param_grads:
        grads["weight"] = dout.T @ x
        if has_bias:
            grads["bias"] = dout.sum(axis=0)
    return dout @ weight, grads


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def maxpool_forward(x, kernel=2, stride=2):
    n, c, h, w = x.shape
    if kernel == stride and h % kernel == 0 and w % kernel == 0:
        ho, wo = h // kernel, w // kernel
        blocks = x.reshape(n, c, ho, kernel, wo, kernel).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(n, c, ho, wo, kernel * kernel)
    else:
        blocks = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
        ho, wo = blocks.shape[2], blocks.shape[3]
        blocks = blocks.reshape(n, c, ho, wo, kernel * kernel)
    # first maximal element in window order wins ties
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg, kernel, stride, ho, wo)


def maxpool_backward(dout, cache):
    x_shape, arg, kernel, stride, ho, wo = cache
    n, c, h, w = x_shape
    if kernel == stride and h == ho * kernel and w == wo * kernel:
        blocks = np.zeros((n, c, ho, wo, kernel * kernel), dtype=dout.dtype)
        np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
        blocks = blocks.reshape(n, c, ho, wo, kernel, kernel).transpose(0, 1, 2, 4, 3, 5)
        return blocks.reshape(x_shape)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    di, dj = np.divmod(arg, kernel)
    rows = np.arange(ho)[None, None, :, None] * stride + di
    cols = np.arange(wo)[None, None, None, :] * stride + dj
    nn_ = np.arange(n)[:, None, None, None]
    cc = np.arange(c)[None, :, None, None]
    np.add.at(dx, (nn_, cc, rows, cols), dout)
    return dx


def avgpool_forward(x, kernel=0):
    """Average pooling; ``kernel=0`` pools the whole spatial extent."""
    n, c, h, w = x.shape
    if kernel == 0 or (kernel == h and kernel == w):
        return x.mean(axis=(2, 3), keepdims=True), (x.shape, 0)
    if h % kernel or w % kernel:
        raise ValueError(f"avgpool kernel {kernel} does not tile {h}x{w}")
    out = x.reshape(n, c, h // kernel, kernel, w // kernel, kernel).mean(axis=(3, 5))
    return out, (x.shape, kernel)


def avgpool_backward(dout, cache):
    x_shape, kernel = cache
    n, c, h, w = x_shape
    if kernel == 0:
        return np.broadcast_to(dout / (h * w), x_shape).copy()
    d = dout / (kernel * kernel)
    return np.repeat(np.repeat(d, kernel, axis=2), kernel, axis=3)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train):
    """Batch norm over every axis but channels (axis 1).

    Returns ``(out, cache, new_running_mean, new_running_var)``; running
    statistics are only advanced in train mode.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    shape = [1] * x.ndim
    shape[1] = x.shape[1]
    if train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = x.size // x.shape[1]
        unbiased = var * m / max(m - 1, 1)
        new_mean = (1 - BN_MOMENTUM) * running_mean + BN_MOMENTUM * mean
        new_var = (1 - BN_MOMENTUM) * running_var + BN_MOMENTUM * unbiased
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = xhat * gamma.reshape(shape) + beta.reshape(shape)
    return out, (xhat, inv_std, gamma, axes, shape, train), new_mean, new_var


def batchnorm_backward(dout, cache, param_grads=True):
    xhat, inv_std, gamma, axes, shape, train = cache
    grads = {}
    dgamma = (dout * xhat).sum(axis=axes)
    if param_grads:
        grads["gamma"] = dgamma
        grads["beta"] = dout.sum(axis=axes)
    dxhat = dout * gamma.reshape(shape)
    if not train:
        return dxhat * inv_std.reshape(shape), grads
    m = dout.size // dout.shape[1]
    dbeta = dout.sum(axis=axes) if not param_grads else grads["beta"]
    # dxhat summed terms rewritten through dgamma/dbeta
    dx = (inv_std.reshape(shape) / m) * (
        m * dxhat
        - (dbeta * gamma).reshape(shape)
        - xhat * (dgamma * gamma).reshape(shape)
    )
    return dx, grads
