"""Layer primitives with hand-written backward passes.

Tensors are NCHW.  Each ``*_forward`` returns ``(out, cache)`` and the
matching ``*_backward`` takes ``(dout, cache)`` and returns the input gradient
followed by any parameter gradients.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv3x3_forward(x, w, b=None):
    """3x3 convolution, stride 1, zero padding 1 (output keeps the spatial size)."""
    N, C, H, W = x.shape
    F = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # N, C, H, W, 3, 3
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(N * H * W, C * 9)
    out = cols @ w.reshape(F, C * 9).T
    if b is not None:
        out += b
    out = out.reshape(N, H, W, F).transpose(0, 3, 1, 2)
    return out, (x.shape, cols, w, b is not None)


def conv3x3_backward(dout, cache):
    (N, C, H, W), cols, w, _ = cache
    F = w.shape[0]
    d2 = dout.transpose(0, 2, 3, 1).reshape(N * H * W, F)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(F, C * 9)).reshape(N, H, W, C, 9)
    dcols = np.ascontiguousarray(dcols.transpose(4, 0, 1, 2, 3))
    # col2im in NHWC, single transpose at the end
    dxp = np.zeros((N, H + 2, W + 2, C), dtype=dout.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, i : i + H, j : j + W, :] += dcols[3 * i + j]
    return dxp[:, 1:-1, 1:-1, :].transpose(0, 3, 1, 2), dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training, momentum=0.99, eps=1e-3):
    """Batch normalisation over every axis but the channel axis (axis 1).

    In training mode the running statistics are updated in place.
    """
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv.reshape(shape)
    out = gamma.reshape(shape) * xhat + beta.reshape(shape)
    return out, (xhat, inv, gamma, axes, shape, training)


def batchnorm_backward(dout, cache):
    xhat, inv, gamma, axes, shape, training = cache
    dgamma = np.sum(dout * xhat, axis=axes)
    dbeta = np.sum(dout, axis=axes)
    dxhat = dout * gamma.reshape(shape)
    if not training:
        return dxhat * inv.reshape(shape), dgamma, dbeta
    m = dout.size / dout.shape[1]
    dx = (inv.reshape(shape) / m) * (
        m * dxhat
        - np.sum(dxhat, axis=axes).reshape(shape)
        - xhat * np.sum(dxhat * xhat, axis=axes).reshape(shape)
    )
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def maxpool2_forward(x):
    N, C, H, W = x.shape
    r = x.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)
    idx = np.argmax(r, axis=-1)
    out = np.take_along_axis(r, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx)


def maxpool2_backward(dout, cache):
    (N, C, H, W), idx = cache
    r = np.zeros((N, C, H // 2, W // 2, 4), dtype=dout.dtype)
    np.put_along_axis(r, idx[..., None], dout[..., None], axis=-1)
    return r.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H, W)


def dropout_forward(x, rate, rng):
    """Inverted dropout; ``rng=None`` or ``rate=0`` disables it."""
    if rng is None or rate <= 0:
        return x, None
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.dtype) / keep
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def global_max_forward(x):
    N, C, H, W = x.shape
    flat = x.reshape(N, C, H * W)
    idx = np.argmax(flat, axis=-1)
    return np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0], (x.shape, idx)


def global_max_backward(dout, cache):
    (N, C, H, W), idx = cache
    flat = np.zeros((N, C, H * W), dtype=dout.dtype)
    np.put_along_axis(flat, idx[..., None], dout[..., None], axis=-1)
    return flat.reshape(N, C, H, W)


def global_avg_forward(x):
    return x.mean(axis=(2, 3)), x.shape


def global_avg_backward(dout, shape):
    N, C, H, W = shape
    return np.broadcast_to(dout[:, :, None, None] / (H * W), shape).copy()


def dense_forward(x, w, b=None):
    out = x @ w
    if b is not None:
        out = out + b
    return out, (x, w, b is not None)


def dense_backward(dout, cache):
    x, w, _ = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)
