"""Dense conv / fully-connected kernels with their backward passes.

Feature maps are NCHW. Single samples (CHW) are accepted by the public
forward functions and returned without the batch axis.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def out_size(size, k, stride, pad=0):
    return (size + 2 * pad - k) // stride + 1


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def im2col(x, k, stride, pad=0):
    """(B, C, H, W) -> (B, Ho, Wo, C*k*k) patch matrix."""
    xp = _pad(x, pad)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # win: (B, C, Ho, Wo, k, k)
    B, C, Ho, Wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(B, Ho, Wo, C * k * k)


def col2im(cols, x_shape, k, stride, pad=0):
    """Adjoint of im2col: scatter-add patch gradients back onto the input."""
    B, C, H, W = x_shape
    Hp, Wp = H + 2 * pad, W + 2 * pad
    Ho, Wo = out_size(H, k, stride, pad), out_size(W, k, stride, pad)
    cols = cols.reshape(B, Ho, Wo, C, k, k)
    dx = np.zeros((B, C, Hp, Wp), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            dx[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += (
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2))
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return dx


def conv2d(x, w, b=None, stride=1, pad=0):
    """Batched convolution. x: (B, C_in, H, W); w: (C_o, C_in, k, k)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects a 4-d batch, got shape {x.shape}")
    C_o, C_in, k, k2 = w.shape
    if k != k2:
        raise ShapeError(f"non-square kernel {w.shape}")
    if x.shape[1] != C_in:
        raise ShapeError(f"input has {x.shape[1]} channels, layer expects {C_in}")
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if x.shape[2] + 2 * pad < k or x.shape[3] + 2 * pad < k:
        raise ShapeError(f"input {x.shape[2:]} smaller than kernel {k}")
    cols = im2col(x, k, stride, pad)
    y = cols @ w.reshape(C_o, -1).T
    if b is not None:
        y = y + b
    return y.transpose(0, 3, 1, 2)


def conv2d_backward(dy, x, w, stride=1, pad=0):
    """Returns (dx, dw, db) for y = conv2d(x, w, b)."""
    C_o, C_in, k, _ = w.shape
    cols = im2col(x, k, stride, pad)
    dy_r = dy.transpose(0, 2, 3, 1)  # (B, Ho, Wo, C_o)
    dw = np.tensordot(dy_r, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(w.shape)
    db = dy_r.sum(axis=(0, 1, 2))
    dcols = dy_r @ w.reshape(C_o, -1)
    dx = col2im(dcols, x.shape, k, stride, pad)
    return dx, dw, db


def linear(x, w, b=None):
    """x: (B, M); w: (N, M) -> (B, N)."""
    if x.ndim != 2:
        raise ShapeError(f"linear expects a 2-d batch, got shape {x.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input length {x.shape[1]} != weight columns {w.shape[1]}")
    y = x @ w.T
    if b is not None:
        y = y + b
    return y


def linear_backward(dy, x, w):
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def conv2d_forward(x, layer):
    """Convolution for one LayerDescriptor; CHW in, CHW out (or batched)."""
    single = x.ndim == 3
    xb = x[None] if single else x
    if xb.ndim != 4:
        raise ShapeError(f"conv input must be CHW or NCHW, got {x.shape}")
    y = conv2d(xb, layer.weight, layer.bias, layer.stride, layer.pad)
    return y[0] if single else y


def fc_forward(x, layer):
    single = x.ndim == 1
    xb = x[None] if single else x.reshape(x.shape[0], -1)
    y = linear(xb, layer.weight, layer.bias)
    return y[0] if single else y


def relu(x):
    return np.maximum(x, 0)


def log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(z))


def cross_entropy(logits, labels):
    """Mean CE loss and d loss / d logits."""
    lp = log_softmax(logits)
    n = logits.shape[0]
    loss = -lp[np.arange(n), labels].mean()
    g = np.exp(lp)
    g[np.arange(n), labels] -= 1
    return loss, g / n
