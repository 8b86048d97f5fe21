"""Forward/backward kernels for the CNN layers.

Activations are laid out channels-last: ``(batch, time, freq, channels)``.
Convolution kernels are stored ``(out_channels, in_channels, kh, kw)``.
Every forward returns ``(out, cache)``; the matching backward consumes the
cache. All kernels are dtype-preserving so the same code runs in float32 for
training and float64 for gradient checks.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

def _im2col(xp, kh, kw):
    """(B, Hp, Wp, C) padded input -> (B*H*W, kh*kw*C) patch matrix."""
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    bsz, oh, ow, c = win.shape[:4]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(bsz * oh * ow, kh * kw * c)


def _kernel_matrix(w):
    cout = w.shape[0]
    return w.transpose(0, 2, 3, 1).reshape(cout, -1).T


def conv2d_forward(x, w, b, pad):
    """Zero-padded stride-1 cross-correlation.

    x: (B, H, W, Cin); w: (Cout, Cin, kh, kw); b: (Cout,). The caller picks
    ``pad`` so that the output keeps the input's spatial size.
    """
    bsz, h, wd, cin = x.shape
    cout, wcin, kh, kw = w.shape
    if wcin != cin:
        raise ValueError(f"conv input has {cin} channels, kernel expects {wcin}")
    oh, ow = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    if oh <= 0 or ow <= 0:
        raise ValueError("input smaller than kernel")
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = _im2col(xp, kh, kw)
    out = cols @ _kernel_matrix(w)
    out += b
    return out.reshape(bsz, oh, ow, cout), (x.shape, cols, w, pad)


def conv2d_backward(dout, cache, need_dx=True):
    """Input, kernel and bias gradients of :func:`conv2d_forward`, in that order."""
    xshape, cols, w, pad = cache
    bsz, h, wd, cin = xshape
    cout, _, kh, kw = w.shape
    oh, ow = dout.shape[1:3]
    d2 = dout.reshape(-1, cout)

    db = d2.sum(axis=0)
    dw = (cols.T @ d2).T.reshape(cout, kh, kw, cin).transpose(0, 3, 1, 2)

    dx = None
    if need_dx:
        dcols = (d2 @ _kernel_matrix(w).T).reshape(bsz, oh, ow, kh, kw, cin)
        dxp = np.zeros((bsz, h + 2 * pad, wd + 2 * pad, cin), dtype=dout.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + oh, j:j + ow, :] += dcols[:, :, :, i, j, :]
        dx = dxp[:, pad:pad + h, pad:pad + wd, :]
    return dx, np.ascontiguousarray(dw), db


def batchnorm_forward(x, gain, bias, running_mean, running_var, train,
                      momentum=0.9, eps=1e-5):
    """Per-channel batch normalization over (batch, time, freq).

    In train mode the running statistics are updated in place:
    ``running = momentum * running + (1 - momentum) * batch_stat``.
    """
    count = x.size // x.shape[-1]
    if train:
        if count < 2:
            raise ValueError("train-mode batchnorm needs more than one element per channel")
        mean = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x - mean.astype(x.dtype)) * inv_std
    out = xhat * gain + bias
    return out, (xhat, gain, inv_std, train)


def batchnorm_backward(dout, cache):
    xhat, gain, inv_std, train = cache
    dgain = (dout * xhat).sum(axis=(0, 1, 2))
    dbias = dout.sum(axis=(0, 1, 2))
    dxhat = dout * gain
    if not train:
        return dxhat * inv_std, dgain, dbias
    n = dout.size // dout.shape[-1]
    dx = dxhat - dxhat.sum(axis=(0, 1, 2)) / n
    dx -= xhat * ((dxhat * xhat).sum(axis=(0, 1, 2)) / n)
    dx *= inv_std
    return dx, dgain, dbias


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, out > 0


def relu_backward(dout, mask):
    return dout * mask


def maxpool2x2_forward(x):
    """2x2 non-overlapping max over (time, freq); odd trailing rows/cols dropped."""
    bsz, h, wd, c = x.shape
    h2, w2 = h // 2, wd // 2
    win = x[:, :2 * h2, :2 * w2, :].reshape(bsz, h2, 2, w2, 2, c)
    win = win.transpose(0, 1, 3, 5, 2, 4).reshape(bsz, h2, w2, c, 4)
    idx = win.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(win, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, (x.shape, idx)


def maxpool2x2_backward(dout, cache):
    """Route each upstream gradient to the first argmax of its window."""
    shape, idx = cache
    bsz, h, wd, c = shape
    h2, w2 = h // 2, wd // 2
    dwin = np.zeros((bsz, h2, w2, c, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None].astype(np.intp), dout[..., None], axis=-1)
    dwin = dwin.reshape(bsz, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros(shape, dtype=dout.dtype)
    dx[:, :2 * h2, :2 * w2, :] = dwin.reshape(bsz, 2 * h2, 2 * w2, c)
    return dx


def freq_mean_forward(x):
    return x.mean(axis=2), x.shape


def freq_mean_backward(dout, shape):
    return np.broadcast_to(dout[:, :, None, :] / shape[2], shape).copy()


def dense_forward(x, w, b):
    """x: (..., Din); w: (Din, Dout); b: (Dout,)."""
    return x @ w + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    din, dout_dim = w.shape
    x2 = x.reshape(-1, din)
    d2 = dout.reshape(-1, dout_dim)
    return (d2 @ w.T).reshape(x.shape), x2.T @ d2, d2.sum(axis=0)


def sigmoid(z):
    # Split by sign so exp never overflows.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


BCE_CLAMP = 1e-7


def bce_loss(p, y):
    """Mean binary cross-entropy and its gradient w.r.t. the pre-sigmoid logits.

    ``p`` are sigmoid outputs, clamped to ``[1e-7, 1 - 1e-7]`` for the loss.
    The returned gradient is ``(p - y) / p.size``.
    """
    p = np.asarray(p)
    y = np.asarray(y)
    if p.shape != y.shape:
        raise ValueError(f"prediction shape {p.shape} != target shape {y.shape}")
    pc = np.clip(p, BCE_CLAMP, 1 - BCE_CLAMP)
    loss = -np.mean(y * np.log(pc) + (1 - y) * np.log(1 - pc))
    grad = (p - y) / p.size
    return float(loss), grad.astype(p.dtype, copy=False)
