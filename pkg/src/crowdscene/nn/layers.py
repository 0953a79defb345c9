"""Forward and backward kernels for the layers used by the VGG network.

All image tensors are NHWC. Every ``*_forward`` returns ``(out, cache)`` and the
matching ``*_backward`` consumes ``(dout, cache)``.
"""

import numpy as np


def _pad_flat(x):
    """Zero-pad H and W by one and flatten to (B*(H+2)*(W+2), C).

    On the flattened padded grid, the 3x3 neighbour at offset (i, j) of the
    output pixel at row r is row ``r + i*(W+2) + j``, so each kernel tap is one
    GEMM over a contiguous slice with no im2col copy. Output rows at grid
    positions outside the valid HxW window are junk and get cropped.
    """
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    wp = w + 2
    n = b * (h + 2) * wp - 2 * wp - 2
    return xp.reshape(-1, c), n, wp


def _offsets(wp):
    return [(i, j, i * wp + j) for i in range(3) for j in range(3)]


def conv3x3_forward(x, weight, bias):
    """Same-padded stride-1 3x3 convolution; ``weight`` is (3, 3, C_in, C_out)."""
    b, h, w, _ = x.shape
    c_out = weight.shape[-1]
    flat, n, wp = _pad_flat(x)
    out = np.zeros((b * (h + 2) * wp, c_out), dtype=x.dtype)
    for i, j, off in _offsets(wp):
        out[:n] += flat[off:off + n] @ weight[i, j]
    out = out.reshape(b, h + 2, wp, c_out)[:, :h, :w, :] + bias
    return out, x


def conv3x3_backward(dout, x, weight, need_dx=True):
    b, h, w, c_in = x.shape
    c_out = weight.shape[-1]
    flat, n, wp = _pad_flat(x)
    # gradient laid out on the padded output grid, zero at the junk positions
    grid = np.zeros((b, h + 2, wp, c_out), dtype=dout.dtype)
    grid[:, :h, :w, :] = dout
    grid = grid.reshape(-1, c_out)[:n]
    dweight = np.empty_like(weight)
    for i, j, off in _offsets(wp):
        dweight[i, j] = flat[off:off + n].T @ grid
    del flat
    dbias = dout.sum(axis=(0, 1, 2))
    dx = None
    if need_dx:
        dflat = np.zeros((b * (h + 2) * wp, c_in), dtype=dout.dtype)
        for i, j, off in _offsets(wp):
            dflat[off:off + n] += grid @ weight[i, j].T
        dx = dflat.reshape(b, h + 2, wp, c_in)[:, 1:h + 1, 1:w + 1, :]
    return dx, dweight, dbias


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train,
                      momentum=0.99, eps=1e-5):
    """Batch norm over every axis but the last.

    In train mode the batch statistics are used and the running statistics
    returned as the second element are the momentum-updated values; otherwise
    the stored statistics are used and returned unchanged.
    """
    axes = tuple(range(x.ndim - 1))
    if train:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        new_mean = momentum * running_mean + (1.0 - momentum) * mean
        new_var = momentum * running_var + (1.0 - momentum) * var
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    return out, (new_mean, new_var), (xhat, inv_std, gamma, train)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, train = cache
    axes = tuple(range(dout.ndim - 1))
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma
    if not train:
        return dxhat * inv_std, dgamma, dbeta
    m = dout.size // dout.shape[-1]
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=axes)
                          - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def avgpool2_forward(x):
    b, h, w, c = x.shape
    return x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4)), None


def avgpool2_backward(dout, _cache=None):
    d = np.repeat(np.repeat(dout, 2, axis=1), 2, axis=2)
    return d * 0.25


def gap_forward(x):
    return x.mean(axis=(1, 2)), x.shape


def gap_backward(dout, shape):
    b, h, w, c = shape
    return np.broadcast_to(dout[:, None, None, :] / (h * w), shape).copy()


def dropout_forward(x, rate, rng):
    """Inverted dropout. ``rng`` of None or ``rate == 0`` disables it."""
    if rng is None or rate <= 0.0:
        return x, None
    keep = 1.0 - rate
    mask = (rng.random(x.shape, dtype=x.dtype) < keep).astype(x.dtype) / keep
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def dense_forward(x, weight, bias):
    return x @ weight + bias, x


def dense_backward(dout, x, weight):
    return dout @ weight.T, x.T @ dout, dout.sum(axis=0)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
