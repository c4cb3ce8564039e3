"""Forward operations and their hand-written backward passes.

Tensors are plain float64 numpy arrays. Each forward op ``f`` has a matching
``f_backward(dy, *inputs)`` that returns gradients with the shapes of the
inputs. There is no tape: composite layers keep their own caches.

Summation orders are fixed so that results are reproducible bit for bit:

* ``matmul`` and the conv kernels accumulate in ascending index order (see
  ``kernels``); conv forward walks kernel-row, kernel-col, in-channel.
* ``seq_sum`` accumulates left to right along the axis; softmax, layer norm
  statistics, bias gradients and pooling all go through it.
"""

import math

import numpy as np
from scipy.special import erf

from ..errors import GeometryError
from . import kernels

LN_EPS = 1e-5
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def seq_sum(x, axis=-1, keepdims=False):
    """Left-to-right sum along ``axis``; cumsum is a strict sequential scan."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] == 0:
        return np.sum(x, axis=axis, keepdims=keepdims)
    out = np.take(np.cumsum(x, axis=axis), -1, axis=axis)
    if keepdims:
        out = np.expand_dims(out, axis)
    return out


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise GeometryError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    return kernels.matmul(a, b)


def matmul_backward(dy, a, b):
    da = kernels.matmul(dy, np.ascontiguousarray(np.asarray(b).T))
    db = kernels.matmul(np.ascontiguousarray(np.asarray(a).T), dy)
    return da, db


def linear(x, w, b=None):
    """Token-wise affine map ``x @ w + b`` for ``x`` of shape [N, Cin]."""
    y = matmul(x, w)
    if b is not None:
        y = y + b
    return y


def linear_backward(dy, x, w, has_bias=True):
    dx, dw = matmul_backward(dy, x, w)
    db = seq_sum(dy, axis=0) if has_bias else None
    return dx, dw, db


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / seq_sum(e, axis=axis, keepdims=True)


def softmax_backward(dy, y, axis=-1):
    # y is the forward output
    return y * (dy - seq_sum(dy * y, axis=axis, keepdims=True))


def _ln_stats(x, eps):
    c = x.shape[-1]
    mean = seq_sum(x, axis=-1, keepdims=True) / c
    xc = x - mean
    var = seq_sum(xc * xc, axis=-1, keepdims=True) / c
    rstd = 1.0 / np.sqrt(var + eps)
    return xc, rstd


def layer_norm(x, gamma, beta, eps=LN_EPS):
    """Normalise over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != np.shape(gamma)[0] or x.shape[-1] != np.shape(beta)[0]:
        raise GeometryError(
            f"layer_norm: last dim {x.shape[-1]} does not match gamma {np.shape(gamma)} / beta {np.shape(beta)}"
        )
    xc, rstd = _ln_stats(x, eps)
    return xc * rstd * gamma + beta


def layer_norm_backward(dy, x, gamma, eps=LN_EPS):
    x = np.asarray(x, dtype=np.float64)
    c = x.shape[-1]
    xc, rstd = _ln_stats(x, eps)
    xhat = xc * rstd
    flat_dy = dy.reshape(-1, c)
    dgamma = seq_sum(flat_dy * xhat.reshape(-1, c), axis=0)
    dbeta = seq_sum(flat_dy, axis=0)
    dxhat = dy * gamma
    m1 = seq_sum(dxhat, axis=-1, keepdims=True) / c
    m2 = seq_sum(dxhat * xhat, axis=-1, keepdims=True) / c
    dx = rstd * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


def gelu(x):
    x = np.asarray(x, dtype=np.float64)
    return x * 0.5 * (1.0 + erf(x * _INV_SQRT2))


def gelu_backward(dy, x):
    x = np.asarray(x, dtype=np.float64)
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
    return dy * (cdf + x * pdf)


def conv_output_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def conv2d(x, kernel, bias, stride=1, padding=0):
    """Cross-correlation of an [H, W, Cin] map with a [kh, kw, Cin, Cout] kernel."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 3 or kernel.ndim != 4 or kernel.shape[2] != x.shape[2]:
        raise GeometryError(f"conv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    if stride < 1 or padding < 0:
        raise GeometryError(f"conv2d: invalid stride {stride} / padding {padding}")
    h, w, _ = x.shape
    kh, kw = kernel.shape[:2]
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise GeometryError(
            f"conv2d: {h}x{w} input with {kh}x{kw} kernel, stride {stride}, padding {padding} "
            f"gives non-positive output {ho}x{wo}"
        )
    y = kernels.conv2d(x, kernel, stride, padding)
    if bias is not None:
        y = y + bias
    return y


def conv2d_backward(dy, x, kernel, stride=1, padding=0):
    """Gradients ``(dx, dkernel, dbias)`` of :func:`conv2d`."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    h, w, _ = x.shape
    kh, kw = kernel.shape[:2]
    dx = kernels.conv2d_backward_input(dy, kernel, stride, padding, h, w)
    dk = kernels.conv2d_backward_kernel(x, dy, kh, kw, stride, padding)
    db = seq_sum(dy.reshape(-1, dy.shape[-1]), axis=0)
    return dx, dk, db
