"""Pure numpy implementations of the hot kernels.

Every reduction here is written as an explicit loop over the reduction index
with a vectorised body, so each output element sees exactly the same sequence
of IEEE additions as the compiled kernels in ``_ckernels.pyx``. The two
backends therefore agree bit for bit.

All inputs are expected to be C-contiguous float64 arrays.
"""

import numpy as np

NAME = "python"


def valid_range(k, stride, pad, size, out_size):
    """Output indices ``o`` for which input index ``o*stride - pad + k`` is in bounds.

    Returns ``(o_start, o_stop, i_start)`` with ``o_stop`` exclusive. An empty
    range has ``o_stop <= o_start``.
    """
    lo = (pad - k + stride - 1) // stride if k < pad else 0
    hi = (size - 1 + pad - k) // stride
    hi = min(hi, out_size - 1)
    if hi < lo:
        return 0, 0, 0
    return lo, hi + 1, lo * stride - pad + k


def matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for kk in range(k):
        out += a[:, kk, None] * b[None, kk, :]
    return out


def conv2d(x, w, stride, pad):
    h, wd, ci = x.shape
    kh, kw, _, co = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((ho, wo, co))
    for kr in range(kh):
        r0, r1, ir = valid_range(kr, stride, pad, h, ho)
        if r1 <= r0:
            continue
        ir_stop = ir + (r1 - r0 - 1) * stride + 1
        for kc in range(kw):
            c0, c1, ic = valid_range(kc, stride, pad, wd, wo)
            if c1 <= c0:
                continue
            ic_stop = ic + (c1 - c0 - 1) * stride + 1
            xs = x[ir:ir_stop:stride, ic:ic_stop:stride, :]
            target = out[r0:r1, c0:c1, :]
            for c in range(ci):
                target += xs[:, :, c, None] * w[kr, kc, c][None, None, :]
    return out


def conv2d_backward_input(dy, w, stride, pad, h, wd):
    ho, wo, co = dy.shape
    kh, kw, ci, _ = w.shape
    dx = np.zeros((h, wd, ci))
    for kr in range(kh):
        r0, r1, ir = valid_range(kr, stride, pad, h, ho)
        if r1 <= r0:
            continue
        ir_stop = ir + (r1 - r0 - 1) * stride + 1
        for kc in range(kw):
            c0, c1, ic = valid_range(kc, stride, pad, wd, wo)
            if c1 <= c0:
                continue
            ic_stop = ic + (c1 - c0 - 1) * stride + 1
            target = dx[ir:ir_stop:stride, ic:ic_stop:stride, :]
            dys = dy[r0:r1, c0:c1, :]
            for o in range(co):
                target += dys[:, :, o, None] * w[kr, kc, :, o][None, None, :]
    return dx


def conv2d_backward_kernel(x, dy, kh, kw, stride, pad):
    h, wd, ci = x.shape
    ho, wo, co = dy.shape
    dw = np.zeros((kh, kw, ci, co))
    for kr in range(kh):
        r0, r1, ir = valid_range(kr, stride, pad, h, ho)
        if r1 <= r0:
            continue
        ir_stop = ir + (r1 - r0 - 1) * stride + 1
        for kc in range(kw):
            c0, c1, ic = valid_range(kc, stride, pad, wd, wo)
            if c1 <= c0:
                continue
            ic_stop = ic + (c1 - c0 - 1) * stride + 1
            xs = x[ir:ir_stop:stride, ic:ic_stop:stride, :].reshape(-1, ci)
            dys = dy[r0:r1, c0:c1, :].reshape(-1, co)
            dw[kr, kc] = matmul(np.ascontiguousarray(xs.T), dys)
    return dw


def lepe_attend(alpha, beta, v):
    n, d = v.shape
    out = np.zeros((alpha.shape[0], d))
    for j in range(n):
        out += (alpha[:, j, None] + beta[:, j, :]) * v[j][None, :]
    return out


def lepe_attend_backward(alpha, beta, v, dz):
    m = alpha.shape[0]
    n, d = v.shape
    dalpha = np.zeros((m, n))
    for c in range(d):
        dalpha += dz[:, c, None] * v[None, :, c]
    dbeta = dz[:, None, :] * v[None, :, :]
    dv = np.zeros((n, d))
    for i in range(m):
        dv += (alpha[i, :, None] + beta[i]) * dz[i][None, :]
    return dalpha, dbeta, dv
