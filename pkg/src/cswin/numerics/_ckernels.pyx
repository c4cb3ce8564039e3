# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Loop nests mirror ``_pykernels`` reduction for reduction: each output element
accumulates its products in the same order, starting from 0.0, so results are
bit-identical to the numpy fallback. Build with ``-ffp-contract=off`` so the
compiler never fuses a multiply and an add.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

NAME = "cython"


cdef inline void _valid(Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad,
                        Py_ssize_t size, Py_ssize_t out_size,
                        Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # half-open [lo, hi) of outputs whose input row o*stride - pad + k is in bounds
    cdef Py_ssize_t a = 0
    cdef Py_ssize_t b
    if k < pad:
        a = (pad - k + stride - 1) // stride
    b = size - 1 + pad - k
    if b < 0:  # C division truncates toward zero; the range is empty here
        lo[0] = 0
        hi[0] = 0
        return
    b = b // stride
    if b > out_size - 1:
        b = out_size - 1
    if b < a:
        lo[0] = 0
        hi[0] = 0
    else:
        lo[0] = a
        hi[0] = b + 1


def matmul(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef Py_ssize_t i, j, kk
    cdef double acc
    out = np.empty((m, n))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(m):
            for j in range(n):
                acc = 0.0
                for kk in range(k):
                    acc = acc + a[i, kk] * b[kk, j]
                o[i, j] = acc
    return out


def conv2d(const double[:, :, ::1] x, const double[:, :, :, ::1] w,
           Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t h = x.shape[0], wd = x.shape[1], ci = x.shape[2]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], co = w.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t orow, ocol, oc, kr, kc, c, ir, ic
    cdef double acc
    out = np.empty((ho, wo, co))
    cdef double[:, :, ::1] o = out
    with nogil:
        for orow in range(ho):
            for ocol in range(wo):
                for oc in range(co):
                    acc = 0.0
                    for kr in range(kh):
                        ir = orow * stride - pad + kr
                        if ir < 0 or ir >= h:
                            continue
                        for kc in range(kw):
                            ic = ocol * stride - pad + kc
                            if ic < 0 or ic >= wd:
                                continue
                            for c in range(ci):
                                acc = acc + x[ir, ic, c] * w[kr, kc, c, oc]
                    o[orow, ocol, oc] = acc
    return out


def conv2d_backward_input(const double[:, :, ::1] dy, const double[:, :, :, ::1] w,
                          Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t h, Py_ssize_t wd):
    cdef Py_ssize_t ho = dy.shape[0], wo = dy.shape[1], co = dy.shape[2]
    cdef Py_ssize_t kh = w.shape[0], kw = w.shape[1], ci = w.shape[2]
    cdef Py_ssize_t kr, kc, o, orow, ocol, c, ir, ic, r0, r1, c0, c1
    cdef double g
    dx = np.zeros((h, wd, ci))
    cdef double[:, :, ::1] d = dx
    with nogil:
        for kr in range(kh):
            _valid(kr, stride, pad, h, ho, &r0, &r1)
            for kc in range(kw):
                _valid(kc, stride, pad, wd, wo, &c0, &c1)
                for o in range(co):
                    for orow in range(r0, r1):
                        ir = orow * stride - pad + kr
                        for ocol in range(c0, c1):
                            ic = ocol * stride - pad + kc
                            g = dy[orow, ocol, o]
                            for c in range(ci):
                                d[ir, ic, c] = d[ir, ic, c] + g * w[kr, kc, c, o]
    return dx


def conv2d_backward_kernel(const double[:, :, ::1] x, const double[:, :, ::1] dy,
                           Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t h = x.shape[0], wd = x.shape[1], ci = x.shape[2]
    cdef Py_ssize_t ho = dy.shape[0], wo = dy.shape[1], co = dy.shape[2]
    cdef Py_ssize_t kr, kc, c, o, orow, ocol, r0, r1, c0, c1
    cdef double acc
    dw = np.zeros((kh, kw, ci, co))
    cdef double[:, :, :, ::1] d = dw
    with nogil:
        for kr in range(kh):
            _valid(kr, stride, pad, h, ho, &r0, &r1)
            for kc in range(kw):
                _valid(kc, stride, pad, wd, wo, &c0, &c1)
                if r1 <= r0 or c1 <= c0:
                    continue
                for c in range(ci):
                    for o in range(co):
                        acc = 0.0
                        for orow in range(r0, r1):
                            for ocol in range(c0, c1):
                                acc = acc + (x[orow * stride - pad + kr, ocol * stride - pad + kc, c]
                                             * dy[orow, ocol, o])
                        d[kr, kc, c, o] = acc
    return dw


def lepe_attend(const double[:, ::1] alpha, const double[:, :, ::1] beta,
                const double[:, ::1] v):
    cdef Py_ssize_t m = alpha.shape[0], n = v.shape[0], dk = v.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double acc
    out = np.empty((m, dk))
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(m):
            for c in range(dk):
                acc = 0.0
                for j in range(n):
                    acc = acc + (alpha[i, j] + beta[i, j, c]) * v[j, c]
                o[i, c] = acc
    return out


def lepe_attend_backward(const double[:, ::1] alpha, const double[:, :, ::1] beta,
                         const double[:, ::1] v, const double[:, ::1] dz):
    cdef Py_ssize_t m = alpha.shape[0], n = v.shape[0], dk = v.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double acc
    dalpha = np.empty((m, n))
    dbeta = np.empty((m, n, dk))
    dv = np.empty((n, dk))
    cdef double[:, ::1] da = dalpha
    cdef double[:, :, ::1] db = dbeta
    cdef double[:, ::1] dvv = dv
    with nogil:
        for i in range(m):
            for j in range(n):
                acc = 0.0
                for c in range(dk):
                    acc = acc + dz[i, c] * v[j, c]
                    db[i, j, c] = dz[i, c] * v[j, c]
                da[i, j] = acc
        for j in range(n):
            for c in range(dk):
                acc = 0.0
                for i in range(m):
                    acc = acc + (alpha[i, j] + beta[i, j, c]) * dz[i, c]
                dvv[j, c] = acc
    return dalpha, dbeta, dv
