"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy fallback
takes over. Set ``CSWIN_KERNELS=python`` to force the fallback. Both backends
produce bit-identical results.

The wrappers here also normalise inputs to C-contiguous float64 and keep an
optional tally of executed multiply-accumulates (see :func:`count_macs`).
"""

import contextlib
import os
import threading

import numpy as np

from . import _pykernels

_backend = _pykernels
if os.environ.get("CSWIN_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _backend  # noqa: F811
    except ImportError:  # extension not built
        _backend = _pykernels

_compiled = None
try:
    from . import _ckernels as _compiled
except ImportError:
    pass

_lock = threading.Lock()
_tallies = []
_num_threads = 1


def backend_name():
    return _backend.NAME


def available_backends():
    names = ["python"]
    if _compiled is not None:
        names.append("cython")
    return names


def get_backend(name):
    if name == "python":
        return _pykernels
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown kernel backend {name!r}")


@contextlib.contextmanager
def use_backend(name):
    """Temporarily switch the active backend (process-wide)."""
    global _backend
    prev = _backend
    _backend = get_backend(name)
    try:
        yield
    finally:
        _backend = prev


@contextlib.contextmanager
def count_macs():
    """Tally multiply-accumulates executed by kernels inside the block.

    Yields a dict with key ``"macs"``; the value is final once the block exits.
    """
    tally = {"macs": 0}
    with _lock:
        _tallies.append(tally)
    try:
        yield tally
    finally:
        with _lock:
            _tallies.remove(tally)


def _tally(n):
    if _tallies:
        with _lock:
            for t in _tallies:
                t["macs"] += n


def set_num_threads(n):
    """Worker count for :func:`parallel_map`; 1 (the default) runs inline."""
    global _num_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = int(n)


def get_num_threads():
    return _num_threads


def parallel_map(fn, items):
    """Ordered map over independent work items.

    Items never share accumulators, so the result is the same for any thread
    count.
    """
    items = list(items)
    if _num_threads == 1 or len(items) < 2:
        return [fn(it) for it in items]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=_num_threads) as pool:
        return list(pool.map(fn, items))


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv_taps(k, stride, pad, size, out_size):
    """Total number of in-bounds (output, tap) pairs along one axis."""
    total = 0
    for kk in range(k):
        lo, hi, _ = _pykernels.valid_range(kk, stride, pad, size, out_size)
        total += max(hi - lo, 0)
    return total


def matmul(a, b):
    a, b = _f64(a), _f64(b)
    _tally(a.shape[0] * a.shape[1] * b.shape[1])
    return _backend.matmul(a, b)


def conv2d(x, w, stride, pad):
    x, w = _f64(x), _f64(w)
    h, wd, ci = x.shape
    kh, kw, _, co = w.shape
    if _tallies:
        ho = (h + 2 * pad - kh) // stride + 1
        wo = (wd + 2 * pad - kw) // stride + 1
        _tally(conv_taps(kh, stride, pad, h, ho) * conv_taps(kw, stride, pad, wd, wo) * ci * co)
    return _backend.conv2d(x, w, stride, pad)


def conv2d_backward_input(dy, w, stride, pad, h, wd):
    return _backend.conv2d_backward_input(_f64(dy), _f64(w), stride, pad, h, wd)


def conv2d_backward_kernel(x, dy, kh, kw, stride, pad):
    return _backend.conv2d_backward_kernel(_f64(x), _f64(dy), kh, kw, stride, pad)


def lepe_attend(alpha, beta, v):
    alpha, beta, v = _f64(alpha), _f64(beta), _f64(v)
    _tally(alpha.shape[0] * alpha.shape[1] * v.shape[1])
    return _backend.lepe_attend(alpha, beta, v)


def lepe_attend_backward(alpha, beta, v, dz):
    return _backend.lepe_attend_backward(_f64(alpha), _f64(beta), _f64(v), _f64(dz))
