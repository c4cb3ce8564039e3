"""Central finite differences, the reference every backward pass is checked against."""

import numpy as np


def finite_diff_grad(f, x, h=1e-6, indices=None):
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``f`` is evaluated on perturbed copies of ``x``; ``x`` itself is never
    modified. With ``indices`` (flat positions) only those entries are
    estimated and the result is a 1-D array in the same order.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.array(x, dtype=np.float64, copy=True)
    flat = x.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    out = []
    for i in positions:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        out.append((fp - fm) / (2.0 * h))
    out = np.array(out, dtype=np.float64)
    return out.reshape(x.shape) if indices is None else out


def relative_error(analytic, numeric):
    """Max abs difference scaled by the larger of the two max-norms.

    Returns 0 when both are identically zero.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.shape != n.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {n.shape}")
    if a.size == 0:
        return 0.0
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)))
    diff = np.max(np.abs(a - n))
    if scale == 0.0:
        return 0.0
    return float(diff / scale)
