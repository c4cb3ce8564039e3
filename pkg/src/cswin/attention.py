"""Cross-shaped window self-attention.

Heads are split in two equal groups: the first attends within horizontal
stripes of ``sw`` rows, the second within vertical stripes of ``sw`` columns.
Each token therefore sees the union of its row stripe and column stripe in a
single layer. A vertical stripe is the horizontal stripe of the transposed map,
so both orientations share one token-permutation code path.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .lepe import DEFAULT_TAU, LePETable, lepe_block, lepe_block_backward
from .numerics import kernels
from .numerics.ops import matmul, matmul_backward, softmax, softmax_backward


class Orientation(enum.Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


@dataclass(frozen=True)
class AttentionConfig:
    height: int
    width: int
    channels: int
    heads: int
    stripe_width: int
    tau: int = DEFAULT_TAU

    def __post_init__(self):
        if self.heads < 2 or self.heads % 2:
            raise GeometryError(f"heads must be a positive even number, got {self.heads}")
        if self.channels % self.heads:
            raise GeometryError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.stripe_width < 1:
            raise GeometryError(f"stripe width must be >= 1, got {self.stripe_width}")
        if self.height % self.stripe_width:
            raise GeometryError(f"stripe width sw={self.stripe_width} does not divide H={self.height}")
        if self.width % self.stripe_width:
            raise GeometryError(f"stripe width sw={self.stripe_width} does not divide W={self.width}")
        if self.tau < 0:
            raise GeometryError(f"tau must be >= 0, got {self.tau}")

    @property
    def head_dim(self):
        return self.channels // self.heads


@dataclass
class HeadProjections:
    """Query/key/value projections for all heads plus the output projection.

    ``wq``, ``wk`` and ``wv`` are [C, C]; columns ``k*d : (k+1)*d`` hold the
    [C, d] matrix of head ``k``. ``wo`` is [C, C]. No bias terms.
    """

    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def head(self, k, heads):
        d = self.wq.shape[1] // heads
        sl = slice(k * d, (k + 1) * d)
        return self.wq[:, sl], self.wk[:, sl], self.wv[:, sl]

    @classmethod
    def zeros(cls, channels):
        z = np.zeros((channels, channels))
        return cls(z, z.copy(), z.copy(), z.copy())


# ---------------------------------------------------------------------------
# stripes


def _check_sw(size, sw, name):
    if sw < 1 or size % sw:
        raise GeometryError(f"stripe width sw={sw} does not divide {name}={size}")


def stripe_index(height, width, sw, orientation):
    """Flat token indices (row-major in the input) in stripe order.

    Horizontal stripes list their tokens row-major, vertical stripes
    column-major. Returns an array of shape [num_stripes, tokens_per_stripe].
    """
    grid = np.arange(height * width).reshape(height, width)
    if orientation is Orientation.VERTICAL:
        grid = grid.T
        _check_sw(width, sw, "W")
    else:
        _check_sw(height, sw, "H")
    rows, cols = grid.shape
    return grid.reshape(rows // sw, sw * cols)


def stripe_coords(height, width, sw, orientation):
    """[num_stripes, n, 2] (row, col) coordinates matching :func:`stripe_index`."""
    idx = stripe_index(height, width, sw, orientation)
    return np.stack(np.divmod(idx, width), axis=-1)


def stripe_partition(x, sw, orientation):
    x = np.asarray(x)
    h, w, c = x.shape
    idx = stripe_index(h, w, sw, orientation)
    flat = x.reshape(h * w, c)
    return [flat[row] for row in idx]


def stripe_merge(stripes, sw, orientation, height, width):
    idx = stripe_index(height, width, sw, orientation)
    if len(stripes) != idx.shape[0]:
        raise GeometryError(f"expected {idx.shape[0]} stripes for H={height}, W={width}, sw={sw}, got {len(stripes)}")
    c = np.shape(stripes[0])[-1]
    out = np.empty((height * width, c), dtype=np.asarray(stripes[0]).dtype)
    for row, s in zip(idx, stripes):
        s = np.asarray(s)
        if s.shape != (idx.shape[1], c):
            raise GeometryError(f"stripe shape {s.shape} inconsistent with expected {(idx.shape[1], c)}")
        out[row] = s
    return out.reshape(height, width, c)


# ---------------------------------------------------------------------------
# single-head attention within one stripe


def _attend(q, k, v, beta):
    scale = 1.0 / math.sqrt(q.shape[1])
    scores = matmul(q, np.ascontiguousarray(k.T)) * scale
    alpha = softmax(scores, axis=-1)
    z = matmul(alpha, v) if beta is None else kernels.lepe_attend(alpha, beta, v)
    return z, (q, k, v, alpha, beta, scale)


def _attend_backward(dz, cache):
    q, k, v, alpha, beta, scale = cache
    if beta is None:
        dalpha, dv = matmul_backward(dz, alpha, v)
        dbeta = None
    else:
        dalpha, dbeta, dv = kernels.lepe_attend_backward(alpha, beta, v, dz)
    ds = softmax_backward(dalpha, alpha, axis=-1) * scale
    dq = kernels.matmul(ds, k)
    dk = kernels.matmul(np.ascontiguousarray(ds.T), q)
    return dq, dk, dv, dbeta


def attention_weights(q, k):
    """Row-stochastic weights ``softmax(q k^T / sqrt(d))``."""
    scale = 1.0 / math.sqrt(q.shape[1])
    return softmax(matmul(q, np.ascontiguousarray(k.T)) * scale, axis=-1)


def stripe_attention_head(stripe, wq, wk, wv, lepe, coords, channels):
    """One head over one stripe of tokens.

    ``channels`` is the slice of layer channels owned by this head; it picks
    the LePE table entries; ``lepe=None`` drops the positional term. Output
    is [n, d].
    """
    q = matmul(stripe, wq)
    k = matmul(stripe, wk)
    v = matmul(stripe, wv)
    beta = None if lepe is None else lepe_block(coords, lepe, channels)
    return _attend(q, k, v, beta)[0]


# ---------------------------------------------------------------------------
# multi-head layers


def _check_input(x, cfg):
    x = np.asarray(x, dtype=np.float64)
    expected = (cfg.height, cfg.width, cfg.channels)
    if x.shape != expected:
        raise GeometryError(f"input shape {x.shape} does not match attention config {expected}")
    return x


def grouped_attention_forward(x, cfg, params, lepe, orientations):
    """Multi-head stripe attention with one orientation per head.

    ``lepe=None`` runs without positional encoding. Returns ``(out, cache)``.
    """
    x = _check_input(x, cfg)
    h, w, c = x.shape
    heads = len(orientations)
    d = c // heads
    xf = x.reshape(h * w, c)
    q = matmul(xf, params.wq)
    k = matmul(xf, params.wk)
    v = matmul(xf, params.wv)

    layouts = {}
    for o in set(orientations):
        layouts[o] = (
            stripe_index(h, w, cfg.stripe_width, o),
            stripe_coords(h, w, cfg.stripe_width, o),
        )

    jobs = []
    for head, o in enumerate(orientations):
        idx, coords = layouts[o]
        for s in range(idx.shape[0]):
            jobs.append((head, o, s))

    def run(job):
        head, o, s = job
        idx, coords = layouts[o]
        chs = slice(head * d, (head + 1) * d)
        rows = idx[s]
        beta = None if lepe is None else lepe_block(coords[s], lepe, chs)
        return _attend(q[rows, chs], k[rows, chs], v[rows, chs], beta)

    results = kernels.parallel_map(run, jobs)
    concat = np.empty((h * w, c))
    for (head, o, s), (z, _) in zip(jobs, results):
        concat[layouts[o][0][s], head * d:(head + 1) * d] = z
    out = matmul(concat, params.wo).reshape(h, w, c)
    cache = (xf, params, lepe, cfg, layouts, jobs, [r[1] for r in results], concat, d)
    return out, cache


def grouped_attention_backward(dout, cache):
    """Returns ``(dx, grads)`` with grads for wq, wk, wv, wo and the LePE table."""
    xf, params, lepe, cfg, layouts, jobs, caches, concat, d = cache
    hw, c = xf.shape
    dout = np.asarray(dout, dtype=np.float64).reshape(hw, c)
    dconcat, dwo = matmul_backward(dout, concat, params.wo)

    def run(item):
        (head, o, s), sub = item
        rows = layouts[o][0][s]
        return _attend_backward(np.ascontiguousarray(dconcat[rows, head * d:(head + 1) * d]), sub)

    results = kernels.parallel_map(run, list(zip(jobs, caches)))
    dq = np.zeros((hw, c))
    dk = np.zeros((hw, c))
    dv = np.zeros((hw, c))
    dtable = None if lepe is None else np.zeros_like(lepe.table)
    for (head, o, s), (gq, gk, gv, gbeta) in zip(jobs, results):
        idx, coords = layouts[o]
        chs = slice(head * d, (head + 1) * d)
        dq[idx[s], chs] = gq
        dk[idx[s], chs] = gk
        dv[idx[s], chs] = gv
        if lepe is not None:
            lepe_block_backward(gbeta, coords[s], dtable, lepe.tau, chs)

    dxq, dwq = matmul_backward(dq, xf, params.wq)
    dxk, dwk = matmul_backward(dk, xf, params.wk)
    dxv, dwv = matmul_backward(dv, xf, params.wv)
    dx = ((dxq + dxk) + dxv).reshape(cfg.height, cfg.width, c)
    grads = {"wq": dwq, "wk": dwk, "wv": dwv, "wo": dwo, "lepe": dtable}
    return dx, grads


def parallel_orientations(heads):
    half = heads // 2
    return [Orientation.HORIZONTAL] * half + [Orientation.VERTICAL] * half


def cswin_attention_forward(x, cfg, params, lepe):
    return grouped_attention_forward(x, cfg, params, lepe, parallel_orientations(cfg.heads))


def cswin_attention_backward(dout, cache):
    return grouped_attention_backward(dout, cache)


def cswin_attention(x, cfg, params, lepe):
    """Parallel horizontal/vertical head groups, concatenated and projected by ``wo``."""
    return cswin_attention_forward(x, cfg, params, lepe)[0]


def _pair(p):
    return p if isinstance(p, (tuple, list)) else (p, p)


def sequential_cswin_attention_forward(x, cfg, params, lepe):
    p1, p2 = _pair(params)
    l1, l2 = _pair(lepe)
    mid, c1 = grouped_attention_forward(x, cfg, p1, l1, [Orientation.HORIZONTAL] * cfg.heads)
    out, c2 = grouped_attention_forward(mid, cfg, p2, l2, [Orientation.VERTICAL] * cfg.heads)
    return out, (c1, c2)


def sequential_cswin_attention_backward(dout, cache):
    c1, c2 = cache
    dmid, g2 = grouped_attention_backward(dout, c2)
    dx, g1 = grouped_attention_backward(dmid, c1)
    return dx, (g1, g2)


def sequential_cswin_attention(x, cfg, params, lepe):
    """Ablation: all heads horizontal, then all heads vertical on the result.

    ``params`` and ``lepe`` may each be a single object (reused for both
    passes) or a pair.
    """
    return sequential_cswin_attention_forward(x, cfg, params, lepe)[0]


def full_attention_oracle(x, heads, params):
    """Plain multi-head attention over every token, no positional bias."""
    x = np.asarray(x, dtype=np.float64)
    h, w, c = x.shape
    if c % heads:
        raise GeometryError(f"channels {c} not divisible by heads {heads}")
    d = c // heads
    xf = x.reshape(h * w, c)
    q, k, v = xf @ params.wq, xf @ params.wk, xf @ params.wv
    outs = []
    for i in range(heads):
        sl = slice(i * d, (i + 1) * d)
        s = q[:, sl] @ k[:, sl].T / math.sqrt(d)
        s = np.exp(s - s.max(axis=1, keepdims=True))
        a = s / s.sum(axis=1, keepdims=True)
        outs.append(a @ v[:, sl])
    return (np.concatenate(outs, axis=1) @ params.wo).reshape(h, w, c)


__all__ = [
    "AttentionConfig",
    "HeadProjections",
    "LePETable",
    "Orientation",
    "attention_weights",
    "cswin_attention",
    "cswin_attention_backward",
    "cswin_attention_forward",
    "full_attention_oracle",
    "grouped_attention_backward",
    "grouped_attention_forward",
    "sequential_cswin_attention",
    "sequential_cswin_attention_backward",
    "sequential_cswin_attention_forward",
    "stripe_attention_head",
    "stripe_coords",
    "stripe_index",
    "stripe_merge",
    "stripe_partition",
]
