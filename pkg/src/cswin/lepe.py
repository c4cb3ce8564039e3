"""Locally-enhanced positional encoding.

A learnable per-channel bias on the attention weights that depends only on the
2-D offset between query and key token, and vanishes once the Chebyshev
distance exceeds ``tau``.
"""

from dataclasses import dataclass

import numpy as np

DEFAULT_TAU = 3


@dataclass
class LePETable:
    """Bias table indexed by ``(drow + tau, dcol + tau, channel)``."""

    tau: int
    table: np.ndarray

    def __post_init__(self):
        side = 2 * self.tau + 1
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.table.ndim != 3 or self.table.shape[:2] != (side, side):
            raise ValueError(f"table shape {self.table.shape} does not match tau={self.tau}")

    @property
    def channels(self):
        return self.table.shape[2]

    @classmethod
    def zeros(cls, channels, tau=DEFAULT_TAU):
        side = 2 * tau + 1
        return cls(tau, np.zeros((side, side, channels)))


def lepe_bias(pos_i, pos_j, channel, table):
    dr = pos_i[0] - pos_j[0]
    dc = pos_i[1] - pos_j[1]
    if max(abs(dr), abs(dc)) > table.tau:
        return 0.0
    return float(table.table[dr + table.tau, dc + table.tau, channel])


def _offsets(coords, tau):
    coords = np.asarray(coords, dtype=np.int64)
    dr = coords[:, None, 0] - coords[None, :, 0]
    dc = coords[:, None, 1] - coords[None, :, 1]
    mask = np.maximum(np.abs(dr), np.abs(dc)) <= tau
    return dr[mask] + tau, dc[mask] + tau, mask


def lepe_block(coords, table, channels=slice(None)):
    """Dense bias ``[n, n, d]`` for tokens at ``coords`` over a channel slice."""
    rows, cols, mask = _offsets(coords, table.tau)
    sub = table.table[:, :, channels]
    n = mask.shape[0]
    out = np.zeros((n, n, sub.shape[2]))
    out[mask] = sub[rows, cols]
    return out


def lepe_matrix(coords, channel, table):
    """Dense ``[n, n]`` bias for one channel."""
    return lepe_block(coords, table, slice(channel, channel + 1))[:, :, 0]


def lepe_block_backward(dbeta, coords, grad_table, tau, channels=slice(None)):
    """Accumulate ``dbeta`` into ``grad_table`` in place.

    Contributions are added in row-major (query, key) order. Offsets beyond
    ``tau`` carry no parameter and are dropped.
    """
    rows, cols, mask = _offsets(coords, tau)
    np.add.at(grad_table[:, :, channels], (rows, cols), dbeta[mask])
    return grad_table
