import numpy as np
import pytest

from cswin.attention import Orientation, stripe_coords
from cswin.lepe import LePETable, lepe_bias, lepe_block, lepe_block_backward, lepe_matrix


def random_table(rng, channels, tau=3):
    side = 2 * tau + 1
    return LePETable(tau, rng.normal(size=(side, side, channels)))


def test_zero_init_shape():
    t = LePETable.zeros(8)
    assert t.tau == 3 and t.table.shape == (7, 7, 8) and not t.table.any()


def test_bad_table_shape():
    with pytest.raises(ValueError):
        LePETable(2, np.zeros((7, 7, 1)))


def test_bias_depends_only_on_offset(rng):
    t = random_table(rng, 2)
    assert lepe_bias((0, 0), (1, 2), 1, t) == lepe_bias((5, 7), (6, 9), 1, t)
    assert lepe_bias((3, 3), (3, 3), 0, t) == t.table[3, 3, 0]


def test_bias_vanishes_beyond_tau(rng):
    t = random_table(rng, 1)
    assert lepe_bias((0, 0), (4, 0), 0, t) == 0.0
    assert lepe_bias((0, 0), (0, 4), 0, t) == 0.0
    assert lepe_bias((0, 0), (3, 3), 0, t) != 0.0


def test_block_matches_scalar_definition(rng):
    t = random_table(rng, 3, tau=2)
    coords = stripe_coords(6, 6, 2, Orientation.VERTICAL)[1]
    blk = lepe_block(coords, t)
    n = len(coords)
    for i in range(n):
        for j in range(n):
            for c in range(3):
                assert blk[i, j, c] == lepe_bias(coords[i], coords[j], c, t)
    assert np.array_equal(lepe_matrix(coords, 1, t), blk[:, :, 1])


def test_translation_invariance(rng):
    t = random_table(rng, 1)
    coords = np.array([(r, c) for r in range(3) for c in range(4)])
    shifted = coords + np.array([5, 11])
    assert np.array_equal(lepe_block(coords, t), lepe_block(shifted, t))


def test_backward_is_adjoint(rng):
    t = random_table(rng, 4, tau=1)
    coords = np.array([(r, c) for r in range(3) for c in range(3)])
    g = rng.normal(size=(9, 9, 2))
    grad = np.zeros_like(t.table)
    lepe_block_backward(g, coords, grad, t.tau, slice(1, 3))
    # <g, dbeta/dtable . e> == <grad, e> for random direction e
    e = rng.normal(size=t.table.shape)
    lhs = np.sum(g * lepe_block(coords, LePETable(1, e), slice(1, 3)))
    assert abs(lhs - np.sum(grad * e)) < 1e-12
    assert not grad[:, :, 0].any() and not grad[:, :, 3].any()
