import math

import numpy as np
import pytest

from cswin.attention import (
    AttentionConfig,
    HeadProjections,
    Orientation,
    attention_weights,
    cswin_attention,
    cswin_attention_backward,
    cswin_attention_forward,
    full_attention_oracle,
    sequential_cswin_attention,
    stripe_attention_head,
    stripe_coords,
    stripe_index,
    stripe_merge,
    stripe_partition,
)
from cswin.errors import GeometryError
from cswin.lepe import LePETable
from cswin.numerics import finite_diff_grad, kernels, relative_error

H, V = Orientation.HORIZONTAL, Orientation.VERTICAL


def proj(rng, c, scale=0.5):
    return HeadProjections(*(rng.normal(size=(c, c)) * scale for _ in range(4)))


def table(rng, c, tau=3):
    return LePETable(tau, rng.normal(size=(2 * tau + 1, 2 * tau + 1, c)) * 0.3)


def test_config_validation():
    with pytest.raises(GeometryError):
        AttentionConfig(4, 4, 8, 3, 1)
    with pytest.raises(GeometryError):
        AttentionConfig(4, 4, 6, 4, 1)
    with pytest.raises(GeometryError, match="sw=3"):
        AttentionConfig(4, 6, 8, 2, 3)
    assert AttentionConfig(4, 4, 8, 2, 2).head_dim == 4


def test_stripe_layout_small():
    idx = stripe_index(2, 3, 1, H)
    assert idx.tolist() == [[0, 1, 2], [3, 4, 5]]
    idx = stripe_index(2, 3, 1, V)
    assert idx.tolist() == [[0, 3], [1, 4], [2, 5]]
    assert stripe_coords(2, 2, 2, V)[0].tolist() == [[0, 0], [1, 0], [0, 1], [1, 1]]


def test_stripe_partition_merge_roundtrip(rng):
    x = rng.normal(size=(6, 4, 3))
    for o in (H, V):
        assert np.array_equal(stripe_merge(stripe_partition(x, 2, o), 2, o, 6, 4), x)


def test_stripe_partition_rejects_bad_width():
    with pytest.raises(GeometryError):
        stripe_partition(np.zeros((5, 4, 1)), 2, H)


def test_attention_weights_row_stochastic(rng):
    a = attention_weights(rng.normal(size=(6, 4)), rng.normal(size=(6, 4)))
    assert np.all(np.abs(a.sum(axis=1) - 1) < 1e-12) and np.all(a > 0)


def loop_head(stripe, wq, wk, wv, tab, coords, chs):
    """Scalar double loop: z_i = sum_j (alpha_ij + beta_ij) v_j."""
    q, k, v = stripe @ wq, stripe @ wk, stripe @ wv
    n, d = q.shape
    z = np.zeros((n, d))
    for i in range(n):
        s = [sum(q[i, t] * k[j, t] for t in range(d)) / math.sqrt(d) for j in range(n)]
        mx = max(s)
        e = [math.exp(x - mx) for x in s]
        tot = sum(e)
        for j in range(n):
            dr, dc = coords[i][0] - coords[j][0], coords[i][1] - coords[j][1]
            for c in range(d):
                beta = 0.0
                if max(abs(dr), abs(dc)) <= tab.tau:
                    beta = tab.table[dr + tab.tau, dc + tab.tau, chs.start + c]
                z[i, c] += (e[j] / tot + beta) * v[j, c]
    return z


@pytest.mark.parametrize("o", [H, V])
def test_stripe_head_matches_double_loop(rng, backend, o):
    c, d = 8, 4
    x = rng.normal(size=(4, 6, c))
    p = proj(rng, c)
    tab = table(rng, c)
    chs = slice(4, 8)
    coords = stripe_coords(4, 6, 2, o)
    for s, stripe in enumerate(stripe_partition(x, 2, o)):
        got = stripe_attention_head(stripe, *p.head(1, 2), tab, coords[s], chs)
        ref = loop_head(stripe, *p.head(1, 2), tab, coords[s], chs)
        assert np.max(np.abs(got - ref)) < 1e-12


def test_layer_assembles_heads_in_order(rng):
    cfg = AttentionConfig(4, 4, 8, 4, 2)
    x = rng.normal(size=(4, 4, 8))
    p, tab = proj(rng, 8), table(rng, 8)
    cols = []
    for head in range(4):
        o = H if head < 2 else V
        coords = stripe_coords(4, 4, 2, o)
        chs = slice(2 * head, 2 * head + 2)
        outs = [stripe_attention_head(s, *p.head(head, 4), tab, coords[i], chs)
                for i, s in enumerate(stripe_partition(x, 2, o))]
        cols.append(stripe_merge(outs, 2, o, 4, 4))
    ref = np.concatenate(cols, axis=-1).reshape(16, 8) @ p.wo
    assert np.max(np.abs(cswin_attention(x, cfg, p, tab).reshape(16, 8) - ref)) < 1e-12


@pytest.mark.parametrize("size,c,k", [(4, 8, 2), (6, 12, 4), (8, 16, 4), (2, 4, 2)])
def test_full_stripe_equals_full_attention(rng, size, c, k):
    # a stripe spanning the whole map is ordinary global attention
    cfg = AttentionConfig(size, size, c, k, size)
    x, p = rng.normal(size=(size, size, c)), proj(rng, c)
    got = cswin_attention(x, cfg, p, LePETable.zeros(c))
    assert np.max(np.abs(got - full_attention_oracle(x, k, p))) < 1e-10


def test_full_attention_oracle_direct_sum(rng):
    x, p = rng.normal(size=(2, 2, 4)), proj(rng, 4)
    xf = x.reshape(4, 4)
    heads = []
    for h in range(2):
        sl = slice(2 * h, 2 * h + 2)
        q, k, v = xf @ p.wq[:, sl], xf @ p.wk[:, sl], xf @ p.wv[:, sl]
        out = np.zeros((4, 2))
        for i in range(4):
            w = [math.exp(float(q[i] @ k[j]) / math.sqrt(2)) for j in range(4)]
            for j in range(4):
                out[i] += w[j] / sum(w) * v[j]
        heads.append(out)
    ref = np.concatenate(heads, axis=1) @ p.wo
    assert np.max(np.abs(full_attention_oracle(x, 2, p).reshape(4, 4) - ref)) < 1e-12


def test_transpose_swaps_head_groups(rng):
    # transposing the map turns horizontal heads into vertical ones
    c, k = 8, 2
    x, p, tab = rng.normal(size=(4, 6, c)), proj(rng, c), table(rng, c)
    out = cswin_attention(x, AttentionConfig(4, 6, c, k, 2), p, tab)
    d = c // k
    perm = np.r_[d:c, 0:d]
    p2 = HeadProjections(p.wq[:, perm], p.wk[:, perm], p.wv[:, perm], p.wo[perm])
    tab2 = LePETable(tab.tau, tab.table.transpose(1, 0, 2)[:, :, perm])
    out_t = cswin_attention(x.transpose(1, 0, 2), AttentionConfig(6, 4, c, k, 2), p2, tab2)
    assert np.max(np.abs(out_t.transpose(1, 0, 2) - out)) < 1e-12


def test_token_permutation_within_stripe_equivariant(rng):
    # with zero LePE, reordering tokens inside a global stripe permutes the output
    c = 4
    x, p = rng.normal(size=(3, 3, c)), proj(rng, c)
    cfg = AttentionConfig(3, 3, c, 2, 3)
    perm = rng.permutation(9)
    a = cswin_attention(x, cfg, p, LePETable.zeros(c)).reshape(9, c)[perm]
    b = cswin_attention(x.reshape(9, c)[perm].reshape(3, 3, c), cfg, p, LePETable.zeros(c)).reshape(9, c)
    assert np.max(np.abs(a - b)) < 1e-12


def test_input_shape_checked(rng):
    with pytest.raises(GeometryError):
        cswin_attention(np.zeros((4, 4, 4)), AttentionConfig(4, 4, 8, 2, 1), proj(rng, 8), LePETable.zeros(8))


def test_sequential_differs_from_parallel(rng):
    cfg = AttentionConfig(4, 4, 8, 2, 1)
    x, p, tab = rng.normal(size=(4, 4, 8)), proj(rng, 8), table(rng, 8)
    assert np.max(np.abs(sequential_cswin_attention(x, cfg, p, tab) - cswin_attention(x, cfg, p, tab))) > 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_backward_against_finite_differences(seed):
    rng = np.random.default_rng(seed)
    cfg = AttentionConfig(4, 4, 4, 2, 2, tau=1)
    x, p, tab = rng.normal(size=(4, 4, 4)), proj(rng, 4), table(rng, 4, 1)
    r = rng.normal(size=(4, 4, 4))
    out, cache = cswin_attention_forward(x, cfg, p, tab)
    dx, g = cswin_attention_backward(r, cache)
    loss = lambda xx, pp, tt: float(np.sum(cswin_attention(xx, cfg, pp, tt) * r))  # noqa: E731
    assert relative_error(dx, finite_diff_grad(lambda v: loss(v, p, tab), x)) < 1e-5
    num = finite_diff_grad(lambda v: loss(x, HeadProjections(p.wq, p.wk, v, p.wo), tab), p.wv)
    assert relative_error(g["wv"], num) < 1e-5
    num = finite_diff_grad(lambda v: loss(x, p, LePETable(1, v)), tab.table)
    assert relative_error(g["lepe"], num) < 1e-5


def test_threads_do_not_change_bits(rng):
    cfg = AttentionConfig(8, 8, 8, 4, 2)
    x, p, tab = rng.normal(size=(8, 8, 8)), proj(rng, 8), table(rng, 8)
    a = cswin_attention(x, cfg, p, tab)
    kernels.set_num_threads(4)
    try:
        b = cswin_attention(x, cfg, p, tab)
    finally:
        kernels.set_num_threads(1)
    assert a.tobytes() == b.tobytes()
