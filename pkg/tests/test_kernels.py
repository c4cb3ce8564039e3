import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cswin.numerics import kernels
from cswin.numerics import _pykernels

needs_cython = pytest.mark.skipif("cython" not in kernels.available_backends(), reason="extension not built")


def both(name, *args):
    out = {}
    for b in kernels.available_backends():
        out[b] = getattr(kernels.get_backend(b), name)(*args)
    return out


def same_bits(results):
    vals = list(results.values())
    for v in vals[1:]:
        if isinstance(v, tuple):
            assert all(a.tobytes() == b.tobytes() for a, b in zip(vals[0], v))
        else:
            assert v.tobytes() == vals[0].tobytes()


def test_python_backend_always_available():
    assert "python" in kernels.available_backends()
    assert kernels.backend_name() in kernels.available_backends()


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_use_backend_restores():
    before = kernels.backend_name()
    with kernels.use_backend("python"):
        assert kernels.backend_name() == "python"
    assert kernels.backend_name() == before


@needs_cython
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 7), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_matmul_bit_identical(m, k, n, seed):
    rng = np.random.default_rng(seed)
    same_bits(both("matmul", rng.normal(size=(m, k)), rng.normal(size=(k, n))))


@needs_cython
@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 7), st.integers(1, 7), st.sampled_from([1, 3, 5]), st.integers(1, 3),
    st.integers(0, 2), st.integers(0, 2**32 - 1),
)
def test_conv_kernels_bit_identical(h, w, k, stride, pad, seed):
    if h + 2 * pad < k or w + 2 * pad < k:
        return
    rng = np.random.default_rng(seed)
    x, wt = rng.normal(size=(h, w, 2)), rng.normal(size=(k, k, 2, 3))
    same_bits(both("conv2d", x, wt, stride, pad))
    ho, wo = (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1
    dy = rng.normal(size=(ho, wo, 3))
    same_bits(both("conv2d_backward_input", dy, wt, stride, pad, h, w))
    same_bits(both("conv2d_backward_kernel", x, dy, k, k, stride, pad))


@needs_cython
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_lepe_attend_bit_identical(n, d, seed):
    rng = np.random.default_rng(seed)
    a, b, v, dz = rng.random((n, n)), rng.normal(size=(n, n, d)), rng.normal(size=(n, d)), rng.normal(size=(n, d))
    same_bits(both("lepe_attend", a, b, v))
    same_bits(both("lepe_attend_backward", a, b, v, dz))


def test_lepe_attend_definition(rng, backend):
    n, d = 5, 3
    a, b, v = rng.random((n, n)), rng.normal(size=(n, n, d)), rng.normal(size=(n, d))
    z = kernels.lepe_attend(a, b, v)
    ref = np.einsum("ij,jc->ic", a, v) + np.einsum("ijc,jc->ic", b, v)
    assert np.max(np.abs(z - ref)) < 1e-12


def test_valid_range_skips_padding():
    # 3-tap kernel, pad 1, stride 1 over 4 inputs: tap 0 misses output 0
    assert _pykernels.valid_range(0, 1, 1, 4, 4)[:2] == (1, 4)
    assert _pykernels.valid_range(2, 1, 1, 4, 4)[:2] == (0, 3)
    assert kernels.conv_taps(3, 1, 1, 4, 4) == 10


def test_count_macs_matmul_and_conv(rng):
    with kernels.count_macs() as t:
        kernels.matmul(rng.normal(size=(2, 3)), rng.normal(size=(3, 4)))
    assert t["macs"] == 24
    with kernels.count_macs() as t:
        kernels.conv2d(np.zeros((4, 4, 2)), np.zeros((3, 3, 2, 5)), 1, 1)
    assert t["macs"] == 10 * 10 * 2 * 5


def test_parallel_map_ordered():
    kernels.set_num_threads(4)
    try:
        assert kernels.parallel_map(lambda i: i * i, range(20)) == [i * i for i in range(20)]
    finally:
        kernels.set_num_threads(1)
    with pytest.raises(ValueError):
        kernels.set_num_threads(0)
