"""The numba and numpy backends must agree on every kernel."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from v2xsim import _accel, kernels

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


def both(fn, *args):
    prev = _accel.set_backend("numba")
    try:
        a = fn(*args)
        _accel.set_backend("numpy")
        b = fn(*args)
    finally:
        _accel.set_backend(prev)
    return a, b


@given(st.integers(0, 2**32 - 1), st.floats(0.2, 3.0))
def test_separable_filter_agrees(seed, sigma):
    rng = np.random.default_rng(seed)
    plane = rng.random((int(rng.integers(1, 15)), int(rng.integers(1, 15))))
    a, b = both(kernels.separable_filter, plane, kernels.gaussian_kernel1d(sigma))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_warp_gather_agrees(seed):
    rng = np.random.default_rng(seed)
    h, w = int(rng.integers(1, 12)), int(rng.integers(1, 12))
    v = rng.random((h, w, 3))
    dx = rng.integers(-5, 6, (h, w))
    dy = rng.integers(-5, 6, (h, w))
    a, b = both(kernels.warp_gather, v, dx, dy)
    np.testing.assert_array_equal(a, b)


@given(st.integers(0, 2**32 - 1))
def test_warp_bilinear_agrees(seed):
    rng = np.random.default_rng(seed)
    h, w = int(rng.integers(1, 12)), int(rng.integers(1, 12))
    v = rng.random((h, w, 2))
    dx = rng.uniform(-4, 4, (h, w))
    dy = rng.uniform(-4, 4, (h, w))
    a, b = both(kernels.warp_bilinear, v, dx, dy)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 4]))
def test_fuse_attention_agrees(seed, heads):
    rng = np.random.default_rng(seed)
    s, h, w, d = int(rng.integers(1, 4)), 3, 4, 8
    feats = rng.normal(size=(s, h, w, d))
    confs = rng.random((s, h, w))
    confs[:, 0, 0] = 0.0  # zero total weight falls back to the ego feature
    avail = rng.random((s, h, w)) > 0.3
    avail[0] = True
    a, b = both(kernels.fuse_attention, feats, confs, avail, heads)
    np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
    np.testing.assert_array_equal(a[0, 0], feats[0, 0, 0])


@given(st.integers(0, 2**32 - 1))
def test_boxes_to_cells_agrees(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(0, 5))
    boxes = np.column_stack([rng.uniform(-2, 12, n), rng.uniform(-2, 8, n), rng.uniform(0.3, 5, n),
                             rng.uniform(0.3, 3, n), rng.uniform(-np.pi, np.pi, n)])
    a, b = both(kernels.boxes_to_cells, 20, 24, 0.5, 0.0, 0.0, boxes)
    np.testing.assert_array_equal(a, b)


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        _accel.set_backend("cuda")
