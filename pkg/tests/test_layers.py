"""Convolution/pooling forward ops against naive reference implementations."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grasptrace.errors import ConfigurationError
from grasptrace.layers import (CONV, MAXPOOL, LayerSpec, conv_forward,
                               downsample_mask, maxpool_forward, nonzero_bounds)


def naive_conv(x, weights, bias, stride, padding):
    """Direct six-loop convolution + ReLU; the oracle for conv_forward."""
    c_in, h, w = x.shape
    c_out, _, k, _ = weights.shape
    xp = np.zeros((c_in, h + 2 * padding, w + 2 * padding))
    xp[:, padding:padding + h, padding:padding + w] = x
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, oh, ow))
    for o in range(c_out):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for c in range(c_in):
                    for ky in range(k):
                        for kx in range(k):
                            acc += (xp[c, i * stride + ky, j * stride + kx]
                                    * weights[o, c, ky, kx])
                if bias is not None:
                    acc += bias[o]
                out[o, i, j] = max(acc, 0.0)
    return out


def naive_pool(x, kernel, stride):
    """Window-scan max pooling; the oracle for maxpool_forward."""
    c, h, w = x.shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    out = np.zeros((c, oh, ow))
    for ch in range(c):
        for i in range(oh):
            for j in range(ow):
                out[ch, i, j] = x[ch, i * stride:i * stride + kernel,
                                  j * stride:j * stride + kernel].max()
    return out


@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4),
       st.integers(1, 2), st.integers(0, 2), st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_conv_matches_naive(c_in, c_out, kernel, stride, padding, seed):
    rng = np.random.default_rng(seed)
    h = int(rng.integers(kernel, kernel + 6))
    w = int(rng.integers(kernel, kernel + 6))
    x = rng.normal(size=(c_in, h, w))
    weights = rng.normal(size=(c_out, c_in, kernel, kernel))
    bias = rng.normal(size=c_out)
    spec = LayerSpec(CONV, kernel=kernel, stride=stride, padding=padding,
                     out_channels=c_out)
    got = conv_forward(x, weights, bias, spec)
    want = naive_conv(x, weights, bias, stride, padding)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_conv_no_bias():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(2, 6, 6))
    weights = rng.normal(size=(3, 2, 3, 3))
    spec = LayerSpec(CONV, kernel=3, out_channels=3, bias=False)
    got = conv_forward(x, weights, None, spec)
    np.testing.assert_allclose(got, naive_conv(x, weights, None, 1, 0),
                               rtol=1e-12, atol=1e-12)


def test_conv_output_nonnegative():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(3, 9, 9))
    weights = rng.normal(size=(4, 3, 3, 3))
    spec = LayerSpec(CONV, kernel=3, out_channels=4, padding=1)
    out = conv_forward(x, weights, rng.normal(size=4) - 5.0, spec)
    assert (out >= 0.0).all()


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3),
       st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_pool_matches_naive(c, kernel, stride, seed):
    rng = np.random.default_rng(seed)
    h = int(rng.integers(kernel, kernel + 6))
    w = int(rng.integers(kernel, kernel + 6))
    x = rng.normal(size=(c, h, w))
    spec = LayerSpec(MAXPOOL, kernel=kernel, stride=stride)
    got, argmax = maxpool_forward(x, spec)
    want = naive_pool(x, kernel, stride)
    np.testing.assert_array_equal(got, want)
    # The recorded winner must reproduce the pooled value exactly.
    flat = x.reshape(c, -1)
    for ch in range(c):
        np.testing.assert_array_equal(flat[ch][argmax[ch]], got[ch])


def test_pool_tie_breaks_to_first_in_row_major_order():
    x = np.ones((1, 2, 2))
    spec = LayerSpec(MAXPOOL, kernel=2, stride=2)
    _, argmax = maxpool_forward(x, spec)
    assert argmax[0, 0, 0] == 0


def test_pool_window_larger_than_input_rejected():
    spec = LayerSpec(MAXPOOL, kernel=4, stride=2)
    with pytest.raises(ConfigurationError):
        maxpool_forward(np.ones((1, 3, 3)), spec)


def test_layer_spec_validation():
    with pytest.raises(ConfigurationError):
        LayerSpec("avgpool", kernel=2)
    with pytest.raises(ConfigurationError):
        LayerSpec(CONV, kernel=0, out_channels=1)
    with pytest.raises(ConfigurationError):
        LayerSpec(CONV, kernel=3, out_channels=0)
    with pytest.raises(ConfigurationError):
        LayerSpec(MAXPOOL, kernel=2, padding=1)


def test_out_hw_formula():
    spec = LayerSpec(CONV, kernel=5, stride=1, padding=2, out_channels=8)
    assert spec.out_hw((227, 227)) == (227, 227)
    pool = LayerSpec(MAXPOOL, kernel=2, stride=2)
    assert pool.out_hw((226, 226)) == (113, 113)
    assert pool.out_hw((227, 227)) == (113, 113)


def naive_downsample_mask(mask, kernel, stride, padding):
    h, w = mask.shape
    mp = np.zeros((h + 2 * padding, w + 2 * padding), dtype=bool)
    mp[padding:padding + h, padding:padding + w] = mask
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    out = np.zeros((oh, ow), dtype=bool)
    for i in range(oh):
        for j in range(ow):
            out[i, j] = mp[i * stride:i * stride + kernel,
                           j * stride:j * stride + kernel].any()
    return out


@given(st.integers(1, 4), st.integers(1, 2), st.integers(0, 2),
       st.integers(0, 2**32 - 1))
@settings(max_examples=60, deadline=None)
def test_downsample_mask_is_window_any(kernel, stride, padding, seed):
    rng = np.random.default_rng(seed)
    h = int(rng.integers(kernel, kernel + 8))
    w = int(rng.integers(kernel, kernel + 8))
    mask = rng.random((h, w)) < 0.3
    spec = LayerSpec(CONV, kernel=kernel, stride=stride, padding=padding,
                     out_channels=1)
    got = downsample_mask(mask, spec)
    np.testing.assert_array_equal(got, naive_downsample_mask(
        mask, kernel, stride, padding))


def test_downsample_mask_all_and_none():
    spec = LayerSpec(CONV, kernel=3, stride=2, padding=1, out_channels=1)
    full = downsample_mask(np.ones((9, 9), dtype=bool), spec)
    empty = downsample_mask(np.zeros((9, 9), dtype=bool), spec)
    assert full.all() and not empty.any()


def test_nonzero_bounds():
    x = np.zeros((2, 5, 5))
    assert nonzero_bounds(x) is None
    x[1, 2, 3] = 1.0
    assert nonzero_bounds(x) == (2, 2, 3, 3)
    x[0, 4, 1] = -2.0
    assert nonzero_bounds(x) == (2, 4, 1, 3)
