"""Backend equivalence: the compiled kernels must agree with the numpy
reference to float64 round-off, on values and on gradients."""

import numpy as np
import pytest

from swag._kernels import BACKEND_NAME, numpy_backend

try:
    from swag._kernels import _fastk
except ImportError:
    _fastk = None

needs_compiled = pytest.mark.skipif(_fastk is None, reason="compiled kernels not built")

TOL = 1e-12


def test_some_backend_selected():
    assert BACKEND_NAME in ("numpy", "compiled")


def _rand(shape, seed):
    return np.random.default_rng(seed).normal(size=shape)


@needs_compiled
def test_softmax_rows_backends_agree():
    x = _rand((7, 11), 0)
    a = numpy_backend.softmax_rows(x)
    b = _fastk.softmax_rows(x)
    assert np.abs(a - b).max() < TOL
    g = _rand((7, 11), 1)
    ga = numpy_backend.softmax_rows_backward(g, a)
    gb = _fastk.softmax_rows_backward(g, b)
    assert np.abs(ga - gb).max() < TOL


@needs_compiled
def test_layer_norm_backends_agree():
    x = _rand((5, 9), 2)
    gain = _rand(9, 3)
    bias = _rand(9, 4)
    oa, xa, ia = numpy_backend.layer_norm_rows(x, gain, bias)
    ob, xb, ib = _fastk.layer_norm_rows(x, gain, bias)
    assert np.abs(oa - ob).max() < TOL
    assert np.abs(xa - xb).max() < TOL
    assert np.abs(ia - ib).max() < TOL
    g = _rand((5, 9), 5)
    for left, right in zip(
        numpy_backend.layer_norm_rows_backward(g, xa, ia, gain),
        _fastk.layer_norm_rows_backward(g, xb, ib, gain),
    ):
        assert np.abs(left - right).max() < TOL


@needs_compiled
@pytest.mark.parametrize("causal", [False, True])
def test_attention_backends_agree(causal):
    q = _rand((3, 6, 4), 6)
    k = _rand((3, 6, 4), 7)
    v = _rand((3, 6, 4), 8)
    oa, pa = numpy_backend.attention_batch(q, k, v, causal)
    ob, pb = _fastk.attention_batch(q, k, v, causal)
    assert np.abs(oa - ob).max() < TOL
    assert np.abs(pa - pb).max() < TOL
    g = _rand((3, 6, 4), 9)
    for left, right in zip(
        numpy_backend.attention_batch_backward(g, q, k, v, pa),
        _fastk.attention_batch_backward(g, q, k, v, pb),
    ):
        assert np.abs(left - right).max() < TOL


@needs_compiled
def test_cross_attention_backends_agree():
    q = _rand((2, 5, 4), 10)
    k = _rand((2, 9, 4), 11)
    v = _rand((2, 9, 4), 12)
    oa, pa = numpy_backend.attention_batch(q, k, v, False)
    ob, pb = _fastk.attention_batch(q, k, v, False)
    assert np.abs(oa - ob).max() < TOL
    g = _rand((2, 5, 4), 13)
    for left, right in zip(
        numpy_backend.attention_batch_backward(g, q, k, v, pa),
        _fastk.attention_batch_backward(g, q, k, v, pb),
    ):
        assert np.abs(left - right).max() < TOL


@needs_compiled
def test_pooling_backends_agree():
    ep = _rand((120, 8), 14)
    for backend_pair in [
        (numpy_backend.cumulative_key_pool(ep, 7), _fastk.cumulative_key_pool(ep, 7)),
        (numpy_backend.interval_pool(ep, 60, True), _fastk.interval_pool(ep, 60, True)),
        (numpy_backend.interval_pool(ep, 60, False), _fastk.interval_pool(ep, 60, False)),
    ]:
        (va, ia), (vb, ib) = backend_pair
        assert np.array_equal(va, vb)
        assert np.array_equal(ia, ib)
        g = _rand(va.shape, 15)
        assert np.array_equal(
            numpy_backend.pool_backward(g, ia, 120), _fastk.pool_backward(g, ib, 120)
        )


@needs_compiled
def test_transition_counts_backends_agree():
    rng = np.random.default_rng(16)
    labels = rng.integers(0, 4, size=700)
    for stride in (1, 5):
        a = numpy_backend.transition_counts(labels, 3, 4, 60, stride)
        b = _fastk.transition_counts(labels, 3, 4, 60, stride)
        assert np.array_equal(a, b)


# ----------------------------------------------------------- kernel contracts

def test_key_pool_hand_trace():
    # projected values [1, 3, 2, 5], L=4, M=2: prefix max 3, then [3, 5]
    ep = np.array([[1.0], [3.0], [2.0], [5.0]])
    out, idx = numpy_backend.cumulative_key_pool(ep, 2)
    assert out.ravel().tolist() == [3.0, 5.0]
    assert idx.ravel().tolist() == [1, 3]


def test_interval_pool_hand_trace_and_final_token():
    ep = np.array([[1.0], [3.0], [2.0], [5.0]])
    out, _ = numpy_backend.interval_pool(ep, 2, cumulative=True)
    assert out.ravel().tolist() == [3.0, 5.0]
    disjoint, _ = numpy_backend.interval_pool(ep, 2, cumulative=False)
    assert disjoint.ravel().tolist() == [3.0, 5.0]
    rng = np.random.default_rng(17)
    big = rng.normal(size=(240, 6))
    kp, _ = numpy_backend.cumulative_key_pool(big, 4)
    ip, _ = numpy_backend.interval_pool(big, 60, cumulative=True)
    assert np.array_equal(kp[-1], big.max(axis=0))
    assert np.array_equal(ip[-1], big.max(axis=0))


def test_key_pool_is_monotone():
    rng = np.random.default_rng(18)
    ep = rng.normal(size=(50, 5))
    out, _ = numpy_backend.cumulative_key_pool(ep, 9)
    assert np.all(np.diff(out, axis=0) >= 0.0)
    iv, _ = numpy_backend.interval_pool(rng.normal(size=(300, 5)), 60, cumulative=True)
    assert np.all(np.diff(iv, axis=0) >= 0.0)


def test_pool_backward_routes_to_argmax():
    ep = np.array([[1.0], [3.0], [2.0], [5.0]])
    out, idx = numpy_backend.cumulative_key_pool(ep, 2)
    g = np.array([[10.0], [100.0]])
    gep = numpy_backend.pool_backward(g, idx, 4)
    assert gep.ravel().tolist() == [0.0, 10.0, 0.0, 100.0]
