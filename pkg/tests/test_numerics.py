import numpy as np
import pytest

import swag.numerics as nm


def fd_max_err(loss_fn, arrays, grads, eps=1e-5):
    return nm.finite_difference_check(loss_fn, arrays, grads, eps)


def test_fd_checker_self_test_on_square():
    x = np.array([1.3, -0.4, 2.0])
    grad = 2.0 * x
    err = fd_max_err(lambda a: float((a**2).sum()), [x], [grad])
    assert err < 1e-10


# ---------------------------------------------------------------- matmul

def test_matmul_identity_and_zero():
    a = np.random.default_rng(0).normal(size=(3, 4))
    assert np.allclose(nm.matmul(a, np.eye(4)), a)
    assert np.allclose(nm.matmul(a, np.zeros((4, 2))), 0.0)


def test_matmul_gradient_matches_fd():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    r = rng.normal(size=(3, 2))
    ga, gb = nm.matmul_backward(r, a, b)
    loss = lambda a_, b_: float((nm.matmul(a_, b_) * r).sum())
    assert fd_max_err(loss, [a, b], [ga, gb]) < 1e-6


# ---------------------------------------------------------------- softmax

def test_softmax_uniform_and_shift_invariance():
    p = nm.softmax(np.zeros(8))
    assert np.allclose(p, 1.0 / 8.0)
    x = np.random.default_rng(2).normal(size=10)
    drift = np.abs(nm.softmax(x) - nm.softmax(x + 123.4)).max()
    assert drift <= 1e-12
    assert nm.softmax(x).sum() == pytest.approx(1.0)
    assert (nm.softmax(x) > 0).all()


def test_softmax_gradient_matches_fd():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 6))
    r = rng.normal(size=(4, 6))
    p = nm.softmax(x)
    gx = nm.softmax_backward(r, p)
    loss = lambda x_: float((nm.softmax(x_) * r).sum())
    assert fd_max_err(loss, [x], [gx]) < 1e-6


# ---------------------------------------------------------------- layer norm

def test_layer_norm_constant_input_and_moments():
    gain = np.ones(6)
    bias = np.zeros(6)
    out, _ = nm.layer_norm(np.full(6, 3.7), gain, bias)
    assert np.abs(out).max() <= 1e-6
    x = np.random.default_rng(4).normal(size=(5, 16))
    out, _ = nm.layer_norm(x, np.ones(16), np.zeros(16))
    assert np.abs(out.mean(axis=1)).max() <= 1e-9
    # eps=1e-5 in the denominator pulls the variance just under 1
    assert np.abs(out.var(axis=1) - 1.0).max() <= 1e-4


def test_layer_norm_gradient_matches_fd():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 8))
    gain = rng.normal(size=8)
    bias = rng.normal(size=8)
    r = rng.normal(size=(3, 8))
    out, cache = nm.layer_norm(x, gain, bias)
    gx, ggain, gbias = nm.layer_norm_backward(r, cache)

    def loss(x_, gain_, bias_):
        out_, _ = nm.layer_norm(x_, gain_, bias_)
        return float((out_ * r).sum())

    assert fd_max_err(loss, [x, gain, bias], [gx, ggain, gbias]) < 1e-5


# ---------------------------------------------------------------- attention

def test_attention_single_key_returns_value_row():
    rng = np.random.default_rng(6)
    q = rng.normal(size=(1, 4))
    k = rng.normal(size=(1, 4))
    v = rng.normal(size=(1, 4))
    out, _ = nm.attention(q, k, v)
    assert np.allclose(out, v)


def test_attention_rows_are_stochastic_and_causal_mask_applies():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(5, 4))
    _, (_, _, _, probs) = nm.attention(x, x, x, causal=True)
    p = probs[0]
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.allclose(np.triu(p, k=1), 0.0)
    assert p[0, 0] == pytest.approx(1.0)


def test_attention_gradient_matches_fd():
    rng = np.random.default_rng(8)
    for causal in (False, True):
        q = rng.normal(size=(4, 3))
        k = rng.normal(size=(4, 3))
        v = rng.normal(size=(4, 3))
        r = rng.normal(size=(4, 3))
        out, cache = nm.attention(q, k, v, causal)
        gq, gk, gv = nm.attention_backward(r, cache)

        def loss(q_, k_, v_):
            out_, _ = nm.attention(q_, k_, v_, causal)
            return float((out_ * r).sum())

        assert fd_max_err(loss, [q, k, v], [gq, gk, gv]) < 1e-5


# ---------------------------------------------------------------- positional

def test_positional_encoding_at_zero_and_distinctness():
    pe = nm.sinusoidal_positional_encoding(0, 8)
    assert np.array_equal(pe, np.tile([0.0, 1.0], 4))
    vectors = [nm.sinusoidal_positional_encoding(p, 8) for p in range(20)]
    for i in range(20):
        for j in range(i + 1, 20):
            assert not np.allclose(vectors[i], vectors[j])


def test_positional_encoding_matches_closed_form():
    dim = 10
    for pos in (1, 7, 400):
        pe = nm.sinusoidal_positional_encoding(pos, dim)
        for i in range(dim // 2):
            angle = pos / 10000 ** (2 * i / dim)
            assert pe[2 * i] == pytest.approx(np.sin(angle), abs=1e-12)
            assert pe[2 * i + 1] == pytest.approx(np.cos(angle), abs=1e-12)


def test_positional_encoding_rejects_odd_dim():
    with pytest.raises(ValueError):
        nm.sinusoidal_positional_encoding(3, 7)


# ---------------------------------------------------------------- losses

def test_weighted_ce_closed_form_and_perfect_prediction():
    probs = np.full((3, 8), 1.0 / 8.0)
    targets = np.array([0, 3, 7])
    loss, _ = nm.weighted_cross_entropy(probs, targets, np.ones(8))
    assert loss == pytest.approx(np.log(8.0))
    hot = np.zeros((2, 4))
    hot[0, 1] = hot[1, 2] = 1.0
    loss, _ = nm.weighted_cross_entropy(hot, np.array([1, 2]), np.ones(4))
    assert loss <= 1e-9


def test_weighted_ce_weights_normalize():
    probs = np.array([[0.5, 0.5], [0.25, 0.75]])
    targets = np.array([0, 1])
    w = np.array([2.0, 1.0])
    loss, _ = nm.weighted_cross_entropy(probs, targets, w)
    expected = (2.0 * -np.log(0.5) + 1.0 * -np.log(0.75)) / 3.0
    assert loss == pytest.approx(expected)


def test_weighted_ce_zero_probability_flagged():
    probs = np.array([[1.0, 0.0]])
    with pytest.warns(RuntimeWarning):
        loss, _ = nm.weighted_cross_entropy(probs, np.array([1]), np.ones(2))
    assert np.isfinite(loss)


def test_weighted_ce_gradient_matches_fd():
    rng = np.random.default_rng(9)
    logits = rng.normal(size=(4, 5))
    targets = np.array([0, 2, 4, 1])
    w = np.array([1.0, 0.5, 2.0, 1.0, 1.5])
    probs = nm.softmax(logits)
    _, cache = nm.weighted_cross_entropy(probs, targets, w)
    g_probs = nm.weighted_cross_entropy_backward(cache)
    g_logits = nm.softmax_backward(g_probs, probs)

    def loss(logits_):
        value, _ = nm.weighted_cross_entropy(nm.softmax(logits_), targets, w)
        return value

    assert fd_max_err(loss, [logits], [g_logits]) < 1e-5


def test_mse_cases_and_gradient():
    x = np.array([1.0, 2.0, 3.0])
    assert nm.mse_loss(x, x)[0] == 0.0
    assert nm.mse_loss(x + 1.0, x)[0] == pytest.approx(1.0)
    rng = np.random.default_rng(10)
    pred = rng.normal(size=6)
    target = rng.normal(size=6)
    loss, diff = nm.mse_loss(pred, target)
    grad = nm.mse_loss_backward(diff)
    assert np.allclose(grad, 2.0 * (pred - target) / 6.0)
    assert fd_max_err(lambda p: nm.mse_loss(p, target)[0], [pred], [grad]) < 1e-6


# ---------------------------------------------------------------- optimizer

def test_sgd_zero_grad_is_noop():
    p = nm.Parameter("w", np.array([1.0, 2.0]))
    nm.sgd_step([p], lr=0.1)
    assert np.array_equal(p.value, [1.0, 2.0])


def test_sgd_single_step_closed_form():
    p = nm.Parameter("w", np.array([1.0]))
    p.grad[:] = 2.0 * p.value  # f(w) = w^2
    nm.sgd_step([p], lr=0.1, momentum=0.0, weight_decay=0.0)
    assert p.value[0] == pytest.approx(0.8)
    assert p.grad[0] == 0.0


def test_sgd_converges_on_quadratic():
    p = nm.Parameter("w", np.array([1.0]))
    for _ in range(200):
        p.grad[:] = 2.0 * p.value
        nm.sgd_step([p], lr=0.1, momentum=0.5)
    assert abs(p.value[0]) < 1e-3
