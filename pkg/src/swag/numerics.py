"""Dense math blocks with hand-written reverse-mode gradients.

Each forward returns everything its backward needs; there is no tape. All
arrays are float64 C-contiguous (matrices are plain numpy arrays, row-major).
Every backward here is covered by ``finite_difference_check`` in the tests.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K


@dataclass
class Parameter:
    """A learned tensor and its gradient accumulator."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    momentum: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.momentum = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad.fill(0.0)


# ---------------------------------------------------------------------------
# elementary ops


def matmul(a, b):
    return a @ b


def matmul_backward(grad_out, a, b):
    return grad_out @ b.T, a.T @ grad_out


def add(a, b):
    return a + b


def add_backward(grad_out):
    return grad_out, grad_out


def scale(a, s: float):
    return a * s


def scale_backward(grad_out, a, s: float):
    return grad_out * s, float((grad_out * a).sum())


def relu(x):
    return np.maximum(x, 0.0)


def relu_backward(grad_out, x):
    return grad_out * (x > 0.0)


def softmax(logits):
    """Row softmax (1-d input treated as a single row)."""
    x = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    p = K.softmax_rows(x)
    return p[0] if np.ndim(logits) == 1 else p


def softmax_backward(grad_out, probs):
    g = np.atleast_2d(grad_out)
    p = np.atleast_2d(probs)
    gx = K.softmax_rows_backward(g, p)
    return gx[0] if np.ndim(probs) == 1 else gx


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize each row to zero mean, unit variance, then affine."""
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out, xhat, inv_std = K.layer_norm_rows(x2, gain, bias, eps)
    cache = (xhat, inv_std, gain)
    return (out[0] if np.ndim(x) == 1 else out), cache


def layer_norm_backward(grad_out, cache):
    xhat, inv_std, gain = cache
    g = np.atleast_2d(grad_out)
    gx, ggain, gbias = K.layer_norm_rows_backward(g, xhat, inv_std, gain)
    if np.ndim(grad_out) == 1:
        gx = gx[0]
    return gx, ggain, gbias


def attention(q, k, v, causal=False):
    """Single-block scaled dot-product attention (2-d inputs)."""
    qb, kb, vb = q[None], k[None], v[None]
    out, probs = K.attention_batch(qb, kb, vb, causal)
    return out[0], (qb, kb, vb, probs)


def attention_backward(grad_out, cache):
    qb, kb, vb, probs = cache
    gq, gk, gv = K.attention_batch_backward(grad_out[None], qb, kb, vb, probs)
    return gq[0], gk[0], gv[0]


def sinusoidal_positional_encoding(position: int, dim: int) -> np.ndarray:
    """Interleaved sin/cos encoding; position 0 maps to [0, 1, 0, 1, ...]."""
    if dim % 2 != 0:
        raise ValueError(f"encoding dimension must be even, got {dim}")
    half = np.arange(dim // 2)
    angles = position / np.power(10000.0, 2.0 * half / dim)
    out = np.empty(dim)
    out[0::2] = np.sin(angles)
    out[1::2] = np.cos(angles)
    return out


def positional_encoding_table(positions, dim: int) -> np.ndarray:
    return np.stack([sinusoidal_positional_encoding(int(p), dim) for p in positions])


# ---------------------------------------------------------------------------
# losses

PROB_FLOOR = 1e-12


def weighted_cross_entropy(probs, targets, class_weights):
    """Mean of -w[target] * log p[target], normalized by the mean weight.

    Probabilities at the target are clamped at 1e-12; clamping is surfaced as
    a RuntimeWarning because it signals a saturated softmax upstream.
    """
    probs = np.atleast_2d(probs)
    targets = np.asarray(targets, dtype=np.int64)
    w = np.asarray(class_weights, dtype=np.float64)[targets]
    picked = probs[np.arange(len(targets)), targets]
    if (picked < PROB_FLOOR).any():
        warnings.warn("cross-entropy clamping zero probability at target", RuntimeWarning)
        picked = np.maximum(picked, PROB_FLOOR)
    total_w = w.sum()
    loss = float(-(w * np.log(picked)).sum() / total_w)
    return loss, (probs, targets, w, picked, total_w)


def weighted_cross_entropy_backward(cache):
    probs, targets, w, picked, total_w = cache
    grad = np.zeros_like(probs)
    grad[np.arange(len(targets)), targets] = -w / (picked * total_w)
    return grad


def mse_loss(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    diff = pred - np.asarray(target, dtype=np.float64)
    return float((diff**2).mean()), diff


def mse_loss_backward(diff):
    return 2.0 * diff / diff.size


# ---------------------------------------------------------------------------
# optimization


def sgd_step(params, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
    """Classic momentum SGD; zeroes every gradient afterwards."""
    for p in params:
        g = p.grad
        if weight_decay:
            g = g + weight_decay * p.value
        p.momentum *= momentum
        p.momentum += g
        p.value -= lr * p.momentum
        p.zero_grad()


# ---------------------------------------------------------------------------
# verification


def finite_difference_check(loss_fn, arrays, analytic_grads, eps: float = 1e-5,
                            atol: float = 1e-8) -> float:
    """Max elementwise relative error between central differences of
    ``loss_fn(*arrays)`` and the supplied analytic gradients.

    The relative error denominator is max(|numeric|, |analytic|, 1e-8).
    Differences below ``atol`` count as exact: central differences carry
    round-off of order u*|loss|/eps (~5e-11 here), so smaller absolute
    discrepancies are below the checker's own resolution (this matters for
    parameters whose true gradient is exactly zero, e.g. attention key
    biases, which cancel in the row softmax).
    ``arrays`` are perturbed in place and restored.
    """
    worst = 0.0
    for arr, grad in zip(arrays, analytic_grads):
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn(*arrays)
            flat[i] = orig - eps
            down = loss_fn(*arrays)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            diff = abs(numeric - gflat[i])
            if diff <= atol:
                continue
            denom = max(abs(numeric), abs(gflat[i]), 1e-8)
            worst = max(worst, diff / denom)
    return worst
