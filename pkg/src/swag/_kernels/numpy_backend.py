"""Reference kernel implementations on top of numpy.

Shapes follow one convention: batched 2-d rows for softmax/layer-norm,
(batch, tokens, head_dim) stacks for attention, (time, dim) blocks for the
pooling kernels. Everything is float64 in and float64 out.
"""

from __future__ import annotations

import numpy as np


def softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(grad_out: np.ndarray, probs: np.ndarray) -> np.ndarray:
    dot = (grad_out * probs).sum(axis=-1, keepdims=True)
    return probs * (grad_out - dot)


def layer_norm_rows(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    return xhat * gain + bias, xhat, inv_std.reshape(x.shape[:-1])


def layer_norm_rows_backward(grad_out, xhat, inv_std, gain):
    d = xhat.shape[-1]
    ggain = (grad_out * xhat).reshape(-1, d).sum(axis=0)
    gbias = grad_out.reshape(-1, d).sum(axis=0)
    dxhat = grad_out * gain
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    gx = inv_std[..., None] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return gx, ggain, gbias


def attention_batch(q, k, v, causal=False):
    """Scaled dot-product attention over a stack of independent blocks."""
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = np.einsum("bqd,bkd->bqk", q, k) * scale
    if causal:
        tq, tk = scores.shape[-2:]
        mask = np.arange(tk)[None, :] > np.arange(tq)[:, None]
        scores = np.where(mask[None, :, :], -np.inf, scores)
    probs = softmax_rows(scores)
    out = np.einsum("bqk,bkd->bqd", probs, v)
    return out, probs


def attention_batch_backward(grad_out, q, k, v, probs):
    scale = 1.0 / np.sqrt(q.shape[-1])
    gv = np.einsum("bqk,bqd->bkd", probs, grad_out)
    gp = np.einsum("bqd,bkd->bqk", grad_out, v)
    gs = softmax_rows_backward(gp, probs)
    gq = np.einsum("bqk,bkd->bqd", gs, k) * scale
    gk = np.einsum("bqk,bqd->bkd", gs, q) * scale
    return gq, gk, gv


def cumulative_key_pool(ep: np.ndarray, m: int):
    """Prefix max over all but the last ``m`` rows, then a running max that
    folds in one recent row per output token. Returns values and the row
    index that produced each maximum (first occurrence wins ties)."""
    length, dim = ep.shape
    if m > length:
        raise ValueError(f"cannot pool {length} rows into {m} tokens")
    split = length - m
    if split > 0:
        run_val = ep[:split].max(axis=0)
        run_idx = ep[:split].argmax(axis=0).astype(np.int64)
    else:
        run_val = np.full(dim, -np.inf)
        run_idx = np.full(dim, -1, dtype=np.int64)
    out = np.empty((m, dim))
    idx = np.empty((m, dim), dtype=np.int64)
    for j in range(m):
        row = ep[split + j]
        take = row > run_val
        run_val = np.where(take, row, run_val)
        run_idx = np.where(take, split + j, run_idx)
        out[j] = run_val
        idx[j] = run_idx
    return out, idx


def interval_pool(ep: np.ndarray, interval: int, cumulative: bool = True):
    """Max over fixed-width chunks; cumulative mode extends the right edge by
    one chunk per token while keeping the left edge at row 0."""
    length, dim = ep.shape
    if length % interval != 0:
        raise ValueError(f"{length} rows not divisible by interval {interval}")
    m = length // interval
    out = np.empty((m, dim))
    idx = np.empty((m, dim), dtype=np.int64)
    run_val = np.full(dim, -np.inf)
    run_idx = np.full(dim, -1, dtype=np.int64)
    for j in range(m):
        chunk = ep[j * interval:(j + 1) * interval]
        c_val = chunk.max(axis=0)
        c_idx = chunk.argmax(axis=0).astype(np.int64) + j * interval
        if cumulative:
            take = c_val > run_val
            run_val = np.where(take, c_val, run_val)
            run_idx = np.where(take, c_idx, run_idx)
            out[j], idx[j] = run_val, run_idx
        else:
            out[j], idx[j] = c_val, c_idx
    return out, idx


def pool_backward(grad_out: np.ndarray, idx: np.ndarray, length: int) -> np.ndarray:
    """Scatter token gradients back to the rows that won the max."""
    dim = grad_out.shape[1]
    gep = np.zeros((length, dim))
    cols = np.broadcast_to(np.arange(dim), idx.shape)
    np.add.at(gep, (idx.ravel(), cols.ravel()), grad_out.ravel())
    return gep


def transition_counts(labels: np.ndarray, n_minutes: int, num_phases: int,
                      step_seconds: int = 60, stride_seconds: int = 1) -> np.ndarray:
    """Count (class now, class in m minutes) pairs; past-the-end counts as EOS."""
    labels = np.asarray(labels, dtype=np.int64)
    t_total = labels.shape[0]
    counts = np.zeros((num_phases, num_phases + 1, n_minutes), dtype=np.int64)
    ts = np.arange(0, t_total, stride_seconds)
    current = labels[ts]
    for minute in range(1, n_minutes + 1):
        future = ts + minute * step_seconds
        in_range = future < t_total
        j = np.where(in_range, labels[np.minimum(future, t_total - 1)], num_phases)
        np.add.at(counts[:, :, minute - 1], (current, j), 1)
    return counts
