# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; same contracts as numpy_backend, fused inner loops."""

import numpy as np

cimport cython
from libc.math cimport exp, log, sqrt, INFINITY


def softmax_rows(x):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t rows = xv.shape[0], cols = xv.shape[1], i, j
    out_arr = np.empty((rows, cols))
    cdef double[:, ::1] out = out_arr
    cdef double m, s
    for i in range(rows):
        m = xv[i, 0]
        for j in range(1, cols):
            if xv[i, j] > m:
                m = xv[i, j]
        s = 0.0
        for j in range(cols):
            out[i, j] = exp(xv[i, j] - m)
            s += out[i, j]
        for j in range(cols):
            out[i, j] /= s
    return out_arr


def softmax_rows_backward(grad_out, probs):
    cdef const double[:, ::1] g = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef const double[:, ::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t rows = g.shape[0], cols = g.shape[1], i, j
    gx_arr = np.empty((rows, cols))
    cdef double[:, ::1] gx = gx_arr
    cdef double dot
    for i in range(rows):
        dot = 0.0
        for j in range(cols):
            dot += g[i, j] * p[i, j]
        for j in range(cols):
            gx[i, j] = p[i, j] * (g[i, j] - dot)
    return gx_arr


def layer_norm_rows(x, gain, bias, double eps=1e-5):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] gv = np.ascontiguousarray(gain, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(bias, dtype=np.float64)
    cdef Py_ssize_t rows = xv.shape[0], cols = xv.shape[1], i, j
    out_arr = np.empty((rows, cols))
    xhat_arr = np.empty((rows, cols))
    inv_arr = np.empty(rows)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] inv = inv_arr
    cdef double mu, var, d, istd
    for i in range(rows):
        mu = 0.0
        for j in range(cols):
            mu += xv[i, j]
        mu /= cols
        var = 0.0
        for j in range(cols):
            d = xv[i, j] - mu
            var += d * d
        var /= cols
        istd = 1.0 / sqrt(var + eps)
        inv[i] = istd
        for j in range(cols):
            xhat[i, j] = (xv[i, j] - mu) * istd
            out[i, j] = xhat[i, j] * gv[j] + bv[j]
    return out_arr, xhat_arr, inv_arr


def layer_norm_rows_backward(grad_out, xhat, inv_std, gain):
    cdef const double[:, ::1] g = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef const double[:, ::1] xh = np.ascontiguousarray(xhat, dtype=np.float64)
    cdef const double[::1] inv = np.ascontiguousarray(inv_std, dtype=np.float64)
    cdef const double[::1] gv = np.ascontiguousarray(gain, dtype=np.float64)
    cdef Py_ssize_t rows = g.shape[0], cols = g.shape[1], i, j
    gx_arr = np.empty((rows, cols))
    ggain_arr = np.zeros(cols)
    gbias_arr = np.zeros(cols)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] ggain = ggain_arr
    cdef double[::1] gbias = gbias_arr
    cdef double m1, m2, dxh
    for i in range(rows):
        m1 = 0.0
        m2 = 0.0
        for j in range(cols):
            ggain[j] += g[i, j] * xh[i, j]
            gbias[j] += g[i, j]
            dxh = g[i, j] * gv[j]
            m1 += dxh
            m2 += dxh * xh[i, j]
        m1 /= cols
        m2 /= cols
        for j in range(cols):
            gx[i, j] = inv[i] * (g[i, j] * gv[j] - m1 - xh[i, j] * m2)
    return gx_arr, ggain_arr, gbias_arr


def attention_batch(q, k, v, bint causal=False):
    cdef const double[:, :, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const double[:, :, ::1] kv = np.ascontiguousarray(k, dtype=np.float64)
    cdef const double[:, :, ::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t nb = qv.shape[0], tq = qv.shape[1], dh = qv.shape[2]
    cdef Py_ssize_t tk = kv.shape[1]
    cdef Py_ssize_t b, i, j, c, limit
    out_arr = np.empty((nb, tq, dh))
    probs_arr = np.zeros((nb, tq, tk))
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, :, ::1] probs = probs_arr
    cdef double scale = 1.0 / sqrt(<double>dh)
    cdef double m, s, acc
    for b in range(nb):
        for i in range(tq):
            limit = tk
            if causal and i + 1 < tk:
                limit = i + 1
            m = -INFINITY
            for j in range(limit):
                acc = 0.0
                for c in range(dh):
                    acc += qv[b, i, c] * kv[b, j, c]
                acc *= scale
                probs[b, i, j] = acc
                if acc > m:
                    m = acc
            s = 0.0
            for j in range(limit):
                probs[b, i, j] = exp(probs[b, i, j] - m)
                s += probs[b, i, j]
            for j in range(limit):
                probs[b, i, j] /= s
            for c in range(dh):
                acc = 0.0
                for j in range(limit):
                    acc += probs[b, i, j] * vv[b, j, c]
                out[b, i, c] = acc
    return out_arr, probs_arr


def attention_batch_backward(grad_out, q, k, v, probs):
    cdef const double[:, :, ::1] g = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef const double[:, :, ::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef const double[:, :, ::1] kv = np.ascontiguousarray(k, dtype=np.float64)
    cdef const double[:, :, ::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef const double[:, :, ::1] p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef Py_ssize_t nb = qv.shape[0], tq = qv.shape[1], dh = qv.shape[2]
    cdef Py_ssize_t tk = kv.shape[1]
    cdef Py_ssize_t b, i, j, c
    gq_arr = np.zeros((nb, tq, dh))
    gk_arr = np.zeros((nb, tk, dh))
    gv_arr = np.zeros((nb, tk, dh))
    cdef double[:, :, ::1] gq = gq_arr
    cdef double[:, :, ::1] gk = gk_arr
    cdef double[:, :, ::1] gvv = gv_arr
    cdef double scale = 1.0 / sqrt(<double>dh)
    cdef double dot, gp, gs
    for b in range(nb):
        for i in range(tq):
            dot = 0.0
            for j in range(tk):
                if p[b, i, j] != 0.0:
                    gp = 0.0
                    for c in range(dh):
                        gp += g[b, i, c] * vv[b, j, c]
                    dot += gp * p[b, i, j]
            for j in range(tk):
                if p[b, i, j] == 0.0:
                    continue
                gp = 0.0
                for c in range(dh):
                    gp += g[b, i, c] * vv[b, j, c]
                    gvv[b, j, c] += p[b, i, j] * g[b, i, c]
                gs = p[b, i, j] * (gp - dot)
                for c in range(dh):
                    gq[b, i, c] += gs * kv[b, j, c] * scale
                    gk[b, j, c] += gs * qv[b, i, c] * scale
    return gq_arr, gk_arr, gv_arr


def cumulative_key_pool(ep, Py_ssize_t m):
    cdef const double[:, ::1] e = np.ascontiguousarray(ep, dtype=np.float64)
    cdef Py_ssize_t length = e.shape[0], dim = e.shape[1]
    if m > length:
        raise ValueError(f"cannot pool {length} rows into {m} tokens")
    cdef Py_ssize_t split = length - m
    out_arr = np.empty((m, dim))
    idx_arr = np.empty((m, dim), dtype=np.int64)
    run_val_arr = np.full(dim, -np.inf)
    run_idx_arr = np.full(dim, -1, dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef long long[:, ::1] idx = idx_arr
    cdef double[::1] run_val = run_val_arr
    cdef long long[::1] run_idx = run_idx_arr
    cdef Py_ssize_t r, c, j
    for r in range(split):
        for c in range(dim):
            if e[r, c] > run_val[c]:
                run_val[c] = e[r, c]
                run_idx[c] = r
    for j in range(m):
        r = split + j
        for c in range(dim):
            if e[r, c] > run_val[c]:
                run_val[c] = e[r, c]
                run_idx[c] = r
            out[j, c] = run_val[c]
            idx[j, c] = run_idx[c]
    return out_arr, idx_arr


def interval_pool(ep, Py_ssize_t interval, bint cumulative=True):
    cdef const double[:, ::1] e = np.ascontiguousarray(ep, dtype=np.float64)
    cdef Py_ssize_t length = e.shape[0], dim = e.shape[1]
    if length % interval != 0:
        raise ValueError(f"{length} rows not divisible by interval {interval}")
    cdef Py_ssize_t m = length // interval
    out_arr = np.empty((m, dim))
    idx_arr = np.empty((m, dim), dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef long long[:, ::1] idx = idx_arr
    run_val_arr = np.full(dim, -np.inf)
    run_idx_arr = np.full(dim, -1, dtype=np.int64)
    cdef double[::1] run_val = run_val_arr
    cdef long long[::1] run_idx = run_idx_arr
    cdef Py_ssize_t j, r, c, start
    for j in range(m):
        start = j * interval
        if not cumulative:
            for c in range(dim):
                run_val[c] = -INFINITY
                run_idx[c] = -1
        for r in range(start, start + interval):
            for c in range(dim):
                if e[r, c] > run_val[c]:
                    run_val[c] = e[r, c]
                    run_idx[c] = r
        for c in range(dim):
            out[j, c] = run_val[c]
            idx[j, c] = run_idx[c]
    return out_arr, idx_arr


def pool_backward(grad_out, idx, Py_ssize_t length):
    cdef const double[:, ::1] g = np.ascontiguousarray(grad_out, dtype=np.float64)
    cdef const long long[:, ::1] iv = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t m = g.shape[0], dim = g.shape[1], j, c
    gep_arr = np.zeros((length, dim))
    cdef double[:, ::1] gep = gep_arr
    for j in range(m):
        for c in range(dim):
            if iv[j, c] >= 0:
                gep[iv[j, c], c] += g[j, c]
    return gep_arr


def transition_counts(labels, Py_ssize_t n_minutes, Py_ssize_t num_phases,
                      Py_ssize_t step_seconds=60, Py_ssize_t stride_seconds=1):
    cdef const long long[::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t t_total = lab.shape[0], t, minute, s
    counts_arr = np.zeros((num_phases, num_phases + 1, n_minutes), dtype=np.int64)
    cdef long long[:, :, ::1] counts = counts_arr
    cdef long long i, j
    for t in range(0, t_total, stride_seconds):
        i = lab[t]
        for minute in range(1, n_minutes + 1):
            s = t + minute * step_seconds
            if s < t_total:
                j = lab[s]
            else:
                j = num_phases
            counts[i, j, minute - 1] += 1
    return counts_arr
