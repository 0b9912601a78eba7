"""Recognition + anticipation model and its training loop.

The architecture, front to back: a windowed self-attention encoder over the
last L seconds of features, a linear compression to a small pooled space, a
cumulative key-pooling bottleneck feeding the recognition head, and a
transformer decoder that either emits all N future tokens in one pass
(optionally conditioned on transition priors via the token initialization) or
generates them one minute at a time under a causal mask. A regression variant
decodes a single token into per-class remaining times; ``regression_to_classes``
maps those back onto a future label sequence.

Gradients are hand-written per block; training is single-threaded and fully
determined by (dataset, config, seed).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as K
from . import numerics as nm
from .core import (
    Dataset,
    FeatureSequence,
    HorizonGrid,
    LabeledSequence,
    ground_truth_future,
    ground_truth_remaining_times,
    num_classes,
)
from .priors import TransitionPriorTensor, extract_transition_priors, prior_probability_vectors

MODEL_MAGIC = b"SWAGM1\x00\x00"

DECODE_MODES = ("sp", "sp_star", "ar")
TASKS = ("classification", "regression")


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


class TrainingDivergenceError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class SwagConfig:
    num_phases: int = 7
    feature_dim: int = 16
    context_seconds: int = 1440
    window_width: int = 20
    context_tokens: int = 24
    pooled_dim: int = 32
    model_dim: int = 64
    num_heads: int = 2
    decoder_layers: int = 2
    ffn_mult: int = 2
    horizon_minutes: int = 20
    decode_mode: str = "sp"
    task: str = "classification"
    prior_scale: float = 1.0
    interval_pool_cumulative: bool = True
    lr: float = 3e-4
    momentum: float = 0.9
    weight_decay: float = 1e-5
    epochs: int = 20
    val_every: int = 1
    seed: int = 0
    class_weights: str = "uniform"
    eos_cap_minutes: int = 4

    def __post_init__(self):
        if self.decode_mode not in DECODE_MODES:
            raise ValueError(f"decode_mode must be one of {DECODE_MODES}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.task == "regression" and self.decode_mode == "ar":
            raise ValueError("remaining-time regression uses the single-pass decoder")
        if self.context_seconds % self.window_width != 0:
            raise ValueError("context_seconds must be divisible by window_width")
        if self.context_tokens > self.context_seconds:
            raise ValueError("more context tokens than context seconds")
        if self.decode_mode == "ar" and self.context_seconds != self.context_tokens * 60:
            raise ValueError("interval pooling needs context_seconds == context_tokens * 60")
        if self.model_dim % self.num_heads != 0 or self.model_dim % 2 != 0:
            raise ValueError("model_dim must be even and divisible by num_heads")
        if self.prior_scale < 0:
            raise ValueError("prior_scale must be >= 0")
        if self.horizon_minutes < 0:
            raise ValueError("horizon must be >= 0")
        if self.class_weights not in ("uniform", "balanced"):
            raise ValueError("class_weights must be 'uniform' or 'balanced'")

    @property
    def alpha(self) -> float:
        """Prior-embedding scale; plain single-pass decoding pins it to 0."""
        return self.prior_scale if self.decode_mode == "sp_star" else 0.0

    @property
    def grid(self) -> HorizonGrid:
        return HorizonGrid(self.horizon_minutes)

    @property
    def classes_with_eos(self) -> int:
        return num_classes(self.num_phases)


@dataclass
class AnticipationOutput:
    """One inference result: recognition plus either future class
    distributions (classification) or per-class remaining minutes."""

    recognized_probs: np.ndarray
    recognized_class: int
    future_probs: np.ndarray | None = None
    remaining_times: np.ndarray | None = None
    decoder_passes: int = 0
    horizon_minutes: int = 0

    def __post_init__(self):
        if not np.allclose(self.recognized_probs.sum(axis=1), 1.0, atol=1e-6):
            raise ValueError("recognition rows must sum to 1")
        if self.future_probs is not None and self.future_probs.size:
            if not np.allclose(self.future_probs.sum(axis=1), 1.0, atol=1e-6):
                raise ValueError("future probability rows must sum to 1")
        if self.remaining_times is not None:
            if self.remaining_times.min(initial=0.0) < 0 or \
               self.remaining_times.max(initial=0.0) > self.horizon_minutes:
                raise ValueError("remaining times must lie in [0, horizon]")

    @property
    def future_classes(self) -> np.ndarray:
        if self.future_probs is None:
            raise ValueError("no class sequence on a regression output; use regression_to_classes")
        return self.future_probs.argmax(axis=1).astype(np.int64)


# ---------------------------------------------------------------------------
# layers


class _Registry:
    """Creates parameters in declaration order (the checkpoint layout)."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(np.random.SeedSequence([0xA11, seed]))
        self.params: list[nm.Parameter] = []

    def _add(self, name, value):
        p = nm.Parameter(name, value)
        self.params.append(p)
        return p

    def xavier(self, name, shape, fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self._add(name, self.rng.uniform(-limit, limit, size=shape))

    def zeros(self, name, shape):
        return self._add(name, np.zeros(shape))

    def ones(self, name, shape):
        return self._add(name, np.ones(shape))


class _Linear:
    def __init__(self, reg, name, din, dout):
        self.w = reg.xavier(f"{name}.w", (din, dout), din, dout)
        self.b = reg.zeros(f"{name}.b", (dout,))

    def forward(self, x):
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, g):
        self.w.grad += self._x.T @ g
        self.b.grad += g.sum(axis=0)
        return g @ self.w.value.T


class _LayerNorm:
    def __init__(self, reg, name, dim):
        self.gain = reg.ones(f"{name}.gain", (dim,))
        self.bias = reg.zeros(f"{name}.bias", (dim,))

    def forward(self, x):
        out, self._cache = nm.layer_norm(x, self.gain.value, self.bias.value)
        return out

    def backward(self, g):
        gx, ggain, gbias = nm.layer_norm_backward(g, self._cache)
        self.gain.grad += ggain
        self.bias.grad += gbias
        return gx


class _MultiHeadAttention:
    """Attention between a query sequence and a key/value sequence, split
    into heads and dispatched to the batched kernel."""

    def __init__(self, reg, name, dim, heads, causal=False):
        self.dim, self.heads, self.causal = dim, heads, causal
        self.head_dim = dim // heads
        self.wq = _Linear(reg, f"{name}.wq", dim, dim)
        self.wk = _Linear(reg, f"{name}.wk", dim, dim)
        self.wv = _Linear(reg, f"{name}.wv", dim, dim)
        self.wo = _Linear(reg, f"{name}.wo", dim, dim)
        self.last_probs = None

    def _split(self, x):
        t = x.shape[0]
        return np.ascontiguousarray(x.reshape(t, self.heads, self.head_dim).transpose(1, 0, 2))

    def _merge(self, xb):
        t = xb.shape[1]
        return np.ascontiguousarray(xb.transpose(1, 0, 2)).reshape(t, self.dim)

    def forward(self, xq, xkv):
        q, k, v = self.wq.forward(xq), self.wk.forward(xkv), self.wv.forward(xkv)
        qb, kb, vb = self._split(q), self._split(k), self._split(v)
        out, probs = K.attention_batch(qb, kb, vb, self.causal)
        self._cache = (qb, kb, vb, probs)
        self.last_probs = probs
        return self.wo.forward(self._merge(out))

    def backward(self, g):
        gmerged = self.wo.backward(g)
        gout = self._split(gmerged)
        qb, kb, vb, probs = self._cache
        gq, gk, gv = K.attention_batch_backward(gout, qb, kb, vb, probs)
        gxq = self.wq.backward(self._merge(gq))
        gxkv = self.wk.backward(self._merge(gk)) + self.wv.backward(self._merge(gv))
        return gxq, gxkv


class _WindowedSelfAttention:
    """Self-attention inside fixed non-overlapping windows; frames in
    different windows never interact."""

    def __init__(self, reg, name, dim, heads, window):
        self.dim, self.heads, self.window = dim, heads, window
        self.head_dim = dim // heads
        self.wq = _Linear(reg, f"{name}.wq", dim, dim)
        self.wk = _Linear(reg, f"{name}.wk", dim, dim)
        self.wv = _Linear(reg, f"{name}.wv", dim, dim)
        self.wo = _Linear(reg, f"{name}.wo", dim, dim)
        self.last_probs = None

    def _split(self, x, length):
        nw = length // self.window
        blocks = x.reshape(nw, self.window, self.heads, self.head_dim)
        return np.ascontiguousarray(blocks.transpose(0, 2, 1, 3)).reshape(
            nw * self.heads, self.window, self.head_dim
        )

    def _merge(self, xb, length):
        nw = length // self.window
        blocks = xb.reshape(nw, self.heads, self.window, self.head_dim)
        return np.ascontiguousarray(blocks.transpose(0, 2, 1, 3)).reshape(length, self.dim)

    def forward(self, x):
        length = x.shape[0]
        if length % self.window != 0:
            raise ValueError(f"sequence length {length} not divisible by window {self.window}")
        q, k, v = self.wq.forward(x), self.wk.forward(x), self.wv.forward(x)
        qb, kb, vb = (self._split(a, length) for a in (q, k, v))
        out, probs = K.attention_batch(qb, kb, vb, False)
        self._cache = (qb, kb, vb, probs, length)
        self.last_probs = probs
        return self.wo.forward(self._merge(out, length))

    def backward(self, g):
        qb, kb, vb, probs, length = self._cache
        gout = self._split(self.wo.backward(g), length)
        gq, gk, gv = K.attention_batch_backward(gout, qb, kb, vb, probs)
        gx = self.wq.backward(self._merge(gq, length))
        gx += self.wk.backward(self._merge(gk, length))
        gx += self.wv.backward(self._merge(gv, length))
        return gx


class _FeedForward:
    def __init__(self, reg, name, dim, mult):
        self.lin1 = _Linear(reg, f"{name}.lin1", dim, mult * dim)
        self.lin2 = _Linear(reg, f"{name}.lin2", mult * dim, dim)

    def forward(self, x):
        self._h = self.lin1.forward(x)
        return self.lin2.forward(nm.relu(self._h))

    def backward(self, g):
        ga = self.lin2.backward(g)
        return self.lin1.backward(nm.relu_backward(ga, self._h))


class _DecoderLayer:
    """Post-norm transformer block; cross-attention is optional (the
    auto-regressive stack is self-attention only)."""

    def __init__(self, reg, name, dim, heads, mult, cross, causal):
        self.self_attn = _MultiHeadAttention(reg, f"{name}.self", dim, heads, causal)
        self.ln1 = _LayerNorm(reg, f"{name}.ln1", dim)
        self.cross_attn = _MultiHeadAttention(reg, f"{name}.cross", dim, heads) if cross else None
        self.ln2 = _LayerNorm(reg, f"{name}.ln2", dim) if cross else None
        self.ffn = _FeedForward(reg, f"{name}.ffn", dim, mult)
        self.ln3 = _LayerNorm(reg, f"{name}.ln3", dim)

    def forward(self, x, kv=None):
        a = self.self_attn.forward(x, x)
        x = self.ln1.forward(x + a)
        if self.cross_attn is not None:
            a2 = self.cross_attn.forward(x, kv)
            x = self.ln2.forward(x + a2)
        f = self.ffn.forward(x)
        return self.ln3.forward(x + f)

    def backward(self, g):
        g = self.ln3.backward(g)
        g = g + self.ffn.backward(g)
        gkv = None
        if self.cross_attn is not None:
            g = self.ln2.backward(g)
            gxq, gkv = self.cross_attn.backward(g)
            g = g + gxq
        g = self.ln1.backward(g)
        gxq, gxkv = self.self_attn.backward(g)
        return g + gxq + gxkv, gkv


# ---------------------------------------------------------------------------
# the model


class SwagModel:
    def __init__(self, cfg: SwagConfig, priors: TransitionPriorTensor | None = None):
        self.cfg = cfg
        self.priors = priors
        reg = _Registry(cfg.seed)
        d, dim, c1 = cfg.pooled_dim, cfg.model_dim, cfg.classes_with_eos

        self.encoder_proj = _Linear(reg, "encoder.proj", cfg.feature_dim, dim)
        self.encoder_attn = _WindowedSelfAttention(reg, "encoder.attn", dim, cfg.num_heads, cfg.window_width)
        self.encoder_ln = _LayerNorm(reg, "encoder.ln", dim)
        self.cp_proj = _Linear(reg, "cp.proj", dim, d)
        self.key_proj = _Linear(reg, "cp.key_proj", d, dim)
        self.rec_head = _Linear(reg, "rec.head", d + dim, cfg.num_phases)

        self.n_tokens = 1 if cfg.task == "regression" else cfg.horizon_minutes
        if cfg.decode_mode == "ar":
            self.class_embed = reg.xavier("ar.class_embed", (c1, dim), dim, dim)
            self.token_u = None
            self.prior_lift = None
            self.token_ln = None
        else:
            self.class_embed = None
            self.token_u = reg.xavier("tokens.u", (self.n_tokens, dim), dim, dim)
            self.prior_lift = _Linear(reg, "tokens.prior_lift", c1, dim)
            self.token_ln = _LayerNorm(reg, "tokens.ln", dim)

        cross = cfg.decode_mode != "ar"
        causal = cfg.decode_mode == "ar"
        self.layers = [
            _DecoderLayer(reg, f"decoder.{i}", dim, cfg.num_heads, cfg.ffn_mult, cross, causal)
            for i in range(cfg.decoder_layers)
        ]
        self.out_head = _Linear(reg, "out.head", dim, c1)

        self.params = reg.params
        self.pe_future = nm.positional_encoding_table(range(1, self.n_tokens + 1), dim)
        self.pe_context = nm.positional_encoding_table(range(1, cfg.context_tokens + 1), dim)
        self.decoder_passes = 0

    # -- plumbing ----------------------------------------------------------

    def clone_param_values(self):
        return [p.value.copy() for p in self.params]

    def set_param_values(self, values):
        for p, v in zip(self.params, values):
            if p.value.shape != v.shape:
                raise ValueError(f"shape mismatch for {p.name}")
            p.value = np.array(v, dtype=np.float64)
            p.zero_grad()
            p.momentum = np.zeros_like(p.value)

    def round_to_float32(self):
        for p in self.params:
            p.value = p.value.astype(np.float32).astype(np.float64)

    def _window(self, features: np.ndarray) -> np.ndarray:
        """Last L feature rows, left-padded by repeating the first row."""
        length = self.cfg.context_seconds
        feats = features[-length:]
        if feats.shape[0] < length:
            pad = np.repeat(feats[:1], length - feats.shape[0], axis=0)
            feats = np.concatenate([pad, feats], axis=0)
        return feats

    # -- shared trunk ------------------------------------------------------

    def _trunk_forward(self, window):
        x = self.encoder_proj.forward(window)
        a = self.encoder_attn.forward(x)
        e = self.encoder_ln.forward(x + a)
        ep = self.cp_proj.forward(e)
        kpool, kidx = K.cumulative_key_pool(ep, self.cfg.context_tokens)
        e_recent = e[-self.cfg.context_tokens:]
        fused = np.concatenate([kpool, e_recent], axis=1)
        rec_logits = self.rec_head.forward(fused)
        rec_probs = nm.softmax(rec_logits)
        self._trunk_cache = (ep.shape[0], kidx)
        return e, ep, kpool, rec_probs

    def _trunk_backward(self, g_e, g_kpool, g_rec_probs, rec_probs):
        length, kidx = self._trunk_cache
        m = self.cfg.context_tokens
        g_rec_logits = nm.softmax_backward(g_rec_probs, rec_probs)
        g_fused = self.rec_head.backward(g_rec_logits)
        g_kpool = g_kpool + g_fused[:, : self.cfg.pooled_dim]
        g_e = g_e.copy()
        g_e[-m:] += g_fused[:, self.cfg.pooled_dim:]
        g_ep = K.pool_backward(g_kpool, kidx, length)
        g_e += self.cp_proj.backward(g_ep)
        g_sum = self.encoder_ln.backward(g_e)
        gx = g_sum + self.encoder_attn.backward(g_sum)
        self.encoder_proj.backward(gx)

    # -- future-token initialization (single-pass decoding) ----------------

    def _prior_vectors(self, current_class: int) -> np.ndarray:
        c1 = self.cfg.classes_with_eos
        if self.cfg.task == "regression":
            minutes = [1] if self.cfg.horizon_minutes >= 1 else []
        else:
            minutes = range(1, self.n_tokens + 1)
        if self.priors is None:
            return np.zeros((self.n_tokens, c1))
        rows = [self.priors.row(current_class, m) for m in minutes]
        if len(rows) < self.n_tokens:
            rows += [np.zeros(c1)] * (self.n_tokens - len(rows))
        return np.stack(rows) if rows else np.zeros((0, c1))

    def _token_init_forward(self, current_class: int):
        pvec = self._prior_vectors(current_class)
        lifted = self.prior_lift.forward(pvec)
        pre = self.token_u.value + self.cfg.alpha * lifted + self.pe_future
        return self.token_ln.forward(pre)

    def _token_init_backward(self, g):
        g_pre = self.token_ln.backward(g)
        self.token_u.grad += g_pre
        self.prior_lift.backward(self.cfg.alpha * g_pre)

    # -- single-pass decode -------------------------------------------------

    def _sp_decode_forward(self, q, kpool):
        kd = self.key_proj.forward(kpool)
        s = q
        for layer in self.layers:
            s = layer.forward(s, kv=kd)
        self.decoder_passes += 1
        return s

    def _sp_decode_backward(self, g_s):
        g_kd = 0.0
        for layer in reversed(self.layers):
            g_s, gkv = layer.backward(g_s)
            g_kd = g_kd + gkv
        g_kpool = self.key_proj.backward(g_kd)
        return g_s, g_kpool

    def _regression_times(self, s_row):
        z = self.out_head.forward(s_row)
        sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(np.minimum(z, 0)) / (1.0 + np.exp(np.minimum(z, 0))))
        self._sig_cache = sig
        return self.cfg.horizon_minutes * sig

    def _regression_times_backward(self, g_times):
        sig = self._sig_cache
        g_z = g_times * self.cfg.horizon_minutes * sig * (1.0 - sig)
        return self.out_head.backward(g_z)

    # -- auto-regressive decode ---------------------------------------------

    def _ar_context_tokens(self, ep):
        pooled, pidx = K.interval_pool(ep, 60, self.cfg.interval_pool_cumulative)
        self._ar_pool_cache = (pidx, ep.shape[0])
        return self.key_proj.forward(pooled)

    def _ar_forward_training(self, ep):
        tokens = self._ar_context_tokens(ep)
        x = tokens + self.pe_context
        for layer in self.layers:
            x = layer.forward(x)
        logits = self.out_head.forward(x)
        self.decoder_passes += 1
        return nm.softmax(logits)

    def _ar_backward_training(self, g_probs, probs):
        g_logits = nm.softmax_backward(g_probs, probs)
        g = self.out_head.backward(g_logits)
        for layer in reversed(self.layers):
            g, _ = layer.backward(g)
        g_pooled = self.key_proj.backward(g)
        pidx, length = self._ar_pool_cache
        return K.pool_backward(g_pooled, pidx, length)

    def _ar_generate(self, ep, n):
        """Greedy decoding with a sliding window of the most recent M tokens."""
        m = self.cfg.context_tokens
        raw = list(self._ar_context_tokens(ep))
        probs_out = np.zeros((n, self.cfg.classes_with_eos))
        for step in range(n):
            window = np.stack(raw[-m:])
            x = window + self.pe_context[: window.shape[0]]
            for layer in self.layers:
                x = layer.forward(x)
            logits = self.out_head.forward(x[-1:])
            p = nm.softmax(logits)[0]
            probs_out[step] = p
            raw.append(self.class_embed.value[int(p.argmax())])
            self.decoder_passes += 1
        return probs_out

    # -- public entry points -------------------------------------------------

    def training_step_forward(self, window, current_class, rec_targets, ant_targets,
                              rec_weights, ant_weights):
        """Joint forward; returns (total, recognition, anticipation) losses
        plus the caches the backward step needs."""
        e, ep, kpool, rec_probs = self._trunk_forward(window)
        rec_loss, rec_cache = nm.weighted_cross_entropy(rec_probs, rec_targets, rec_weights)
        cache = {"rec_probs": rec_probs, "rec_cache": rec_cache, "e_shape": e.shape}
        if self.cfg.decode_mode == "ar":
            probs = self._ar_forward_training(ep)
            ant_loss, ant_cache = nm.weighted_cross_entropy(probs, ant_targets, ant_weights)
            cache.update(kind="ar", probs=probs, ant_cache=ant_cache)
        elif self.cfg.task == "classification":
            q = self._token_init_forward(current_class)
            s = self._sp_decode_forward(q, kpool)
            probs = nm.softmax(self.out_head.forward(s))
            ant_loss, ant_cache = nm.weighted_cross_entropy(probs, ant_targets, ant_weights)
            cache.update(kind="sp", probs=probs, ant_cache=ant_cache)
        else:
            q = self._token_init_forward(current_class)
            s = self._sp_decode_forward(q, kpool)
            times = self._regression_times(s)
            ant_loss, diff = nm.mse_loss(times, ant_targets)
            cache.update(kind="reg", diff=diff)
        return rec_loss + ant_loss, rec_loss, ant_loss, cache

    def training_step_backward(self, cache):
        g_rec_probs = nm.weighted_cross_entropy_backward(cache["rec_cache"])
        g_e = np.zeros(cache["e_shape"])
        if cache["kind"] == "ar":
            g_probs = nm.weighted_cross_entropy_backward(cache["ant_cache"])
            g_ep_extra = self._ar_backward_training(g_probs, cache["probs"])
            g_kpool = np.zeros((self.cfg.context_tokens, self.cfg.pooled_dim))
            # interval pooling taps ep directly; fold through cp_proj here
            g_e += self.cp_proj.backward(g_ep_extra)
        else:
            if cache["kind"] == "sp":
                g_probs = nm.weighted_cross_entropy_backward(cache["ant_cache"])
                g_logits = nm.softmax_backward(g_probs, cache["probs"])
                g_s = self.out_head.backward(g_logits)
            else:
                g_times = nm.mse_loss_backward(cache["diff"])
                g_s = self._regression_times_backward(g_times)
            g_s, g_kpool = self._sp_decode_backward(g_s)
            self._token_init_backward(g_s)
        self._trunk_backward(g_e, g_kpool, g_rec_probs, cache["rec_probs"])

    def infer(self, features: np.ndarray, current_class_override: int | None = None,
              horizon_minutes: int | None = None) -> AnticipationOutput:
        """One anticipation pass on everything observed so far.

        ``horizon_minutes`` truncates the output without retraining; it cannot
        exceed the trained horizon.
        """
        self.decoder_passes = 0
        n = self.cfg.horizon_minutes if horizon_minutes is None else horizon_minutes
        if n > self.cfg.horizon_minutes:
            raise ValueError("cannot evaluate beyond the trained horizon")
        window = self._window(np.asarray(features, dtype=np.float64))
        e, ep, kpool, rec_probs = self._trunk_forward(window)
        recognized = int(rec_probs[-1].argmax())
        conditioning = recognized if current_class_override is None else int(current_class_override)
        if self.cfg.decode_mode == "ar":
            probs = self._ar_generate(ep, n)
            return AnticipationOutput(rec_probs, recognized, future_probs=probs,
                                      decoder_passes=self.decoder_passes, horizon_minutes=n)
        q = self._token_init_forward(conditioning)
        s = self._sp_decode_forward(q, kpool)
        if self.cfg.task == "classification":
            probs = nm.softmax(self.out_head.forward(s))[:n]
            return AnticipationOutput(rec_probs, recognized, future_probs=probs,
                                      decoder_passes=self.decoder_passes, horizon_minutes=n)
        times = np.clip(self._regression_times(s)[0], 0.0, float(n))
        return AnticipationOutput(rec_probs, recognized, remaining_times=times,
                                  decoder_passes=self.decoder_passes, horizon_minutes=n)


# ---------------------------------------------------------------------------
# regression-to-classification mapping


def regression_to_classes(remaining_times: np.ndarray, current_class: int,
                          grid: HorizonGrid) -> np.ndarray:
    """Sort classes by predicted remaining time and bin them onto the
    horizon; minutes before the first occurrence keep the current class."""
    n = grid.n_minutes
    out = np.full(n, int(current_class), dtype=np.int64)
    if n == 0:
        return out
    occurrences = sorted(
        (float(r), c) for c, r in enumerate(np.asarray(remaining_times, dtype=np.float64))
        if r < n
    )
    bins = [min(max(int(np.floor(r + 0.5)), 1), n) for r, _ in occurrences]
    for k, (bin_k, (_, cls)) in enumerate(zip(bins, occurrences)):
        end = bins[k + 1] if k + 1 < len(bins) else n + 1
        out[bin_k - 1: end - 1] = cls
    return out


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: SwagModel
    log: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = np.nan


def _minute_timepoints(length: int) -> list[int]:
    return list(range(60, length, 60))


def _class_weight_vectors(cfg: SwagConfig, train_pairs) -> tuple[np.ndarray, np.ndarray]:
    c, c1 = cfg.num_phases, cfg.classes_with_eos
    if cfg.class_weights == "uniform":
        return np.ones(c), np.ones(c1)
    grid = cfg.grid
    rec_counts = np.zeros(c)
    ant_counts = np.zeros(c1)
    for seq, _ in train_pairs:
        for t in _minute_timepoints(len(seq)):
            rec_counts[seq.labels[t]] += 1
            np.add.at(ant_counts, ground_truth_future(seq, t, grid), 1)
    def invert(counts):
        w = np.where(counts > 0, counts.sum() / np.maximum(counts, 1) / counts.size, 1.0)
        return w / w[counts > 0].mean() if (counts > 0).any() else np.ones_like(w)
    return invert(rec_counts), invert(ant_counts)


def _step_targets(model: SwagModel, seq: LabeledSequence, feats, t: int):
    cfg = model.cfg
    window = model._window(feats.vectors[: t + 1])
    m = cfg.context_tokens
    rec_targets = np.array([seq.labels[max(0, t - m + 1 + j)] for j in range(m)], dtype=np.int64)
    current = int(seq.labels[t])
    if cfg.decode_mode == "ar":
        ant_targets = np.empty(m, dtype=np.int64)
        for j in range(1, m + 1):
            idx = t - cfg.context_seconds + 60 * (j + 1)
            ant_targets[j - 1] = seq.eos if idx >= len(seq) else int(seq.labels[max(0, idx)])
    elif cfg.task == "classification":
        ant_targets = ground_truth_future(seq, t, cfg.grid)
    else:
        ant_targets = ground_truth_remaining_times(seq, t, cfg.grid)
    return window, current, rec_targets, ant_targets


def train_model(dataset: Dataset, cfg: SwagConfig,
                priors: TransitionPriorTensor | None = None) -> TrainResult:
    """Train on the dataset's train split, selecting the epoch with the best
    validation score (mean weighted F1 for classification, wMAE for
    regression). The returned model carries float32-rounded weights so that a
    checkpoint round-trip is lossless."""
    from .metrics import validation_score  # local import to avoid a cycle at module load

    if cfg.horizon_minutes < 1:
        raise ValueError("training requires a horizon of at least one minute")
    if not dataset.train:
        raise ValueError("empty training split")
    if priors is None:
        priors = extract_transition_priors(
            [seq for seq, _ in dataset.train], cfg.grid, cfg.num_phases
        )
    model = SwagModel(cfg, priors)
    rec_w, ant_w = _class_weight_vectors(cfg, dataset.train)
    samples = [
        (vi, t)
        for vi, (seq, _) in enumerate(dataset.train)
        for t in _minute_timepoints(len(seq))
    ]
    if not samples:
        raise ValueError("training sequences are too short to produce any timepoints")
    rng = np.random.default_rng(np.random.SeedSequence([0x7EA1, cfg.seed]))

    log: list[dict] = []
    best_val, best_epoch, best_values = -np.inf, -1, model.clone_param_values()
    maximize = cfg.task == "classification"
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(samples))
        total = 0.0
        for si in order:
            vi, t = samples[si]
            seq, feats = dataset.train[vi]
            window, current, rec_t, ant_t = _step_targets(model, seq, feats, t)
            use_class = current  # teacher forcing: ground-truth class indexes the priors
            loss, _, _, cache = model.training_step_forward(
                window, use_class, rec_t, ant_t, rec_w, ant_w
            )
            if not np.isfinite(loss):
                raise TrainingDivergenceError(
                    f"non-finite loss at epoch {epoch}, video {seq.video_id}, t={t}"
                )
            model.training_step_backward(cache)
            nm.sgd_step(model.params, cfg.lr, cfg.momentum, cfg.weight_decay)
            total += loss
        record = {"epoch": epoch, "train_loss": total / len(samples)}
        if dataset.val and (epoch % cfg.val_every == 0 or epoch == cfg.epochs - 1):
            score = validation_score(model, dataset.val, cfg)
            record["val_score"] = score
            gain = score if maximize else -score
            if gain > best_val:
                best_val, best_epoch = gain, epoch
                best_values = model.clone_param_values()
        log.append(record)
    if dataset.val:
        model.set_param_values(best_values)
        final_val = best_val if maximize else -best_val
    else:
        final_val = np.nan
    model.round_to_float32()
    return TrainResult(model, log, best_epoch, final_val)


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: SwagModel, path):
    cfg_payload = asdict(model.cfg)
    if model.priors is not None:
        cfg_payload["_priors"] = {
            "data": model.priors.probs.ravel().tolist(),
            "shape": list(model.priors.probs.shape),
            "unobserved": sorted([i, m] for i, m in model.priors.unobserved),
        }
    blob = json.dumps(cfg_payload, sort_keys=True).encode("utf-8")
    with open(str(path), "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in model.params:
            dims = p.value.shape
            fh.write(struct.pack("<I", len(dims)))
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
            fh.write(p.value.astype("<f4").tobytes(order="C"))


def load_model(path) -> SwagModel:
    with open(str(path), "rb") as fh:
        blob = fh.read()
    if blob[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic")
    off = len(MODEL_MAGIC)
    try:
        (cfg_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        payload = json.loads(blob[off: off + cfg_len].decode("utf-8"))
        off += cfg_len
    except (struct.error, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable config block") from exc
    priors_payload = payload.pop("_priors", None)
    priors = None
    if priors_payload is not None:
        probs = np.asarray(priors_payload["data"], dtype=np.float64).reshape(priors_payload["shape"])
        priors = TransitionPriorTensor(
            probs, frozenset((int(i), int(m)) for i, m in priors_payload["unobserved"])
        )
    try:
        cfg = SwagConfig(**payload)
    except TypeError as exc:
        raise CheckpointError(f"{path}: config does not match this version") from exc
    model = SwagModel(cfg, priors)
    for p in model.params:
        try:
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            count = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(blob, dtype="<f4", count=count, offset=off)
            off += 4 * count
        except (struct.error, ValueError) as exc:
            raise CheckpointError(f"{path}: truncated parameter block at {p.name}") from exc
        if tuple(dims) != p.value.shape:
            raise CheckpointError(
                f"{path}: {p.name} has shape {tuple(dims)}, expected {p.value.shape}"
            )
        p.value = data.astype(np.float64).reshape(dims)
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return model
