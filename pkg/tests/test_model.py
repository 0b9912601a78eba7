import numpy as np
import pytest

import swag.numerics as nm
from swag.core import Dataset, FeatureSequence, HorizonGrid, LabeledSequence
from swag.model import (
    AnticipationOutput,
    CheckpointError,
    SwagConfig,
    SwagModel,
    load_model,
    regression_to_classes,
    save_model,
    train_model,
)
from swag.priors import TransitionPriorTensor, extract_transition_priors
from swag.simulate import default_feature_model, generate_features, structured_grammar, generate_workflow


def tiny_config(**kw):
    base = dict(
        num_phases=3,
        feature_dim=3,
        context_seconds=40,
        window_width=20,
        context_tokens=2,
        pooled_dim=4,
        model_dim=8,
        num_heads=2,
        decoder_layers=2,
        ffn_mult=2,
        horizon_minutes=2,
        epochs=2,
        lr=1e-3,
        seed=0,
    )
    base.update(kw)
    return SwagConfig(**base)


def small_dataset(num_videos=(2, 1, 1), num_phases=3, seed=0, seconds=60):
    grammar = structured_grammar(num_phases)
    fm = default_feature_model(num_phases, 3, 0.4)
    ds = Dataset()
    rng = np.random.default_rng(seed)
    idx = 0
    for split, count in zip(("train", "val", "test"), num_videos):
        for _ in range(count):
            seq = generate_workflow(grammar, seed * 17 + idx, f"{split}_{idx}")
            feats = generate_features(seq, fm, seed * 17 + idx)
            ds.split(split).append((seq, feats))
            idx += 1
    return ds.validate()


def rand_feats(rng, t, dim=3):
    return rng.normal(size=(t, dim))


# ---------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(context_seconds=41)
    with pytest.raises(ValueError):
        tiny_config(decode_mode="ar")  # 40 != 2 * 60
    with pytest.raises(ValueError):
        tiny_config(decode_mode="nope")
    with pytest.raises(ValueError):
        tiny_config(task="regression", decode_mode="ar", context_seconds=120)
    with pytest.raises(ValueError):
        tiny_config(prior_scale=-1.0)
    assert tiny_config(decode_mode="sp").alpha == 0.0
    assert tiny_config(decode_mode="sp_star", prior_scale=0.7).alpha == 0.7


# ---------------------------------------------------------------- encoder

def test_wsa_output_shape_and_row_stochastic_windows():
    cfg = tiny_config()
    model = SwagModel(cfg)
    window = rand_feats(np.random.default_rng(0), cfg.context_seconds)
    e, ep, kpool, rec = model._trunk_forward(window)
    assert e.shape == (cfg.context_seconds, cfg.model_dim)
    assert ep.shape == (cfg.context_seconds, cfg.pooled_dim)
    assert kpool.shape == (cfg.context_tokens, cfg.pooled_dim)
    probs = model.encoder_attn.last_probs
    assert probs.shape[1:] == (cfg.window_width, cfg.window_width)
    assert np.allclose(probs.sum(axis=2), 1.0)


def test_wsa_windows_do_not_interact():
    cfg = tiny_config()
    model = SwagModel(cfg)
    rng = np.random.default_rng(1)
    window = rand_feats(rng, cfg.context_seconds)
    e1, *_ = model._trunk_forward(window)
    bumped = window.copy()
    bumped[5] += 10.0  # inside window 0
    e2, *_ = model._trunk_forward(bumped)
    assert not np.allclose(e1[:20], e2[:20])
    assert np.array_equal(e1[20:], e2[20:])


def test_wsa_rejects_bad_length():
    cfg = tiny_config()
    model = SwagModel(cfg)
    with pytest.raises(ValueError):
        model.encoder_attn.forward(np.zeros((21, cfg.model_dim)))


# ---------------------------------------------------------------- token init

def make_priors(num_phases, n, seed=0):
    rng = np.random.default_rng(seed)
    raw = rng.random((num_phases, num_phases + 1, n)) + 0.05
    return TransitionPriorTensor(raw / raw.sum(axis=1, keepdims=True))


def test_token_init_alpha_zero_ignores_priors():
    cfg = tiny_config(decode_mode="sp")
    a = SwagModel(cfg, priors=None)
    b = SwagModel(cfg, priors=make_priors(3, 2))
    qa = a._token_init_forward(0)
    qb = b._token_init_forward(1)
    assert np.array_equal(qa, qb)


def test_token_init_rows_are_normalized_pre_affine():
    cfg = tiny_config(decode_mode="sp_star")
    model = SwagModel(cfg, priors=make_priors(3, 2))
    q = model._token_init_forward(1)
    # gain starts at 1 and bias at 0, so rows should be ~zero-mean unit-var
    assert np.abs(q.mean(axis=1)).max() < 1e-9
    assert np.abs(q.var(axis=1) - 1.0).max() < 1e-4


def test_token_init_sensitive_to_current_class_with_priors():
    cfg = tiny_config(decode_mode="sp_star", prior_scale=1.0)
    model = SwagModel(cfg, priors=make_priors(3, 2, seed=5))
    q0 = model._token_init_forward(0)
    q1 = model._token_init_forward(2)
    assert np.abs(q0 - q1).max() > 1e-6


def test_token_init_rejects_eos_conditioning():
    cfg = tiny_config(decode_mode="sp_star")
    model = SwagModel(cfg, priors=make_priors(3, 2))
    with pytest.raises(ValueError):
        model._token_init_forward(3)


# ---------------------------------------------------------------- decoders

def test_sp_decode_shape_and_key_permutation_invariance():
    cfg = tiny_config()
    model = SwagModel(cfg)
    rng = np.random.default_rng(2)
    kpool = rng.normal(size=(cfg.context_tokens, cfg.pooled_dim))
    q = model._token_init_forward(0)
    s1 = model._sp_decode_forward(q, kpool)
    assert s1.shape == (cfg.horizon_minutes, cfg.model_dim)
    s2 = model._sp_decode_forward(q, kpool[::-1].copy())
    assert np.allclose(s1, s2, atol=1e-9)


def test_sp_and_spstar_bitwise_identical_at_alpha_zero():
    priors = make_priors(3, 2, seed=7)
    sp = SwagModel(tiny_config(decode_mode="sp", seed=3), priors)
    star = SwagModel(tiny_config(decode_mode="sp_star", prior_scale=0.0, seed=3), priors)
    feats = rand_feats(np.random.default_rng(4), 90)
    o1 = sp.infer(feats)
    o2 = star.infer(feats)
    assert np.array_equal(o1.future_probs, o2.future_probs)
    assert np.array_equal(o1.recognized_probs, o2.recognized_probs)


def test_ar_causal_invariance_and_determinism():
    cfg = tiny_config(decode_mode="ar", context_seconds=120, horizon_minutes=3)
    model = SwagModel(cfg)
    rng = np.random.default_rng(5)
    ep = rng.normal(size=(120, cfg.pooled_dim))
    probs1 = model._ar_forward_training(ep)
    bumped = ep.copy()
    bumped[60:] += 3.0  # only the second interval token changes
    probs2 = model._ar_forward_training(bumped)
    assert np.array_equal(probs1[0], probs2[0])
    assert not np.allclose(probs1[1], probs2[1])
    feats = rand_feats(rng, 200)
    a = model.infer(feats)
    b = model.infer(feats)
    assert np.array_equal(a.future_probs, b.future_probs)
    assert a.decoder_passes == cfg.horizon_minutes


def test_ar_zero_horizon_gives_empty_output():
    cfg = tiny_config(decode_mode="ar", context_seconds=120, horizon_minutes=3)
    model = SwagModel(cfg)
    out = model.infer(rand_feats(np.random.default_rng(6), 150), horizon_minutes=0)
    assert out.future_probs.shape == (0, 4)
    assert out.decoder_passes == 0


def test_sp_single_pass_vs_ar_linear_passes():
    sp = SwagModel(tiny_config(horizon_minutes=2))
    out = sp.infer(rand_feats(np.random.default_rng(7), 50))
    assert out.decoder_passes == 1
    ar = SwagModel(tiny_config(decode_mode="ar", context_seconds=120, horizon_minutes=3))
    out = ar.infer(rand_feats(np.random.default_rng(8), 130))
    assert out.decoder_passes == 3


# ---------------------------------------------------------------- heads

def test_head_shapes_and_row_sums():
    cfg = tiny_config()
    model = SwagModel(cfg)
    out = model.infer(rand_feats(np.random.default_rng(9), 70))
    assert out.recognized_probs.shape == (cfg.context_tokens, cfg.num_phases)
    assert np.allclose(out.recognized_probs.sum(axis=1), 1.0)
    assert out.future_probs.shape == (cfg.horizon_minutes, cfg.num_phases + 1)
    assert np.allclose(out.future_probs.sum(axis=1), 1.0)


def test_regression_output_range_and_shape():
    cfg = tiny_config(task="regression", horizon_minutes=4)
    model = SwagModel(cfg)
    out = model.infer(rand_feats(np.random.default_rng(10), 80))
    assert out.remaining_times.shape == (cfg.num_phases + 1,)
    assert out.remaining_times.min() >= 0.0
    assert out.remaining_times.max() <= 4.0


def test_regression_overfits_single_sample():
    cfg = tiny_config(task="regression", horizon_minutes=4, lr=3e-2, momentum=0.9)
    model = SwagModel(cfg)
    rng = np.random.default_rng(11)
    window = rand_feats(rng, cfg.context_seconds)
    target = np.array([0.0, 1.5, 4.0, 2.25])
    rec_t = np.zeros(cfg.context_tokens, dtype=np.int64)
    w_rec = np.ones(cfg.num_phases)
    w_ant = np.ones(cfg.num_phases + 1)
    mse = np.inf
    for _ in range(500):
        _, _, mse, cache = model.training_step_forward(window, 0, rec_t, target, w_rec, w_ant)
        model.training_step_backward(cache)
        nm.sgd_step(model.params, cfg.lr, cfg.momentum, 0.0)
    assert mse < 1e-3


# ---------------------------------------------------------------- r2c

def test_r2c_no_transition_case():
    grid = HorizonGrid(5)
    times = np.full(4, 5.0)
    times[2] = 0.0
    assert np.array_equal(regression_to_classes(times, 2, grid), np.full(5, 2))


def test_r2c_hand_traced_case():
    grid = HorizonGrid(5)
    times = np.full(8, 5.0)
    times[2] = 0.0
    times[3] = 1.7
    times[4] = 3.2
    assert list(regression_to_classes(times, 2, grid)) == [2, 3, 4, 4, 4]


def test_r2c_reproduces_ground_truth_on_aligned_sequences():
    # The horizon must extend past the last first-occurrence: a class whose
    # first occurrence lands exactly on minute N is encoded as remaining
    # time N, indistinguishable from "absent", so reconstruction is only
    # defined when first occurrences fall strictly inside the horizon.
    from swag.core import ground_truth_future, ground_truth_remaining_times

    rng = np.random.default_rng(12)
    checked = 0
    for _ in range(100):
        # minute-aligned segments, each class at most once
        classes = rng.permutation(6)[: rng.integers(2, 5)]
        durations = rng.integers(1, 4, size=len(classes)) * 60
        labels = np.concatenate([np.full(d, c) for c, d in zip(classes, durations)])
        seq = LabeledSequence(labels, "r2c", 6)
        grid = HorizonGrid(len(labels) // 60 + 1)
        t = int(rng.integers(0, len(labels) // 60)) * 60
        times = ground_truth_remaining_times(seq, t, grid)
        got = regression_to_classes(times, int(seq.labels[t]), grid)
        assert np.array_equal(got, ground_truth_future(seq, t, grid))
        checked += 1
    assert checked == 100


# ---------------------------------------------------------------- gradients

def test_full_pipeline_gradient_matches_fd():
    """Finite differences across every parameter of a micro model, loss
    flowing through encoder, pooling, decoder, and both heads."""
    cfg = tiny_config(decode_mode="sp_star", prior_scale=0.8)
    model = SwagModel(cfg, priors=make_priors(3, 2, seed=13))
    rng = np.random.default_rng(14)
    window = rand_feats(rng, cfg.context_seconds)
    rec_t = np.array([0, 2])
    ant_t = np.array([1, 3])
    w_rec = np.array([1.0, 0.5, 1.5])
    w_ant = np.array([1.0, 0.5, 1.5, 1.0])

    def loss(*_):
        value, _, _, _ = model.training_step_forward(window, 1, rec_t, ant_t, w_rec, w_ant)
        return value

    for p in model.params:
        p.zero_grad()
    _, _, _, cache = model.training_step_forward(window, 1, rec_t, ant_t, w_rec, w_ant)
    model.training_step_backward(cache)
    arrays = [p.value for p in model.params]
    grads = [p.grad.copy() for p in model.params]
    err = nm.finite_difference_check(loss, arrays, grads, eps=1e-5)
    assert err < 1e-4


def test_ar_pipeline_gradient_matches_fd():
    cfg = tiny_config(decode_mode="ar", context_seconds=120, context_tokens=2,
                      horizon_minutes=2, decoder_layers=1)
    model = SwagModel(cfg)
    rng = np.random.default_rng(15)
    window = rand_feats(rng, cfg.context_seconds)
    rec_t = np.array([0, 2])
    ant_t = np.array([1, 3])
    w_rec = np.ones(3)
    w_ant = np.ones(4)

    def loss(*_):
        value, _, _, _ = model.training_step_forward(window, 0, rec_t, ant_t, w_rec, w_ant)
        return value

    for p in model.params:
        p.zero_grad()
    _, _, _, cache = model.training_step_forward(window, 0, rec_t, ant_t, w_rec, w_ant)
    model.training_step_backward(cache)
    err = nm.finite_difference_check(
        loss, [p.value for p in model.params], [p.grad.copy() for p in model.params]
    )
    assert err < 1e-4


# ---------------------------------------------------------------- training

def test_training_single_video_overfits_and_logs_monotone():
    ds = small_dataset((1, 0, 0), seed=1)
    short = ds.train[0]
    labels = short[0].labels[:121]
    feats = short[1].vectors[:121]
    ds.train[0] = (
        LabeledSequence(labels, "solo", 3),
        FeatureSequence(feats, "solo"),
    )
    cfg = tiny_config(epochs=30, lr=2e-2, momentum=0.9, horizon_minutes=2)
    result = train_model(ds, cfg)
    losses = [rec["train_loss"] for rec in result.log]
    assert losses[-1] < 0.1
    assert all(b <= a + 1e-9 for a, b in zip(losses[3:], losses[4:]))


def test_training_is_deterministic_given_seed():
    ds = small_dataset((2, 1, 0), seed=2)
    cfg = tiny_config(epochs=2)
    a = train_model(ds, cfg)
    b = train_model(ds, cfg)
    assert a.log == b.log
    for pa, pb in zip(a.model.params, b.model.params):
        assert np.array_equal(pa.value, pb.value)


def test_training_seed_changes_weights():
    ds = small_dataset((2, 1, 0), seed=3)
    a = train_model(ds, tiny_config(epochs=1, seed=1))
    b = train_model(ds, tiny_config(epochs=1, seed=2))
    assert any(
        not np.array_equal(pa.value, pb.value)
        for pa, pb in zip(a.model.params, b.model.params)
    )


def test_infer_same_inputs_same_outputs():
    ds = small_dataset((2, 1, 1), seed=4)
    result = train_model(ds, tiny_config(epochs=1))
    feats = ds.test[0][1].vectors[:300]
    a = result.model.infer(feats)
    b = result.model.infer(feats)
    assert np.array_equal(a.future_probs, b.future_probs)


def test_infer_truncates_horizon_without_retraining():
    ds = small_dataset((2, 1, 1), seed=5)
    result = train_model(ds, tiny_config(epochs=1, horizon_minutes=3))
    feats = ds.test[0][1].vectors[:200]
    full = result.model.infer(feats)
    short = result.model.infer(feats, horizon_minutes=1)
    assert short.future_probs.shape[0] == 1
    assert np.array_equal(full.future_probs[:1], short.future_probs)
    with pytest.raises(ValueError):
        result.model.infer(feats, horizon_minutes=9)


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip_bitwise(tmp_path):
    ds = small_dataset((2, 1, 1), seed=6)
    result = train_model(ds, tiny_config(epochs=1, decode_mode="sp_star"))
    path = tmp_path / "model.bin"
    save_model(result.model, path)
    again = load_model(path)
    for pa, pb in zip(result.model.params, again.params):
        assert np.array_equal(pa.value, pb.value)
    assert again.priors is not None
    assert np.array_equal(result.model.priors.probs, again.priors.probs)
    feats = ds.test[0][1].vectors[:200]
    assert np.array_equal(
        result.model.infer(feats).future_probs, again.infer(feats).future_probs
    )


def test_checkpoint_rejects_corruption(tmp_path):
    ds = small_dataset((1, 0, 0), seed=7)
    result = train_model(ds, tiny_config(epochs=1))
    path = tmp_path / "model.bin"
    save_model(result.model, path)
    blob = path.read_bytes()
    path.write_bytes(b"BADMAGIC" + blob[8:])
    with pytest.raises(CheckpointError):
        load_model(path)
    path.write_bytes(blob[:-10])
    with pytest.raises(CheckpointError):
        load_model(path)


def test_anticipation_output_validation():
    with pytest.raises(ValueError):
        AnticipationOutput(np.array([[0.5, 0.2]]), 0)
