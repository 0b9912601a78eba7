import numpy as np
import pytest

from swag.core import HorizonGrid
from swag.simulate import (
    FeatureModel,
    WorkflowGrammar,
    build_dataset,
    default_feature_model,
    generate_features,
    generate_workflow,
    structured_grammar,
    variable_grammar,
)


def fixed_grammar(num_phases=7, seconds=60):
    return WorkflowGrammar(((seconds, seconds),) * num_phases, (0.0,) * num_phases, 0.0)


def test_degenerate_grammar_layout():
    seq = generate_workflow(fixed_grammar(), seed=0)
    assert len(seq) == 420
    assert np.array_equal(seq.labels, np.repeat(np.arange(7), 60))


def test_same_seed_same_sequence():
    g = variable_grammar()
    a = generate_workflow(g, seed=42)
    b = generate_workflow(g, seed=42)
    assert np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.labels, generate_workflow(g, seed=43).labels)


def test_skip_probability_monte_carlo():
    ranges = ((30, 30),) * 5
    skips = (0.0, 0.0, 0.0, 0.5, 0.0)
    g = WorkflowGrammar(ranges, skips, 0.0)
    present = sum(3 in generate_workflow(g, seed=s).labels for s in range(1000))
    assert 450 <= present <= 550


def test_grammar_validation():
    with pytest.raises(ValueError):
        WorkflowGrammar(((10, 60),), (0.0,), 0.0)  # below 30 s floor
    with pytest.raises(ValueError):
        WorkflowGrammar(((60, 2000),), (0.0,), 0.0)  # above ceiling
    with pytest.raises(ValueError):
        WorkflowGrammar(((60, 90),), (1.5,), 0.0)


def test_generated_segments_respect_duration_floor():
    for profile in (structured_grammar(), variable_grammar()):
        for seed in range(10):
            labels = generate_workflow(profile, seed).labels
            change = np.flatnonzero(np.diff(labels)) + 1
            bounds = np.concatenate([[0], change, [len(labels)]])
            assert np.diff(bounds).min() >= 30
            assert labels.max() < profile.num_phases  # EOS never generated


def test_features_are_prototypes_plus_noise():
    seq = generate_workflow(fixed_grammar(3), seed=1, video_id="x")
    protos = np.eye(3) * 4.0
    tiny = FeatureModel(protos, noise_sigma=1e-9)
    feats = generate_features(seq, tiny, seed=2)
    assert np.allclose(feats.vectors, protos[seq.labels], atol=1e-6)


def test_feature_noise_is_centered():
    labels = generate_workflow(fixed_grammar(2, seconds=30), seed=4)
    model = FeatureModel(np.array([[1.0, 0.0], [0.0, 1.0]]), noise_sigma=1.0)
    draws = np.stack(
        [generate_features(labels, model, seed=s).vectors for s in range(200)]
    )
    residual = draws - model.prototypes[labels.labels]
    n = residual.size
    assert abs(residual.mean()) <= 3.0 / np.sqrt(n)


def test_nearest_prototype_flips_at_label_change():
    model = default_feature_model(4, dim=8, noise_sigma=0.05, separation=2.0)
    seq = generate_workflow(fixed_grammar(4), seed=9)
    feats = generate_features(seq, model, seed=9)
    dists = ((feats.vectors[:, None, :] - model.prototypes[None]) ** 2).sum(-1)
    nearest = dists.argmin(1)
    assert (nearest == seq.labels).mean() > 0.99


def test_build_dataset_counts_and_disjoint_ids():
    ds = build_dataset(structured_grammar(), default_feature_model(7), (10, 4, 7), seed=0)
    assert (len(ds.train), len(ds.val), len(ds.test)) == (10, 4, 7)
    ids = [s.video_id for split in (ds.train, ds.val, ds.test) for s, _ in split]
    assert len(set(ids)) == 21


def test_build_dataset_is_reproducible():
    a = build_dataset(variable_grammar(), default_feature_model(7), (1, 1, 1), seed=6)
    b = build_dataset(variable_grammar(), default_feature_model(7), (1, 1, 1), seed=6)
    for split in ("train", "val", "test"):
        (sa, fa), (sb, fb) = a.split(split)[0], b.split(split)[0]
        assert np.array_equal(sa.labels, sb.labels)
        assert np.array_equal(fa.vectors, fb.vectors)


def test_large_split_sizes():
    ds = build_dataset(structured_grammar(), default_feature_model(7), (32, 8, 40), seed=1)
    total = len(ds.train) + len(ds.val) + len(ds.test)
    assert total == 80


def test_feature_model_rejects_duplicate_prototypes():
    with pytest.raises(ValueError):
        FeatureModel(np.ones((2, 3)), 0.1)
