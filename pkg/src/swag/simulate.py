"""Semi-Markov workflow generator.

Produces synthetic procedures (per-second phase labels plus class-informative
noisy features) so the whole pipeline trains and evaluates at desk scale.
Phases run in grammar order; a phase may be skipped, and after finishing a
phase the workflow may revisit the previously visited one before moving on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Dataset, FeatureSequence, LabeledSequence

MIN_PHASE_SECONDS = 30
MAX_PHASE_SECONDS = 1800


@dataclass(frozen=True)
class WorkflowGrammar:
    """Ordered phase list with per-phase duration ranges and branch probabilities."""

    duration_ranges: tuple[tuple[int, int], ...]
    skip_probs: tuple[float, ...]
    revisit_prob: float = 0.0

    def __post_init__(self):
        if len(self.duration_ranges) != len(self.skip_probs):
            raise ValueError("one duration range and skip probability per phase")
        for lo, hi in self.duration_ranges:
            if not (MIN_PHASE_SECONDS <= lo <= hi <= MAX_PHASE_SECONDS):
                raise ValueError(
                    f"duration range ({lo}, {hi}) outside "
                    f"[{MIN_PHASE_SECONDS}, {MAX_PHASE_SECONDS}]"
                )
        for p in (*self.skip_probs, self.revisit_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")

    @property
    def num_phases(self) -> int:
        return len(self.duration_ranges)


def structured_grammar(num_phases: int = 7) -> WorkflowGrammar:
    """Predictable workflow: all phases always present, in order, no revisits."""
    ranges = tuple((120 + 30 * (i % 3), 300 + 60 * (i % 4)) for i in range(num_phases))
    return WorkflowGrammar(ranges, (0.0,) * num_phases, revisit_prob=0.0)


def variable_grammar(num_phases: int = 7) -> WorkflowGrammar:
    """Branching workflow: optional phases, revisits, wider duration spread."""
    ranges = tuple((90 + 30 * (i % 2), 360 + 90 * (i % 3)) for i in range(num_phases))
    skips = tuple(0.0 if i in (0, num_phases - 1) else (0.45 if i % 2 else 0.15) for i in range(num_phases))
    return WorkflowGrammar(ranges, skips, revisit_prob=0.3)


GRAMMAR_PROFILES = {"structured": structured_grammar, "variable": variable_grammar}


@dataclass(frozen=True)
class FeatureModel:
    """Per-phase prototype vectors observed through Gaussian noise."""

    prototypes: np.ndarray
    noise_sigma: float

    def __post_init__(self):
        protos = np.asarray(self.prototypes, dtype=np.float64)
        object.__setattr__(self, "prototypes", protos)
        if protos.ndim != 2:
            raise ValueError("prototypes must be a C x D matrix")
        if self.noise_sigma <= 0:
            raise ValueError("noise sigma must be positive")
        diffs = protos[:, None, :] - protos[None, :, :]
        dist = np.sqrt((diffs**2).sum(-1))
        np.fill_diagonal(dist, np.inf)
        if dist.min() == 0.0:
            raise ValueError("prototypes must be pairwise distinct")

    @property
    def dim(self) -> int:
        return int(self.prototypes.shape[1])


def default_feature_model(
    num_phases: int, dim: int = 16, noise_sigma: float = 0.6, seed: int = 7, separation: float = 2.0
) -> FeatureModel:
    """Random prototypes of equal norm ``separation``, seeded for reproducibility."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, num_phases, dim]))
    protos = rng.standard_normal((num_phases, dim))
    protos *= separation / np.linalg.norm(protos, axis=1, keepdims=True)
    return FeatureModel(protos, noise_sigma)


def generate_workflow(grammar: WorkflowGrammar, seed: int, video_id: str = "sim") -> LabeledSequence:
    """Sample one procedure: ordered phases, uniform durations, skips, revisits."""
    rng = np.random.default_rng(np.random.SeedSequence([0x5747, seed]))
    visits: list[int] = []
    for phase in range(grammar.num_phases):
        if rng.random() < grammar.skip_probs[phase]:
            continue
        if visits and grammar.revisit_prob > 0.0 and rng.random() < grammar.revisit_prob:
            prev = visits[-1]
            # one revisit at most, and never adjacent to itself
            if len(visits) >= 2 and visits[-2] != prev:
                visits.append(visits[-2])
        visits.append(phase)
    if not visits:
        visits.append(0)
    pieces = []
    for phase in visits:
        lo, hi = grammar.duration_ranges[phase]
        duration = int(rng.integers(lo, hi + 1))
        pieces.append(np.full(duration, phase, dtype=np.int64))
    return LabeledSequence(np.concatenate(pieces), video_id, grammar.num_phases)


def generate_features(labels: LabeledSequence, model: FeatureModel, seed: int) -> FeatureSequence:
    """Prototype of the active phase plus i.i.d. Gaussian noise, per second."""
    if model.prototypes.shape[0] < labels.num_phases:
        raise ValueError("feature model has fewer prototypes than phases")
    rng = np.random.default_rng(np.random.SeedSequence([0xFEA7, seed]))
    noise = rng.normal(0.0, model.noise_sigma, size=(len(labels), model.dim))
    return FeatureSequence(model.prototypes[labels.labels] + noise, labels.video_id)


def build_dataset(
    grammar: WorkflowGrammar,
    feature_model: FeatureModel,
    counts: tuple[int, int, int],
    seed: int,
) -> Dataset:
    """Deterministic dataset with disjoint video ids across splits."""
    n_train, n_val, n_test = counts
    if min(counts) <= 0:
        raise ValueError("split counts must be positive")
    ds = Dataset()
    index = 0
    for split_name, count in (("train", n_train), ("val", n_val), ("test", n_test)):
        bucket = ds.split(split_name)
        for k in range(count):
            video_id = f"{split_name}_{k:03d}"
            labels = generate_workflow(grammar, seed * 100003 + index, video_id)
            feats = generate_features(labels, feature_model, seed * 100003 + index)
            bucket.append((labels, feats))
            index += 1
    return ds.validate()
