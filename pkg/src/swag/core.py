"""Domain types shared by every stage of the pipeline.

Conventions used throughout the package:

* time is counted in seconds at 1 sample per second; minutes only appear at
  API boundaries (horizon grid, remaining times),
* phase labels are integers ``0 .. num_phases-1``; the end-of-surgery (EOS)
  class has index ``num_phases`` and is synthesized for times beyond the end
  of a recording, never stored in label files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

DEFAULT_NUM_PHASES = 7

FEATURE_MAGIC = b"SWAGF1\x00\x00"


class LabelFileError(ValueError):
    """Malformed label or feature file (bad header, gap, truncation)."""


class DomainError(ValueError):
    """Value outside the configured label space."""


def eos_class(num_phases: int) -> int:
    """Index of the synthetic end-of-surgery class."""
    return num_phases


def num_classes(num_phases: int) -> int:
    """Total label-space size including EOS."""
    return num_phases + 1


@dataclass(frozen=True)
class HorizonGrid:
    """Anticipation grid: one prediction per future minute 1..n_minutes."""

    n_minutes: int
    step_seconds: int = 60

    def __post_init__(self):
        if self.n_minutes < 0:
            raise ValueError(f"horizon must be >= 0, got {self.n_minutes}")
        if self.step_seconds <= 0:
            raise ValueError("grid step must be positive")

    @property
    def offsets_seconds(self) -> np.ndarray:
        """Second offsets for minute indices 1..N (h_0=0 excluded)."""
        return np.arange(1, self.n_minutes + 1) * self.step_seconds


@dataclass(frozen=True)
class LabeledSequence:
    """Per-second phase labels of one procedure."""

    labels: np.ndarray
    video_id: str
    num_phases: int = DEFAULT_NUM_PHASES

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if labels.ndim != 1 or labels.size == 0:
            raise ValueError(f"{self.video_id}: labels must be a non-empty 1-d array")
        if labels.min() < 0 or labels.max() >= self.num_phases:
            raise DomainError(
                f"{self.video_id}: labels must lie in [0, {self.num_phases}); "
                f"EOS is synthesized, never stored"
            )
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def eos(self) -> int:
        return eos_class(self.num_phases)


@dataclass(frozen=True)
class FeatureSequence:
    """Per-second feature vectors standing in for vision-encoder outputs."""

    vectors: np.ndarray
    video_id: str = ""

    def __post_init__(self):
        vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        object.__setattr__(self, "vectors", vectors)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise ValueError("features must be a non-empty T x D array")
        if not np.isfinite(vectors).all():
            raise ValueError(f"{self.video_id}: non-finite feature values")
        self.vectors.setflags(write=False)

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


@dataclass
class Dataset:
    """Train/val/test splits of (labels, features) pairs, disjoint by video id."""

    train: list[tuple[LabeledSequence, FeatureSequence]] = field(default_factory=list)
    val: list[tuple[LabeledSequence, FeatureSequence]] = field(default_factory=list)
    test: list[tuple[LabeledSequence, FeatureSequence]] = field(default_factory=list)

    def split(self, name: str) -> list[tuple[LabeledSequence, FeatureSequence]]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def validate(self):
        ids = [seq.video_id for split in (self.train, self.val, self.test) for seq, _ in split]
        if len(ids) != len(set(ids)):
            raise ValueError("video ids must be disjoint across splits")
        for split in (self.train, self.val, self.test):
            for seq, feats in split:
                if len(seq) != len(feats):
                    raise ValueError(f"{seq.video_id}: labels and features disagree on length")
        return self


def future_label(seq: LabeledSequence, t: int, offset_seconds: int) -> int:
    """Label ``offset_seconds`` after ``t``; EOS once past the recording end."""
    if not 0 <= t < len(seq):
        raise ValueError(f"t={t} outside sequence of length {len(seq)}")
    s = t + offset_seconds
    if s >= len(seq):
        return seq.eos
    return int(seq.labels[s])


def ground_truth_future(seq: LabeledSequence, t: int, grid: HorizonGrid) -> np.ndarray:
    """Ground-truth class at each future minute 1..N (EOS beyond the end)."""
    return np.array(
        [future_label(seq, t, int(off)) for off in grid.offsets_seconds], dtype=np.int64
    )


def ground_truth_remaining_times(seq: LabeledSequence, t: int, grid: HorizonGrid) -> np.ndarray:
    """Minutes until each class next occurs, clamped to the horizon.

    Entry c is 0 if class c is active at ``t``, N if it does not occur within
    the horizon, otherwise (first occurrence after t - t) / 60. The EOS entry
    is the clamped remaining procedure duration.
    """
    if not 0 <= t < len(seq):
        raise ValueError(f"t={t} outside sequence of length {len(seq)}")
    n = grid.n_minutes
    times = np.full(num_classes(seq.num_phases), float(n))
    labels = seq.labels
    current = int(labels[t])
    times[current] = 0.0
    horizon_end = min(len(seq), t + n * grid.step_seconds + 1)
    for s in range(t + 1, horizon_end):
        c = int(labels[s])
        if c != current and times[c] == n:
            times[c] = min(float(n), (s - t) / 60.0)
    times[seq.eos] = min(float(n), (len(seq) - t) / 60.0)
    return times


def load_labels(path, num_phases: int = DEFAULT_NUM_PHASES, video_id: str | None = None) -> LabeledSequence:
    """Parse a ``second,phase`` CSV with contiguous seconds starting at 0."""
    path = str(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "second,phase":
            raise LabelFileError(f"{path}: expected header 'second,phase', got {header!r}")
        labels = []
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                sec_s, phase_s = line.split(",")
                sec, phase = int(sec_s), int(phase_s)
            except ValueError as exc:
                raise LabelFileError(f"{path}:{lineno + 2}: malformed row {line!r}") from exc
            if sec != len(labels):
                raise LabelFileError(
                    f"{path}:{lineno + 2}: seconds must be contiguous from 0, got {sec}"
                )
            if not 0 <= phase < num_phases:
                raise DomainError(
                    f"{path}:{lineno + 2}: phase {phase} outside [0, {num_phases})"
                )
            labels.append(phase)
    if not labels:
        raise LabelFileError(f"{path}: no label rows")
    if video_id is None:
        video_id = path.rsplit("/", 1)[-1].removesuffix(".csv")
    return LabeledSequence(np.array(labels, dtype=np.int64), video_id, num_phases)


def save_labels(seq: LabeledSequence, path):
    with open(str(path), "w", encoding="utf-8") as fh:
        fh.write("second,phase\n")
        for sec, phase in enumerate(seq.labels):
            fh.write(f"{sec},{int(phase)}\n")


def save_features(feats: FeatureSequence, path):
    """Binary layout: magic, u32 T, u32 D, then T*D float32 little-endian."""
    t, d = feats.vectors.shape
    with open(str(path), "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", t, d))
        fh.write(feats.vectors.astype("<f4").tobytes(order="C"))


def load_features(path, video_id: str = "") -> FeatureSequence:
    path = str(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise LabelFileError(f"{path}: bad feature-file magic")
    head_end = len(FEATURE_MAGIC) + 8
    if len(blob) < head_end:
        raise LabelFileError(f"{path}: truncated header")
    t, d = struct.unpack("<II", blob[len(FEATURE_MAGIC):head_end])
    expected = head_end + 4 * t * d
    if len(blob) != expected:
        raise LabelFileError(f"{path}: expected {expected} bytes, found {len(blob)}")
    vectors = np.frombuffer(blob[head_end:], dtype="<f4").reshape(t, d).astype(np.float64)
    return FeatureSequence(vectors, video_id or path.rsplit("/", 1)[-1].removesuffix(".bin"))
