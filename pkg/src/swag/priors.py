"""Conditional future-class transition tensor.

``P[i, j, n]`` is the training-set probability of observing class ``j``
exactly ``n`` minutes after a second whose class is ``i``. Seconds past the
end of a recording count as EOS, so every row over ``j`` is a proper
distribution. Rows with no observations fall back to uniform and are flagged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._kernels import transition_counts
from .core import HorizonGrid, LabeledSequence, LabelFileError, num_classes

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class TransitionPriorTensor:
    """Row-normalized tensor of shape (phases, phases+1, horizon minutes)."""

    probs: np.ndarray
    unobserved: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 3 or probs.shape[1] != probs.shape[0] + 1:
            raise ValueError("tensor must have shape (C, C+1, N)")
        if (probs < 0).any():
            raise ValueError("probabilities must be non-negative")
        sums = probs.sum(axis=1)
        if not np.all(np.abs(sums - 1.0) <= ROW_SUM_TOL):
            raise ValueError("every (class, minute) row must sum to 1")
        self.probs.setflags(write=False)

    @property
    def num_phases(self) -> int:
        return int(self.probs.shape[0])

    @property
    def n_minutes(self) -> int:
        return int(self.probs.shape[2])

    def row(self, current_class: int, minute: int) -> np.ndarray:
        """Distribution over future classes ``minute`` minutes ahead."""
        if not 0 <= current_class < self.num_phases:
            raise ValueError(
                f"conditioning class must be a real phase < {self.num_phases}, "
                f"got {current_class}"
            )
        if not 1 <= minute <= self.n_minutes:
            raise ValueError(f"minute {minute} outside [1, {self.n_minutes}]")
        return self.probs[current_class, :, minute - 1]


def extract_transition_priors(
    train_sequences: list[LabeledSequence],
    grid: HorizonGrid,
    num_phases: int,
    stride_seconds: int = 1,
) -> TransitionPriorTensor:
    """Count (current class, future class) pairs over every training second.

    The counting stride defaults to one second; coarser strides are exposed
    for experimentation and only change estimator variance.
    """
    if not train_sequences:
        raise ValueError("cannot extract priors from an empty training set")
    if stride_seconds < 1:
        raise ValueError("stride must be >= 1 second")
    n = grid.n_minutes
    counts = np.zeros((num_phases, num_classes(num_phases), n), dtype=np.int64)
    for seq in train_sequences:
        if seq.num_phases != num_phases:
            raise ValueError(f"{seq.video_id}: sequence has {seq.num_phases} phases, expected {num_phases}")
        counts += transition_counts(seq.labels, n, num_phases, grid.step_seconds, stride_seconds)
    totals = counts.sum(axis=1, keepdims=True)
    probs = np.where(totals > 0, counts / np.maximum(totals, 1), 1.0 / num_classes(num_phases))
    unobserved = frozenset(
        (i, minute) for i in range(num_phases) for minute in range(1, n + 1)
        if totals[i, 0, minute - 1] == 0
    )
    return TransitionPriorTensor(probs, unobserved)


def prior_probability_vectors(
    priors: TransitionPriorTensor, current_class: int, grid: HorizonGrid
) -> np.ndarray:
    """Stacked rows P[current, :, n] for n = 1..N, shape (N, C+1)."""
    if grid.n_minutes > priors.n_minutes:
        raise ValueError(
            f"grid horizon {grid.n_minutes} exceeds tensor horizon {priors.n_minutes}"
        )
    return np.stack([priors.row(current_class, m) for m in range(1, grid.n_minutes + 1)]) \
        if grid.n_minutes else np.zeros((0, num_classes(priors.num_phases)))


def sample_future_sequence(
    priors: TransitionPriorTensor, current_class: int, grid: HorizonGrid, seed: int
) -> np.ndarray:
    """Draw one class per future minute, independently per minute index."""
    rng = np.random.default_rng(np.random.SeedSequence([0x5EED, seed]))
    out = np.empty(grid.n_minutes, dtype=np.int64)
    classes = num_classes(priors.num_phases)
    for m in range(1, grid.n_minutes + 1):
        out[m - 1] = rng.choice(classes, p=priors.row(current_class, m))
    return out


def save_priors(priors: TransitionPriorTensor, path):
    c, c_out, n = priors.probs.shape
    payload = {
        "c_in": c,
        "c_out": c_out,
        "n": n,
        "data": priors.probs.ravel(order="C").tolist(),
        "unobserved": sorted([i, m] for i, m in priors.unobserved),
    }
    with open(str(path), "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_priors(path) -> TransitionPriorTensor:
    try:
        with open(str(path), "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise LabelFileError(f"{path}: not a valid priors file") from exc
    try:
        c, c_out, n = int(payload["c_in"]), int(payload["c_out"]), int(payload["n"])
        data = np.asarray(payload["data"], dtype=np.float64)
        unobserved = frozenset((int(i), int(m)) for i, m in payload.get("unobserved", []))
    except (KeyError, TypeError, ValueError) as exc:
        raise LabelFileError(f"{path}: missing or malformed priors fields") from exc
    if c_out != c + 1:
        raise LabelFileError(f"{path}: c_out must equal c_in + 1")
    if data.size != c * c_out * n:
        raise LabelFileError(
            f"{path}: expected {c * c_out * n} values, found {data.size}"
        )
    return TransitionPriorTensor(data.reshape(c, c_out, n), unobserved)
