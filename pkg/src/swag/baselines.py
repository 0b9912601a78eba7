"""Comparison anchors for the anticipation task.

``naive1`` freezes the current class over the whole horizon. ``naive2``
draws one class per future minute from the transition-prior tensor,
independently per minute, which keeps its frame-level scores competitive but
fragments its predictions into many short segments.
"""

from __future__ import annotations

import numpy as np

from .core import HorizonGrid
from .priors import TransitionPriorTensor, sample_future_sequence


def naive1(current_class: int, grid: HorizonGrid) -> np.ndarray:
    """Extend the current class across all N future minutes."""
    return np.full(grid.n_minutes, int(current_class), dtype=np.int64)


def naive2(priors: TransitionPriorTensor, current_class: int, grid: HorizonGrid,
           seed: int, argmax: bool = False) -> np.ndarray:
    """Sample each future minute from P[current, :, minute].

    ``argmax=True`` is a deterministic variant (most likely class per minute)
    kept for tests; the sampling form is the reference behaviour.
    """
    if grid.n_minutes > priors.n_minutes:
        raise ValueError(
            f"grid horizon {grid.n_minutes} exceeds prior horizon {priors.n_minutes}"
        )
    if argmax:
        return np.array(
            [int(priors.row(current_class, m).argmax()) for m in range(1, grid.n_minutes + 1)],
            dtype=np.int64,
        )
    return sample_future_sequence(priors, current_class, grid, seed)
