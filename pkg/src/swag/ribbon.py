"""Anticipation ribbon export: a matrix of predicted classes with the
current time running horizontally and the anticipated horizon vertically,
rendered to CSV and SVG with one stable color per phase and grey for EOS."""

from __future__ import annotations

import numpy as np

from .core import HorizonGrid
from .metrics import minute_timepoints

PHASE_COLORS = [
    "#e6732c",  # 0
    "#4c9f38",  # 1
    "#3f7fbf",  # 2
    "#c22f2f",  # 3
    "#8e5bb5",  # 4
    "#c7a72a",  # 5
    "#36a49b",  # 6
    "#d161a6",  # 7
    "#7a5230",  # 8
    "#5c6b2f",  # 9
]
EOS_COLOR = "#9e9e9e"


def class_color(label: int, eos_class: int) -> str:
    if label == eos_class:
        return EOS_COLOR
    return PHASE_COLORS[label % len(PHASE_COLORS)]


def ribbon_matrix(predictor, seq, feats, grid: HorizonGrid,
                  time_range_minutes: tuple[int, int] | None = None):
    """Predicted class matrix (evaluated minutes x N) plus the ground-truth
    current class per evaluated minute."""
    times = minute_timepoints(len(seq))
    if time_range_minutes is not None:
        lo, hi = time_range_minutes
        times = [t for t in times if lo <= t // 60 <= hi]
    if not times:
        raise ValueError("time range selects no evaluated minutes")
    matrix = np.empty((len(times), grid.n_minutes), dtype=np.int64)
    gt_row = np.empty(len(times), dtype=np.int64)
    for r, t in enumerate(times):
        matrix[r] = predictor.predict(seq, feats, t, grid).future_classes
        gt_row[r] = int(seq.labels[t])
    return np.array([t // 60 for t in times]), matrix, gt_row


def ribbon_csv(minutes, matrix) -> str:
    n = matrix.shape[1]
    lines = ["minute," + ",".join(f"h{m}" for m in range(1, n + 1))]
    for minute, row in zip(minutes, matrix):
        lines.append(f"{minute}," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def ribbon_svg(minutes, matrix, gt_row, eos_class: int, cell: int = 8) -> str:
    """Prediction panel on top (horizon grows upward), ground-truth strip
    below, current time on the horizontal axis."""
    rows, n = matrix.shape
    gap = cell
    width = rows * cell
    height = (n + 1) * cell + gap
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for r in range(rows):
        for h in range(n):
            color = class_color(int(matrix[r, h]), eos_class)
            y = (n - 1 - h) * cell
            parts.append(
                f'<rect x="{r * cell}" y="{y}" width="{cell}" height="{cell}" fill="{color}"/>'
            )
    strip_y = n * cell + gap
    for r in range(rows):
        color = class_color(int(gt_row[r]), eos_class)
        parts.append(
            f'<rect x="{r * cell}" y="{strip_y}" width="{cell}" height="{cell}" fill="{color}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
