"""Evaluation suite: frame metrics per horizon, segment-level F1 with optimal
matching, remaining-time MAE family, and remaining-surgery-duration errors.

Segment matching notes. A predicted segment may match a ground-truth segment
only when the classes agree and their inclusive-interval IoU reaches the
threshold. Among feasible pairings we pick the assignment that maximizes the
weighted match count first and total IoU second; folding the count into the
cost (scaled to dominate any possible IoU sum) makes the weighted TP unique
even when several assignments tie on IoU alone, so the metric does not depend
on solver tie-breaking.
"""

from __future__ import annotations

import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .baselines import naive1, naive2
from .core import (
    HorizonGrid,
    ground_truth_future,
    ground_truth_remaining_times,
)
from .model import regression_to_classes

_BIG = 1e15


@dataclass(frozen=True)
class Segment:
    """Maximal run of one class, inclusive minute indices."""

    start: int
    end: int
    label: int

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("segment start must not exceed end")

    @property
    def length(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class MatchConfig:
    iou_threshold: float = 0.25
    eos_weight: float = 0.5
    eos_cap_minutes: int = 4
    eos_class: int = 7

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("IoU threshold must be in (0, 1]")
        if not 0.0 < self.eos_weight <= 1.0:
            raise ValueError("EOS weight must be in (0, 1]")
        if self.eos_cap_minutes < 1:
            raise ValueError("EOS cap must be at least one minute")

    def weight(self, label: int) -> float:
        return self.eos_weight if label == self.eos_class else 1.0


def extract_segments(labels) -> list[Segment]:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot segment an empty sequence")
    out = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            out.append(Segment(start, i - 1, int(labels[start])))
            start = i
    return out


def iou(a: Segment, b: Segment) -> float:
    inter = max(0, min(a.end, b.end) - max(a.start, b.start) + 1)
    union = a.length + b.length - inter
    return inter / union


def hungarian(cost: np.ndarray) -> list[tuple[int, int]]:
    """Optimal one-to-one partial assignment on a rectangular cost matrix.

    Infeasible pairs are +inf; leaving a row or column unmatched costs
    nothing, so only pairs with negative cost attract matches. Returns the
    matched (row, col) pairs of the assignment minimizing total cost,
    equivalently maximizing the sum of -cost over matched pairs.
    """
    cost = np.asarray(cost, dtype=np.float64)
    r, g = cost.shape
    if r == 0 or g == 0:
        return []
    square = np.full((r + g, r + g), _BIG)
    real = np.where(np.isfinite(cost), cost, _BIG)
    square[:r, :g] = real
    square[:r, g:][np.arange(r), np.arange(r)] = 0.0
    square[r:, :g][np.arange(g), np.arange(g)] = 0.0
    square[r:, g:] = 0.0
    rows, cols = linear_sum_assignment(square)
    return [
        (int(i), int(j))
        for i, j in zip(rows, cols)
        if i < r and j < g and np.isfinite(cost[i, j]) and cost[i, j] < 0
    ]


def match_cost_matrix(pred_segs, gt_segs, cfg: MatchConfig) -> np.ndarray:
    """Cost used by seg_f1: -(bonus * weight + IoU) for feasible pairs.

    The bonus exceeds twice any achievable IoU sum, so minimizing cost
    maximizes the weighted match count before total IoU.
    """
    bonus = 4.0 * (min(len(pred_segs), len(gt_segs)) + 1)
    cost = np.full((len(pred_segs), len(gt_segs)), np.inf)
    for i, p in enumerate(pred_segs):
        for j, q in enumerate(gt_segs):
            if p.label == q.label:
                overlap = iou(p, q)
                if overlap >= cfg.iou_threshold:
                    cost[i, j] = -(bonus * cfg.weight(p.label) + overlap)
    return cost


def cap_eos(pred, gt, cfg: MatchConfig):
    """Drop the portion of the trailing ground-truth EOS run beyond the cap,
    from both sequences, keeping them aligned."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth must have equal length")
    run = 0
    for v in gt[::-1]:
        if v != cfg.eos_class:
            break
        run += 1
    drop = max(0, run - cfg.eos_cap_minutes)
    if drop:
        return pred[: len(pred) - drop], gt[: len(gt) - drop]
    return pred, gt


def seg_match_counts(pred, gt, cfg: MatchConfig):
    """Weighted (TP, FP, FN) between two equal-length, already-capped label
    sequences."""
    pred_segs = extract_segments(pred)
    gt_segs = extract_segments(gt)
    pairs = hungarian(match_cost_matrix(pred_segs, gt_segs, cfg))
    tp = sum(cfg.weight(pred_segs[i].label) for i, _ in pairs)
    fp = sum(cfg.weight(s.label) for k, s in enumerate(pred_segs) if k not in {i for i, _ in pairs})
    fn = sum(cfg.weight(s.label) for k, s in enumerate(gt_segs) if k not in {j for _, j in pairs})
    return tp, fp, fn


def _f1_from_counts(tp: float, fp: float, fn: float) -> float:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def seg_f1(pred, gt, cfg: MatchConfig) -> float:
    """Segment F1 on one anticipation sequence (EOS capping applied here)."""
    pred_c, gt_c = cap_eos(pred, gt, cfg)
    return _f1_from_counts(*seg_match_counts(pred_c, gt_c, cfg))


def weighted_f1(pred, gt) -> float:
    """Per-class F1 averaged with weights proportional to ground-truth
    support (classes absent from the ground truth contribute nothing)."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth must have equal length")
    if gt.size == 0:
        return 0.0
    total = 0.0
    for c in np.unique(gt):
        support = int((gt == c).sum())
        tp = int(((pred == c) & (gt == c)).sum())
        fp = int(((pred == c) & (gt != c)).sum())
        fn = support - tp
        total += (support / gt.size) * _f1_from_counts(tp, fp, fn)
    return total


def horizon_accuracy(pred, gt) -> float:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth must have equal length")
    return float((pred == gt).mean()) if gt.size else 0.0


@dataclass(frozen=True)
class MaeTriple:
    wmae: float
    inmae: float
    outmae: float
    in_count: int
    out_count: int

    @property
    def one_side_empty(self) -> bool:
        return self.in_count == 0 or self.out_count == 0


def mae_family(pred_times, gt_times, horizon: float) -> MaeTriple:
    """MAE split by whether the ground-truth occurrence falls inside the
    horizon; the weighted mean averages the two sides, an empty side
    contributing zero (flagged through the counts)."""
    pred = np.asarray(pred_times, dtype=np.float64)
    gt = np.asarray(gt_times, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth must have equal length")
    if gt.size and (gt.min() < 0 or gt.max() > horizon or pred.min() < 0 or pred.max() > horizon):
        raise ValueError(f"times must lie in [0, {horizon}]")
    inside = gt < horizon
    outside = ~inside
    err = np.abs(pred - gt)
    inmae = float(err[inside].mean()) if inside.any() else 0.0
    outmae = float(err[outside].mean()) if outside.any() else 0.0
    return MaeTriple((inmae + outmae) / 2.0, inmae, outmae,
                     int(inside.sum()), int(outside.sum()))


def per_class_in_mae(pred_times, gt_times, class_ids, horizon: float, n_classes: int):
    """Inside-horizon MAE restricted per class; NaN when a class never
    occurs inside the horizon."""
    pred = np.asarray(pred_times, dtype=np.float64)
    gt = np.asarray(gt_times, dtype=np.float64)
    cls = np.asarray(class_ids)
    out = np.full(n_classes, np.nan)
    for c in range(n_classes):
        mask = (cls == c) & (gt < horizon)
        if mask.any():
            out[c] = float(np.abs(pred[mask] - gt[mask]).mean())
    return out


@dataclass(frozen=True)
class RsdResult:
    mae_5: float
    mae_30: float
    mae_all: float
    shorter_than_30min: bool


def rsd_mae(pred_series, gt_series) -> RsdResult:
    """Remaining-surgery-duration MAEs over the last 5 / 30 / all minutes of
    one procedure; series are per-second, in minutes, unclamped ground truth."""
    pred = np.asarray(pred_series, dtype=np.float64)
    gt = np.asarray(gt_series, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 1 or pred.size == 0:
        raise ValueError("need equal-length, non-empty per-second series")
    err = np.abs(pred - gt)
    return RsdResult(
        float(err[-300:].mean()),
        float(err[-1800:].mean()),
        float(err.mean()),
        shorter_than_30min=pred.size < 1800,
    )


# ---------------------------------------------------------------------------
# predictors


@dataclass
class Prediction:
    """What a method asserts about (video, t): the recognized current class,
    one class per future minute, and optionally per-class remaining times."""

    recognized_class: int
    future_classes: np.ndarray
    remaining_times: np.ndarray | None = None


class OraclePredictor:
    """Replays the ground truth; used to sanity-check the metric plumbing."""

    def predict(self, seq, feats, t, grid) -> Prediction:
        times = ground_truth_remaining_times(seq, t, grid)
        return Prediction(int(seq.labels[t]), ground_truth_future(seq, t, grid), times)


class ModelPredictor:
    def __init__(self, model):
        self.model = model

    def predict(self, seq, feats, t, grid) -> Prediction:
        out = self.model.infer(feats.vectors[: t + 1], horizon_minutes=grid.n_minutes)
        if out.remaining_times is not None:
            classes = regression_to_classes(out.remaining_times, out.recognized_class, grid)
            return Prediction(out.recognized_class, classes, out.remaining_times)
        return Prediction(out.recognized_class, out.future_classes)


class Naive1Predictor:
    """Persists the current class; uses a recognition model when provided,
    the ground-truth current class otherwise."""

    def __init__(self, model=None):
        self.model = model

    def _current(self, seq, feats, t):
        if self.model is None:
            return int(seq.labels[t])
        _, recognized = self.model.recognize(feats.vectors[: t + 1])
        return recognized

    def predict(self, seq, feats, t, grid) -> Prediction:
        current = self._current(seq, feats, t)
        return Prediction(current, naive1(current, grid))


class Naive2Predictor(Naive1Predictor):
    """Samples each future minute from the transition priors, with a
    deterministic per-(video, t) seed."""

    def __init__(self, priors, seed: int = 0, model=None, argmax: bool = False):
        super().__init__(model)
        self.priors = priors
        self.seed = seed
        self.argmax = argmax

    def predict(self, seq, feats, t, grid) -> Prediction:
        current = self._current(seq, feats, t)
        call_seed = int(
            np.random.SeedSequence(
                [self.seed, zlib.crc32(seq.video_id.encode()), t]
            ).generate_state(1)[0]
        )
        return Prediction(current, naive2(self.priors, current, grid, call_seed, self.argmax))


# ---------------------------------------------------------------------------
# full evaluation


@dataclass(frozen=True)
class EvalConfig:
    match: MatchConfig = field(default_factory=MatchConfig)
    mean_f1_pooled: bool = False
    include_rsd: bool = False
    rsd_stride_seconds: int = 1
    jobs: int = 1


@dataclass
class MetricsReport:
    horizon: int
    recognition_accuracy: float
    recognition_f1: float
    per_horizon_f1: list[float]
    per_horizon_accuracy: list[float]
    mean_f1: float
    seg_f1: float
    wmae_per_horizon: list[float] | None = None
    inmae_per_horizon: list[float] | None = None
    outmae_per_horizon: list[float] | None = None
    per_class_inmae: list[list[float]] | None = None
    rsd: dict | None = None
    timepoints: int = 0

    def rows(self):
        """(horizon, metric, value) triples; horizon 0 carries recognition
        and run-level summaries."""
        out = [
            (0, "recognition_accuracy", self.recognition_accuracy),
            (0, "recognition_f1", self.recognition_f1),
            (0, "mean_f1", self.mean_f1),
            (0, "seg_f1", self.seg_f1),
        ]
        if self.rsd is not None:
            out += [(0, k, self.rsd[k]) for k in ("mae_5", "mae_30", "mae_all")]
        for n in range(1, self.horizon + 1):
            out.append((n, "f1", self.per_horizon_f1[n - 1]))
            out.append((n, "accuracy", self.per_horizon_accuracy[n - 1]))
            if self.wmae_per_horizon is not None:
                out.append((n, "wmae", self.wmae_per_horizon[n - 1]))
                out.append((n, "inmae", self.inmae_per_horizon[n - 1]))
                out.append((n, "outmae", self.outmae_per_horizon[n - 1]))
                for c, row in enumerate(self.per_class_inmae):
                    out.append((n, f"inmae_class_{c}", row[n - 1]))
        return out

    def to_csv(self) -> str:
        lines = ["horizon,metric,value"]
        lines += [f"{h},{m},{v!r}" for h, m, v in self.rows()]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {k: v for k, v in self.__dict__.items()}
        return json.dumps(payload, sort_keys=True, indent=1, default=float)


def minute_timepoints(length: int) -> list[int]:
    """Evaluation (and training) timepoints: every full minute into the video."""
    return list(range(60, length, 60))


def _evaluate_video(predictor, seq, feats, grid, cfg: EvalConfig):
    n = grid.n_minutes
    acc = {
        "rec": [],
        "frames": [[] for _ in range(n)],
        "seg": np.zeros(3),
        "times": [],
        "timepoints": 0,
    }
    for t in minute_timepoints(len(seq)):
        pred = predictor.predict(seq, feats, t, grid)
        gt = ground_truth_future(seq, t, grid)
        acc["rec"].append((pred.recognized_class, int(seq.labels[t])))
        pred_c, gt_c = cap_eos(pred.future_classes, gt, cfg.match)
        for idx in range(len(gt_c)):
            acc["frames"][idx].append((int(pred_c[idx]), int(gt_c[idx])))
        acc["seg"] += seg_match_counts(pred_c, gt_c, cfg.match)
        if pred.remaining_times is not None:
            gt_times = ground_truth_remaining_times(seq, t, grid)
            acc["times"].append((pred.remaining_times, gt_times))
        acc["timepoints"] += 1
    if cfg.include_rsd:
        acc["rsd"] = _rsd_series(predictor, seq, feats, grid, cfg.rsd_stride_seconds)
    return acc


def _rsd_series(predictor, seq, feats, grid, stride: int):
    """Per-second predicted and true remaining duration. The predictor runs
    every ``stride`` seconds and its value is held in between, so the output
    is always a per-second series as rsd_mae requires."""
    length = len(seq)
    preds = np.empty(length)
    held = None
    for t in range(length):
        if t % stride == 0:
            p = predictor.predict(seq, feats, t, grid)
            if p.remaining_times is None:
                return None
            held = float(p.remaining_times[-1])
        preds[t] = held
    gts = (length - np.arange(length)) / 60.0
    return preds, gts


def evaluate_run(predictor, pairs, grid: HorizonGrid, cfg: EvalConfig | None = None) -> MetricsReport:
    """Slide over every minute-aligned timepoint of every video and aggregate
    the full metric suite. Videos are processed in video-id order and merged
    deterministically; ``cfg.jobs`` > 1 fans out per video."""
    cfg = cfg or EvalConfig()
    if not pairs:
        raise ValueError("nothing to evaluate")
    ordered = sorted(pairs, key=lambda pair: pair[0].video_id)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [
                pool.submit(_evaluate_video, predictor, seq, feats, grid, cfg)
                for seq, feats in ordered
            ]
            per_video = [f.result() for f in futures]
    else:
        per_video = [
            _evaluate_video(predictor, seq, feats, grid, cfg) for seq, feats in ordered
        ]

    n = grid.n_minutes
    rec = [p for v in per_video for p in v["rec"]]
    rec_pred = np.array([p for p, _ in rec])
    rec_gt = np.array([g for _, g in rec])
    frames = [
        [p for v in per_video for p in v["frames"][idx]] for idx in range(n)
    ]
    seg_counts = np.sum([v["seg"] for v in per_video], axis=0)

    per_f1, per_acc = [], []
    for idx in range(n):
        fp = np.array([p for p, _ in frames[idx]])
        fg = np.array([g for _, g in frames[idx]])
        per_f1.append(weighted_f1(fp, fg) if fg.size else 0.0)
        per_acc.append(horizon_accuracy(fp, fg) if fg.size else 0.0)
    if cfg.mean_f1_pooled:
        all_p = np.array([p for idx in range(n) for p, _ in frames[idx]])
        all_g = np.array([g for idx in range(n) for _, g in frames[idx]])
        mean_f1 = weighted_f1(all_p, all_g) if all_g.size else 0.0
    else:
        mean_f1 = float(np.mean(per_f1)) if per_f1 else 0.0

    report = MetricsReport(
        horizon=n,
        recognition_accuracy=horizon_accuracy(rec_pred, rec_gt),
        recognition_f1=weighted_f1(rec_pred, rec_gt),
        per_horizon_f1=per_f1,
        per_horizon_accuracy=per_acc,
        mean_f1=mean_f1,
        seg_f1=_f1_from_counts(*seg_counts),
        timepoints=sum(v["timepoints"] for v in per_video),
    )

    times = [pair for v in per_video for pair in v["times"]]
    if times:
        pred_t = np.stack([p for p, _ in times])
        gt_t = np.stack([g for _, g in times])
        n_cls = pred_t.shape[1]
        cls_ids = np.broadcast_to(np.arange(n_cls), pred_t.shape)
        wm, im, om, pc = [], [], [], []
        for h in range(1, n + 1):
            ph = np.minimum(pred_t, h).ravel()
            gh = np.minimum(gt_t, h).ravel()
            triple = mae_family(ph, gh, h)
            wm.append(triple.wmae)
            im.append(triple.inmae)
            om.append(triple.outmae)
            pc.append(per_class_in_mae(ph, gh, cls_ids.ravel(), h, n_cls))
        report.wmae_per_horizon = wm
        report.inmae_per_horizon = im
        report.outmae_per_horizon = om
        report.per_class_inmae = [list(col) for col in np.array(pc).T]

    if cfg.include_rsd:
        series = [v.get("rsd") for v in per_video]
        series = [s for s in series if s is not None]
        if series:
            results = [rsd_mae(p, g) for p, g in series]
            report.rsd = {
                "mae_5": float(np.mean([r.mae_5 for r in results])),
                "mae_30": float(np.mean([r.mae_30 for r in results])),
                "mae_all": float(np.mean([r.mae_all for r in results])),
                "videos_shorter_than_30min": sum(r.shorter_than_30min for r in results),
            }
    return report


def validation_score(model, val_pairs, model_cfg) -> float:
    """Model-selection score: mean weighted F1 for classification (higher is
    better), wMAE at the full horizon for regression (lower is better)."""
    match = MatchConfig(
        eos_cap_minutes=model_cfg.eos_cap_minutes, eos_class=model_cfg.num_phases
    )
    report = evaluate_run(
        ModelPredictor(model), val_pairs, model_cfg.grid, EvalConfig(match=match)
    )
    if model_cfg.task == "classification":
        return report.mean_f1
    return report.wmae_per_horizon[-1]
