"""Experiment runner.

Subcommands: ``simulate`` (write a synthetic dataset), ``extract-priors``,
``train``, ``evaluate``, ``ribbon`` (qualitative export), ``report`` (merge
run summaries). Every command is a pure function of its config file plus the
command-line overrides; artifacts land under the output directory only.

Config files are flat ``key = value`` text with ``#`` comments; see
DEFAULTS for every key and its default.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .core import (
    Dataset,
    DomainError,
    LabelFileError,
    HorizonGrid,
    load_features,
    load_labels,
    save_features,
    save_labels,
)
from .metrics import (
    EvalConfig,
    MatchConfig,
    ModelPredictor,
    Naive1Predictor,
    Naive2Predictor,
    OraclePredictor,
    evaluate_run,
)
from .model import (
    CheckpointError,
    SwagConfig,
    TrainingDivergenceError,
    load_model,
    save_model,
    train_model,
)
from .priors import extract_transition_priors, load_priors, save_priors
from .ribbon import ribbon_csv, ribbon_matrix, ribbon_svg
from .simulate import GRAMMAR_PROFILES, build_dataset, default_feature_model

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4

METHODS = ("naive1", "naive2", "sp", "sp_star", "ar", "sp_r2c", "oracle")

MODEL_METHODS = {
    "sp": ("sp", "classification"),
    "sp_star": ("sp_star", "classification"),
    "ar": ("ar", "classification"),
    "sp_r2c": ("sp", "regression"),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data / simulation
    grammar: str = "structured"
    num_phases: int = 7
    feature_dim: int = 16
    noise_sigma: float = 0.6
    prototype_separation: float = 2.0
    feature_seed: int = 7
    counts: tuple = (10, 4, 7)
    data_dir: str = ""
    split: str = "test"
    # model
    context_seconds: int = 1440
    window_width: int = 20
    context_tokens: int = 24
    pooled_dim: int = 32
    model_dim: int = 64
    num_heads: int = 2
    decoder_layers: int = 2
    ffn_mult: int = 2
    horizon_minutes: int = 20
    prior_scale: float = 1.0
    interval_pool_cumulative: bool = True
    lr: float = 3e-4
    momentum: float = 0.9
    weight_decay: float = 1e-5
    epochs: int = 20
    val_every: int = 1
    class_weights: str = "uniform"
    # evaluation
    method: str = "sp"
    iou_threshold: float = 0.25
    eos_weight: float = 0.5
    eos_cap_minutes: int = 4
    mean_f1_pooled: bool = False
    include_rsd: bool = False
    rsd_stride: int = 1
    naive2_argmax: bool = False
    checkpoint: str = ""
    priors_path: str = ""
    video: str = ""
    time_range: tuple | None = None
    # run
    out_dir: str = "out"
    seed: int = 0
    jobs: int = 1


DEFAULTS = RunConfig()

_TUPLE_KEYS = {"counts": 3, "time_range": 2}


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        values[key] = value
    return values


def _coerce(key: str, raw: str):
    default = getattr(DEFAULTS, key)
    if key in _TUPLE_KEYS:
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) != _TUPLE_KEYS[key]:
            raise ConfigError(f"{key} needs {_TUPLE_KEYS[key]} comma-separated integers")
        return tuple(int(p) for p in parts)
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def load_run_config(path: str | None, overrides: dict) -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    cfg = RunConfig()
    if path:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for key, raw in parse_config_text(text).items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                setattr(cfg, key, _coerce(key, raw))
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if cfg.method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {cfg.method!r}")
    if cfg.grammar not in GRAMMAR_PROFILES:
        raise ConfigError(f"grammar must be one of {tuple(GRAMMAR_PROFILES)}")
    return cfg


def swag_config(cfg: RunConfig) -> SwagConfig:
    if cfg.method not in MODEL_METHODS:
        raise ConfigError(f"method {cfg.method!r} is not trainable")
    decode_mode, task = MODEL_METHODS[cfg.method]
    try:
        return SwagConfig(
            num_phases=cfg.num_phases,
            feature_dim=cfg.feature_dim,
            context_seconds=cfg.context_seconds,
            window_width=cfg.window_width,
            context_tokens=cfg.context_tokens,
            pooled_dim=cfg.pooled_dim,
            model_dim=cfg.model_dim,
            num_heads=cfg.num_heads,
            decoder_layers=cfg.decoder_layers,
            ffn_mult=cfg.ffn_mult,
            horizon_minutes=cfg.horizon_minutes,
            decode_mode=decode_mode,
            task=task,
            prior_scale=cfg.prior_scale,
            interval_pool_cumulative=cfg.interval_pool_cumulative,
            lr=cfg.lr,
            momentum=cfg.momentum,
            weight_decay=cfg.weight_decay,
            epochs=cfg.epochs,
            val_every=cfg.val_every,
            seed=cfg.seed,
            class_weights=cfg.class_weights,
            eos_cap_minutes=cfg.eos_cap_minutes,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# dataset on disk


def write_dataset(dataset: Dataset, cfg: RunConfig, out: Path):
    labels_dir = out / "labels"
    features_dir = out / "features"
    labels_dir.mkdir(parents=True, exist_ok=True)
    features_dir.mkdir(parents=True, exist_ok=True)
    videos = []
    for split in ("train", "val", "test"):
        for seq, feats in dataset.split(split):
            lpath = labels_dir / f"{seq.video_id}.csv"
            fpath = features_dir / f"{seq.video_id}.bin"
            save_labels(seq, lpath)
            save_features(feats, fpath)
            videos.append(
                {
                    "id": seq.video_id,
                    "split": split,
                    "labels": str(lpath.relative_to(out)),
                    "features": str(fpath.relative_to(out)),
                    "seconds": len(seq),
                }
            )
    manifest = {
        "grammar": cfg.grammar,
        "num_phases": cfg.num_phases,
        "feature_dim": cfg.feature_dim,
        "noise_sigma": cfg.noise_sigma,
        "seed": cfg.seed,
        "counts": list(cfg.counts),
        "videos": videos,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def load_dataset_dir(path: str) -> tuple[Dataset, dict]:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise LabelFileError(f"no manifest.json under {path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise LabelFileError(f"{manifest_path}: invalid JSON") from exc
    ds = Dataset()
    num_phases = int(manifest.get("num_phases", 7))
    for entry in manifest["videos"]:
        seq = load_labels(root / entry["labels"], num_phases, entry["id"])
        feats = load_features(root / entry["features"], entry["id"])
        if len(seq) != len(feats):
            raise LabelFileError(f"{entry['id']}: labels/features length mismatch")
        ds.split(entry["split"]).append((seq, feats))
    return ds.validate(), manifest


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: RunConfig) -> int:
    grammar = GRAMMAR_PROFILES[cfg.grammar](cfg.num_phases)
    feature_model = default_feature_model(
        cfg.num_phases, cfg.feature_dim, cfg.noise_sigma,
        seed=cfg.feature_seed, separation=cfg.prototype_separation,
    )
    dataset = build_dataset(grammar, feature_model, cfg.counts, cfg.seed)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(dataset, cfg, out)
    print(f"wrote {sum(len(dataset.split(s)) for s in ('train', 'val', 'test'))} videos to {out}")
    return EXIT_OK


def _load_data(cfg: RunConfig) -> Dataset:
    if not cfg.data_dir:
        raise ConfigError("data_dir must point at a simulated dataset")
    dataset, _ = load_dataset_dir(cfg.data_dir)
    return dataset


def cmd_extract_priors(cfg: RunConfig) -> int:
    dataset = _load_data(cfg)
    if not dataset.train:
        raise LabelFileError("dataset has no training split")
    grid = HorizonGrid(cfg.horizon_minutes)
    priors = extract_transition_priors(
        [seq for seq, _ in dataset.train], grid, cfg.num_phases
    )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_priors(priors, out / "priors.json")
    print(f"priors written to {out / 'priors.json'}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    dataset = _load_data(cfg)
    model_cfg = swag_config(cfg)
    result = train_model(dataset, model_cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_model(result.model, out / "checkpoint.bin")
    log_payload = {
        "best_epoch": result.best_epoch,
        "best_val": None if np.isnan(result.best_val) else result.best_val,
        "epochs": result.log,
        "method": cfg.method,
        "seed": cfg.seed,
    }
    (out / "train_log.json").write_text(
        json.dumps(log_payload, sort_keys=True, indent=1, default=float) + "\n",
        encoding="utf-8",
    )
    print(f"checkpoint written to {out / 'checkpoint.bin'} (best epoch {result.best_epoch})")
    return EXIT_OK


def _build_predictor(cfg: RunConfig, dataset: Dataset):
    recognizer = None
    if cfg.checkpoint and cfg.method in ("naive1", "naive2"):
        recognizer = load_model(cfg.checkpoint)
    if cfg.method == "oracle":
        return OraclePredictor()
    if cfg.method == "naive1":
        return Naive1Predictor(recognizer)
    if cfg.method == "naive2":
        if cfg.priors_path:
            priors = load_priors(cfg.priors_path)
        else:
            if not dataset.train:
                raise LabelFileError("naive2 needs priors_path or a training split")
            priors = extract_transition_priors(
                [seq for seq, _ in dataset.train],
                HorizonGrid(cfg.horizon_minutes),
                cfg.num_phases,
            )
        return Naive2Predictor(priors, cfg.seed, recognizer, cfg.naive2_argmax)
    if not cfg.checkpoint:
        raise LabelFileError(f"method {cfg.method!r} needs a checkpoint")
    model = load_model(cfg.checkpoint)
    expected = MODEL_METHODS[cfg.method]
    actual = (model.cfg.decode_mode, model.cfg.task)
    if actual != expected:
        raise ConfigError(
            f"checkpoint was trained as decode_mode={actual[0]}, task={actual[1]}; "
            f"method {cfg.method!r} expects {expected}"
        )
    return ModelPredictor(model)


def _eval_config(cfg: RunConfig) -> EvalConfig:
    match = MatchConfig(
        iou_threshold=cfg.iou_threshold,
        eos_weight=cfg.eos_weight,
        eos_cap_minutes=cfg.eos_cap_minutes,
        eos_class=cfg.num_phases,
    )
    return EvalConfig(
        match=match,
        mean_f1_pooled=cfg.mean_f1_pooled,
        include_rsd=cfg.include_rsd,
        rsd_stride_seconds=cfg.rsd_stride,
        jobs=cfg.jobs,
    )


def cmd_evaluate(cfg: RunConfig) -> int:
    dataset = _load_data(cfg)
    pairs = dataset.split(cfg.split)
    if not pairs:
        raise LabelFileError(f"split {cfg.split!r} is empty")
    predictor = _build_predictor(cfg, dataset)
    report = evaluate_run(predictor, pairs, HorizonGrid(cfg.horizon_minutes), _eval_config(cfg))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    payload = json.loads(report.to_json())
    payload["method"] = cfg.method
    payload["seed"] = cfg.seed
    payload["split"] = cfg.split
    (out / "report.json").write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    print(
        f"{cfg.method}: recognition F1 {report.recognition_f1:.3f}, "
        f"mean anticipation F1 {report.mean_f1:.3f}, SegF1 {report.seg_f1:.3f}"
    )
    return EXIT_OK


def cmd_ribbon(cfg: RunConfig) -> int:
    dataset = _load_data(cfg)
    pairs = dataset.split(cfg.split)
    match = {seq.video_id: (seq, feats) for seq, feats in pairs}
    if cfg.video not in match:
        raise LabelFileError(f"video {cfg.video!r} not in split {cfg.split!r}")
    seq, feats = match[cfg.video]
    predictor = _build_predictor(cfg, dataset)
    grid = HorizonGrid(cfg.horizon_minutes)
    minutes, matrix, gt_row = ribbon_matrix(predictor, seq, feats, grid, cfg.time_range)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"ribbon_{cfg.video}.csv").write_text(ribbon_csv(minutes, matrix), encoding="utf-8")
    (out / f"ribbon_{cfg.video}.svg").write_text(
        ribbon_svg(minutes, matrix, gt_row, cfg.num_phases), encoding="utf-8"
    )
    print(f"ribbon for {cfg.video}: {matrix.shape[0]} minutes x {matrix.shape[1]} horizon")
    return EXIT_OK


def cmd_report(cfg: RunConfig, run_files: list[str]) -> int:
    if not run_files:
        raise ConfigError("report needs at least one report.json path")
    rows = []
    for path in run_files:
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise LabelFileError(f"cannot read run summary {path}: {exc}") from exc
        name = payload.get("method", Path(path).stem)
        rows.append(
            (
                name,
                payload.get("seed", ""),
                payload.get("recognition_f1"),
                payload.get("mean_f1"),
                payload.get("seg_f1"),
            )
        )
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["method,seed,recognition_f1,mean_f1,seg_f1"]
    lines += [",".join(str(v) for v in row) for row in rows]
    (out / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print((out / "summary.csv").read_text(encoding="utf-8").rstrip())
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "extract-priors", "train", "evaluate", "ribbon", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--method", default=None, choices=METHODS)
        p.add_argument("--horizon", type=int, default=None, help="horizon in minutes")
        p.add_argument("--data", default=None, help="dataset directory")
        if name in ("evaluate", "ribbon"):
            p.add_argument("--checkpoint", default=None)
            p.add_argument("--split", default=None, choices=("train", "val", "test"))
        if name == "ribbon":
            p.add_argument("--video", default=None)
        if name == "report":
            p.add_argument("runs", nargs="*", help="report.json files to merge")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "jobs": args.jobs,
        "out_dir": args.out,
        "method": args.method,
        "horizon_minutes": args.horizon,
        "data_dir": args.data,
        "checkpoint": getattr(args, "checkpoint", None),
        "split": getattr(args, "split", None),
        "video": getattr(args, "video", None),
    }
    try:
        cfg = load_run_config(args.config, overrides)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "extract-priors":
            return cmd_extract_priors(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "ribbon":
            return cmd_ribbon(cfg)
        return cmd_report(cfg, args.runs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LabelFileError, DomainError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
