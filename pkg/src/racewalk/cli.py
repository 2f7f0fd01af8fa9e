"""``racewalk`` command line: synth, process, train, eval, importance, pose-eval.

Numeric settings come from defaults, then an optional flat JSON ``--config``
file, then command-line flags (later wins). The effective settings are
written next to every output: inside model and metrics JSON, and as a
``<file>.meta.json`` sidecar for CSV outputs.

Exit status: 0 success, 1 partial (some inputs failed), 2 fatal.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence

from . import evaluation, pipeline, pose_metrics, synth
from .classifier import BIN_WIDTH, N_BINS, Hyperparameters, feature_importance, load_model, save_model
from .gait_cycle import CHANNELS, read_cycles_csv, write_cycles_csv
from .pose_data import FaultLabel, load_keypoint_file

logger = logging.getLogger("racewalk")

EXIT_OK, EXIT_PARTIAL, EXIT_FATAL = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    outlier_sd_mult: float = 3.0
    min_prominence_deg: float = 20.0
    min_separation_frames: int = 30
    lam: float = 1.0
    tol: float = 1e-6
    max_iter: int = 10000
    threshold: float = 0.5

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if not getattr(self, f.name) > 0:
                raise ConfigError(f"{_key(f.name)} must be positive, got {getattr(self, f.name)}")
        if not self.threshold < 1:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")

    @property
    def hyperparameters(self) -> Hyperparameters:
        return Hyperparameters(self.lam, self.tol, self.max_iter)

    def to_dict(self) -> dict:
        return {_key(k): v for k, v in dataclasses.asdict(self).items()}


def _key(field_name: str) -> str:
    # ``lambda`` is a keyword, so the attribute is ``lam``
    return "lambda" if field_name == "lam" else field_name


_FIELD_OF = {_key(f.name): f for f in dataclasses.fields(RunConfig)}
_INT_FIELDS = {"min_separation_frames", "max_iter"}


def load_config(path: Optional[str] = None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """defaults < config file < flags (``None`` overrides are ignored)."""
    values: dict[str, Any] = {}
    if path:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must be a flat JSON object")
        unknown = sorted(set(doc) - set(_FIELD_OF))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        values.update(doc)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    kwargs = {}
    for key, v in values.items():
        if isinstance(v, bool) or not isinstance(v, (int, float, str)):
            raise ConfigError(f"{key}: not a number: {v!r}")
        try:
            num = float(v)
        except ValueError:
            raise ConfigError(f"{key}: not a number: {v!r}") from None
        if key in _INT_FIELDS:
            if num != int(num):
                raise ConfigError(f"{key} must be an integer, got {v!r}")
            num = int(num)
        kwargs[_FIELD_OF[key].name] = num
    return RunConfig(**kwargs)


def _meta(cfg: RunConfig, command: str, paths: dict[str, Any], **extra) -> dict:
    return {"command": command, "config": cfg.to_dict(), "paths": paths, **extra}


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def _sidecar(target: Path) -> Path:
    return target.with_name(target.name + ".meta.json")


def _keypoint_files(items: Sequence[str]) -> list[Path]:
    out = []
    for item in items:
        p = Path(item)
        out.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    return out


def _faults(names: Optional[Sequence[str]]) -> list[FaultLabel]:
    faults = [FaultLabel.parse(n) for n in (names or ["bk", "lc"])]
    if FaultLabel.NORMAL in faults:
        raise ConfigError("fault must be bk or lc")
    return list(dict.fromkeys(faults))


def _load_models(model_dir: str, fault: Optional[FaultLabel] = None) -> list:
    models = [load_model(p) for p in sorted(Path(model_dir).glob("*.json"))]
    if fault is not None:
        models = [m for m in models if m.fault_type is fault]
    if not models:
        what = "" if fault is None else f"{fault.value} "
        raise FileNotFoundError(f"no {what}models in {model_dir}")
    return models


# -- commands -----------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig) -> int:
    base = synth.GaitParams(noise_sigma=args.noise_sigma)
    severities = {FaultLabel.BK: args.bk_severity, FaultLabel.LC: args.lc_severity}
    files, labels = synth.generate_dataset(
        args.out, args.walkers, args.samples_per_class, base, args.seed, severities=severities
    )
    print(f"wrote {len(files)} keypoint files and {labels}")
    return EXIT_OK


def cmd_process(args, cfg: RunConfig) -> int:
    files = _keypoint_files(args.keypoints)
    if not files:
        raise FileNotFoundError("no keypoint files given")
    dataset, failures = pipeline.load_inputs(files, args.labels, jobs=args.jobs)
    result = pipeline.process_dataset(
        dataset,
        outlier_sd_mult=cfg.outlier_sd_mult,
        min_prominence=cfg.min_prominence_deg,
        min_separation=cfg.min_separation_frames,
        jobs=args.jobs,
        prior_failures=failures,
    )
    out = Path(args.out)
    write_cycles_csv(result.cycles, out)
    screen = result.screen
    doc = _meta(
        cfg, "process", {"keypoints": list(args.keypoints), "labels": args.labels, "out": args.out},
        counts={s: result.count(s) for s in ("kept", "removed", "failed", "excluded")},
        screen=None if screen is None else {"pooled_sigma_deg": screen.pooled_sigma, "k": screen.k},
        valid_counts=result.valid_counts(),
        dispositions=[dataclasses.asdict(d) for d in result.dispositions],
    )
    _write_json(_sidecar(out), doc)

    for d in result.dispositions:
        if d.status != "kept":
            print(f"{d.video_id}: {d.status} ({d.reason})")
    print(" ".join(f"{k}={v}" for k, v in doc["counts"].items()))
    if not result.cycles:
        logger.error("no usable cycles")
        return EXIT_FATAL
    return EXIT_PARTIAL if result.count("failed") else EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    cycles = read_cycles_csv(args.cycles)
    out = Path(args.model_dir)
    out.mkdir(parents=True, exist_ok=True)
    for fault in _faults(args.fault):
        meta = _meta(cfg, "train", {"cycles": args.cycles, "model_dir": args.model_dir})
        res = evaluation.run_cv(
            cycles, fault, cfg.hyperparameters, cfg.threshold,
            include_other_faults=args.include_other_faults, jobs=args.jobs, metadata=meta,
        )
        for model in res.models:
            path = out / f"{model.training_fold_id}.json"
            save_model(model, path)
            print(f"{path}: converged={model.converged} iterations={model.n_iterations}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    cycles = read_cycles_csv(args.cycles)
    results = []
    for fault in _faults(args.fault):
        if args.model_dir:
            models = _load_models(args.model_dir, fault)
            results.append(evaluation.evaluate_models(cycles, models, cfg.threshold, args.include_other_faults))
        else:
            results.append(evaluation.run_cv(
                cycles, fault, cfg.hyperparameters, cfg.threshold,
                include_other_faults=args.include_other_faults, jobs=args.jobs,
            ))
    rows = [r for res in results for r in res.rows]
    paths = {"cycles": args.cycles, "model_dir": args.model_dir, "out_csv": args.out_csv, "out_json": args.out_json}
    meta = _meta(cfg, "eval", paths)
    if args.out_csv:
        evaluation.write_metrics_csv(rows, args.out_csv)
        _write_json(_sidecar(Path(args.out_csv)), meta)
    if args.out_json:
        evaluation.write_metrics_json(results, args.out_json, config=meta)
    evaluation.write_metrics_csv(rows, sys.stdout)
    return EXIT_OK


def cmd_importance(args, cfg: RunConfig) -> int:
    fault = FaultLabel.parse(args.fault) if args.fault else None
    models = _load_models(args.model_dir, fault)
    report = feature_importance(models)
    meta = _meta(cfg, "importance", {"model_dir": args.model_dir, "out_prefix": args.out_prefix},
                 fault=report.fault_type.value, n_models=report.n_models_averaged)

    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    cat_path = prefix.with_name(prefix.name + "_categories.csv")
    bin_path = prefix.with_name(prefix.name + "_frame_bins.csv")
    with open(cat_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "category", "importance"])
        for rank, (cat, value) in enumerate(report.ranked_categories(), 1):
            w.writerow([rank, cat, format(value, ".17g")])
    with open(bin_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", *(f"f{b * BIN_WIDTH}-{b * BIN_WIDTH + BIN_WIDTH - 1}" for b in range(N_BINS))])
        for name, row in zip(CHANNELS, report.frame_importance):
            w.writerow([name, *(format(v, ".17g") for v in row)])
    for path in (cat_path, bin_path):
        _write_json(_sidecar(path), meta)

    for rank, (cat, value) in enumerate(report.ranked_categories(), 1):
        print(f"{rank}. {cat:<12} {value:.5f}")
    return EXIT_OK


def cmd_pose_eval(args, cfg: RunConfig) -> int:
    pred = load_keypoint_file(args.pred)
    gts = pose_metrics.load_ground_truth_file(args.gt)
    if len(pred) != len(gts):
        raise ValueError(f"prediction has {len(pred)} frames, ground truth {len(gts)}")
    k = pose_metrics.load_constants(args.constants)
    preds = [pred.xy[i] for i in range(len(pred))]
    doc = {
        "frames": len(gts),
        "mean_oks": sum(pose_metrics.oks(p, g, k) for p, g in zip(preds, gts)) / len(gts),
        "ap": {f"{t:.2f}": pose_metrics.keypoint_ap(preds, gts, k, t) for t in pose_metrics.AP_THRESHOLDS},
        "map": pose_metrics.mean_ap(preds, gts, k),
    }
    print(f"frames   {doc['frames']}")
    print(f"OKS      {doc['mean_oks']:.4f}")
    print(f"AP@0.50  {doc['ap']['0.50']:.4f}")
    print(f"AP@0.75  {doc['ap']['0.75']:.4f}")
    print(f"mAP      {doc['map']:.4f}")
    if args.out_json:
        _write_json(Path(args.out_json), {**_meta(cfg, "pose-eval", {"pred": args.pred, "gt": args.gt}), **doc})
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _add_config_flags(p: argparse.ArgumentParser, *names: str) -> None:
    help_ = {
        "outlier_sd_mult": "outlier screen multiplier k on the pooled SD (default 3.0)",
        "min_prominence_deg": "knee-angle minimum prominence in degrees (default 20)",
        "min_separation_frames": "minimum frames between knee-angle minima (default 30)",
        "lambda": "L2 strength (default 1.0)",
        "tol": "gradient tolerance (default 1e-6)",
        "max_iter": "iteration cap (default 10000)",
        "threshold": "decision threshold on the fault probability (default 0.5)",
    }
    for name in names:
        kind = int if name in _INT_FIELDS else float
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind, default=None, help=help_[name])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="racewalk", description="Race-walking fault detection from 2D keypoints.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat JSON file of settings")
    common.add_argument("--jobs", type=int, default=1, help="worker threads (results do not depend on it)")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic keypoint dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--walkers", type=int, default=4)
    p.add_argument("--samples-per-class", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bk-severity", type=float, default=synth.DEFAULT_SEVERITY[FaultLabel.BK], help="degrees")
    p.add_argument("--lc-severity", type=float, default=synth.DEFAULT_SEVERITY[FaultLabel.LC], help="body lengths")
    p.add_argument("--noise-sigma", type=float, default=synth.GaitParams.noise_sigma, help="pixels")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("process", parents=[common], help="keypoints + labels -> processed cycles CSV")
    p.add_argument("--keypoints", nargs="+", required=True, help="keypoint JSON files or directories")
    p.add_argument("--labels", required=True, help="labels CSV")
    p.add_argument("--out", required=True, help="processed cycles CSV")
    _add_config_flags(p, "outlier_sd_mult", "min_prominence_deg", "min_separation_frames")
    p.set_defaults(func=cmd_process)

    p = sub.add_parser("train", parents=[common], help="one model per leave-one-walker-out fold")
    p.add_argument("--cycles", required=True)
    p.add_argument("--fault", action="append", choices=["bk", "lc"], help="repeatable; default both")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--include-other-faults", action="store_true", help="keep the other fault's samples as negatives")
    _add_config_flags(p, "lambda", "tol", "max_iter", "threshold")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="per-walker accuracy, precision, recall, F-score")
    p.add_argument("--cycles", required=True)
    p.add_argument("--fault", action="append", choices=["bk", "lc"], help="repeatable; default both")
    p.add_argument("--model-dir", help="score saved fold models instead of retraining")
    p.add_argument("--out-csv")
    p.add_argument("--out-json")
    p.add_argument("--include-other-faults", action="store_true", help="keep the other fault's samples as negatives")
    _add_config_flags(p, "lambda", "tol", "max_iter", "threshold")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("importance", parents=[common], help="category and frame-bin importance of fold models")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--fault", choices=["bk", "lc"], help="required when the directory holds both")
    p.add_argument("--out-prefix", required=True, help="writes <prefix>_categories.csv and <prefix>_frame_bins.csv")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("pose-eval", parents=[common], help="OKS, AP and mAP of predicted keypoints")
    p.add_argument("--pred", required=True, help="predicted keypoint file")
    p.add_argument("--gt", required=True, help="ground-truth file with visibility flags")
    p.add_argument("--constants", help="per-keypoint falloff constants JSON (default: bundled)")
    p.add_argument("--out-json")
    p.set_defaults(func=cmd_pose_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k, None) for k in _FIELD_OF}
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = load_config(args.config, overrides)
        return args.func(args, cfg)
    except (ValueError, OSError) as exc:
        # ConfigError, DatasetError, KeypointFileError, LayoutMismatchError and
        # FoldError are all ValueErrors
        logger.error("%s", exc)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
