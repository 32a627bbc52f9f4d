"""Command-line interface for the full defect-detection workflow.

Subcommands cover the pipeline end to end: dataset generation, diffusion
training and sampling, detector training, evaluation, single-image
detection, component ablations, pseudo-label gate audits, and static
reports. Exit codes: 0 on success, 2 on configuration or input errors,
3 when training diverges.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import (
    ExperimentConfig,
    load_config,
    resolve_dataset_section,
    resolve_filter_config,
    resolve_train_config,
)
from .data import build_splits, load_dataset, save_dataset, save_samples, with_box_masks
from .data.defects import CLASS_NAMES
from .detector.decode import detect
from .diffusion import DiffusionSynthesizer
from .exceptions import ConfigError, DatasetIOError, TrainingDivergedError
from .experiments import (
    execute_run,
    generate_report,
    load_checkpoint,
    run_ablation,
    train_synthesizer,
    write_audit_csv,
)
from .experiments.ablation import DEFAULT_ARMS, write_ablation_md
from .filtering import ContrastiveFilter, threshold_at
from .metrics import evaluate_model
from .semisup import generate_pseudo_labels

SPLIT_ALIASES = {
    "test": "test",
    "val": "val",
    "labeled": "labeled_train",
    "labeled_train": "labeled_train",
    "unlabeled": "unlabeled_train",
    "unlabeled_train": "unlabeled_train",
}


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


def _out_dir(args, default: str) -> Path:
    return Path(getattr(args, "out", None) or default)


def _say(msg: str):
    print(msg, flush=True)


def _load_run(ckpt):
    """Accepts a run directory or a detector checkpoint file."""
    path = Path(ckpt)
    if path.is_dir():
        detector = path / "detector.pt"
        if not detector.exists():
            raise FileNotFoundError(f"no detector.pt in run directory {path}")
        student, teacher, cfg = load_checkpoint(detector)
        filter_path = path / "filter.pt"
        noise_filter = ContrastiveFilter.load(filter_path) if filter_path.exists() else None
        return student, teacher, cfg, noise_filter
    student, teacher, cfg = load_checkpoint(path)
    return student, teacher, cfg, None


def cmd_make_data(args) -> int:
    cfg = _resolve_config(args)
    section = resolve_dataset_section(cfg)
    out = _out_dir(args, "dataset")
    data = build_splits(section.counts(), seed=cfg.seed, size=section.size)
    save_dataset(data, out)
    digest = hashlib.sha256((out / "manifest.json").read_bytes()).hexdigest()
    _say(
        f"dataset at {out}: {len(data.labeled_train)} labeled + "
        f"{len(data.unlabeled_train)} unlabeled train, {len(data.val)} val, "
        f"{len(data.test)} test"
    )
    _say(f"manifest sha256 {digest}")
    return 0


def cmd_train_diffusion(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, "diffusion")
    out.mkdir(parents=True, exist_ok=True)
    if args.data:
        samples = with_box_masks(load_dataset(args.data).labeled_train)
    else:
        section = resolve_dataset_section(cfg)
        samples = build_splits(section.counts(), seed=cfg.seed, size=section.size).labeled_train
    if not samples:
        raise ValueError("no labeled samples to train the synthesizer on")
    _say(f"training diffusion synthesizer on {len(samples)} labeled images")
    synthesizer = train_synthesizer(
        cfg, samples, log_fn=lambda e, l: _say(f"epoch {e}: loss {l:.5f}")
    )
    ckpt = out / "diffusion.pt"
    synthesizer.save(ckpt)
    _say(f"saved {ckpt}")
    return 0


def cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    synthesizer = DiffusionSynthesizer.load(args.ckpt)
    per_class = args.per_class if args.per_class is not None else cfg.diffusion.per_class
    out = _out_dir(args, "synth")
    samples = synthesizer.synthesize_defect_set(per_class, seed=cfg.seed)
    save_samples(samples, out)
    _say(f"wrote {len(samples)} synthetic images ({per_class} per class) to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, "run")
    synthesizer = DiffusionSynthesizer.load(args.diffusion_ckpt) if args.diffusion_ckpt else None
    result = execute_run(cfg, out, synthesizer=synthesizer, log_fn=_say)
    _say(f"run complete: {result.run_dir} (id {result.manifest.run_id})")
    return 0


def cmd_evaluate(args) -> int:
    student, teacher, cfg, _ = _load_run(args.ckpt)
    net = teacher if args.use == "teacher" else student
    section = resolve_dataset_section(cfg)
    data = build_splits(section.counts(), seed=cfg.seed, size=section.size)
    samples = data.split(SPLIT_ALIASES[args.split])
    if not samples:
        raise ValueError(f"split {args.split!r} is empty under this config")
    summary = evaluate_model(net, samples, cfg.train.conf_thresh, cfg.train.iou_nms)
    _say(f"{args.use} on {args.split} ({len(samples)} images)")
    _say(
        f"mAP@0.5 {summary.map50:.4f}  precision {summary.precision:.4f}  "
        f"recall {summary.recall:.4f}"
    )
    for cid in sorted(summary.per_class_ap):
        ap = summary.per_class_ap[cid]
        shown = "undefined" if ap is None else f"{ap:.4f}"
        _say(f"  {CLASS_NAMES[cid]}: {shown}")
    return 0


def cmd_detect(args) -> int:
    student, teacher, cfg, _ = _load_run(args.ckpt)
    net = teacher if args.use == "teacher" else student
    try:
        with Image.open(args.image) as img:
            gray = img.convert("L")
            orig_w, orig_h = gray.size
            resized = gray.resize((net.size, net.size), Image.BILINEAR)
    except OSError as exc:
        raise DatasetIOError(args.image, f"cannot read image: {exc}") from exc
    image = torch.from_numpy(np.asarray(resized, dtype=np.float32) / 255.0)
    conf = args.conf if args.conf is not None else cfg.train.conf_thresh
    detections = detect(net, image, conf, cfg.train.iou_nms)
    sx, sy = orig_w / net.size, orig_h / net.size
    for d in detections:
        cls, score, x1, y1, x2, y2 = d.to_tuple(net.size)
        print(f"{cls} {score:.4f} {x1 * sx:.2f} {y1 * sy:.2f} {x2 * sx:.2f} {y2 * sy:.2f}")
    return 0


def cmd_ablation(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args, "ablation")
    outcomes = run_ablation(
        cfg, out, arms=args.arms, fractions=args.fractions, log_fn=_say
    )
    table = (out / "ablation.md").read_text()
    _say(table.rstrip())
    diverged = [o.name for o in outcomes if o.status != "ok"]
    if diverged:
        _say(f"diverged arms (recorded): {', '.join(diverged)}")
    return 0


def cmd_filter_audit(args) -> int:
    student, teacher, cfg, noise_filter = _load_run(args.ckpt)
    if args.filter_ckpt:
        noise_filter = ContrastiveFilter.load(args.filter_ckpt)
    section = resolve_dataset_section(cfg)
    data = build_splits(section.counts(), seed=cfg.seed, size=section.size)
    samples = data.split(SPLIT_ALIASES[args.split])
    if not samples:
        raise ValueError(f"split {args.split!r} is empty under this config")
    filter_config = resolve_filter_config(cfg)
    step = args.step if args.step is not None else resolve_train_config(cfg).epochs_total
    pseudo = generate_pseudo_labels(
        teacher,
        samples,
        noise_filter,
        step,
        filter_config,
        conf_thresh=cfg.train.conf_thresh,
        iou_nms=cfg.train.iou_nms,
    )
    out = _out_dir(args, ".")
    out.mkdir(parents=True, exist_ok=True)
    path = write_audit_csv(out / "filter_audit.csv", pseudo, threshold_at(step, filter_config))
    accepted = sum(p.accepted for p in pseudo)
    _say(f"audited {len(pseudo)} images at step {step}: {accepted} accepted")
    if noise_filter is None or not getattr(noise_filter, "usable_", False):
        _say("filter unusable or absent: similarity gate passed through")
    _say(f"wrote {path}")
    return 0


def cmd_report(args) -> int:
    run_dirs = []
    for entry in args.runs:
        path = Path(entry)
        if (path / "manifest.json").exists() or (path / "metrics.csv").exists():
            run_dirs.append(path)
        elif path.is_dir():
            children = sorted(p for p in path.iterdir() if p.is_dir())
            run_dirs.extend(children if children else [path])
        else:
            run_dirs.append(path)
    out = _out_dir(args, "report")
    index = generate_report(run_dirs, out)
    _say(f"report at {index}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config", default=argparse.SUPPRESS, help="YAML experiment config file"
    )
    common.add_argument(
        "--seed", type=int, default=argparse.SUPPRESS, help="override the config seed"
    )
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")

    parser = argparse.ArgumentParser(
        prog="dsym",
        description="semi-supervised surface-defect detection workflow",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", parents=[common], help="generate the synthetic dataset")
    p.set_defaults(fn=cmd_make_data)

    p = sub.add_parser(
        "train-diffusion", parents=[common], help="train the conditional synthesizer"
    )
    p.add_argument("--data", help="existing dataset directory (default: generate from config)")
    p.set_defaults(fn=cmd_train_diffusion)

    p = sub.add_parser("synth", parents=[common], help="sample synthetic defect images")
    p.add_argument("--ckpt", required=True, help="synthesizer checkpoint")
    p.add_argument("--per-class", type=int, help="images per class")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="run the configured training pipeline")
    p.add_argument("--diffusion-ckpt", help="reuse a trained synthesizer")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True, help="run directory or detector checkpoint")
    p.add_argument("--split", default="test", choices=sorted(SPLIT_ALIASES))
    p.add_argument("--use", default="teacher", choices=("teacher", "student"))
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("detect", parents=[common], help="detect defects in one image")
    p.add_argument("--image", required=True, help="input image file")
    p.add_argument("--ckpt", required=True, help="run directory or detector checkpoint")
    p.add_argument("--use", default="teacher", choices=("teacher", "student"))
    p.add_argument("--conf", type=float, help="score threshold override")
    p.set_defaults(fn=cmd_detect)

    p = sub.add_parser("ablation", parents=[common], help="run component-ablation arms")
    p.add_argument("--arms", nargs="+", default=list(DEFAULT_ARMS), choices=sorted(DEFAULT_ARMS))
    p.add_argument("--fractions", nargs="+", type=float, help="annotation-ratio sweep")
    p.set_defaults(fn=cmd_ablation)

    p = sub.add_parser(
        "filter-audit", parents=[common], help="audit the pseudo-label gate on a split"
    )
    p.add_argument("--ckpt", required=True, help="run directory or detector checkpoint")
    p.add_argument("--filter-ckpt", help="filter checkpoint when not inside the run directory")
    p.add_argument("--split", default="unlabeled", choices=sorted(SPLIT_ALIASES))
    p.add_argument("--step", type=int, help="schedule step (default: total epochs)")
    p.set_defaults(fn=cmd_filter_audit)

    p = sub.add_parser("report", parents=[common], help="build a static report from runs")
    p.add_argument("--runs", nargs="+", required=True, help="run directories or their parent")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
