"""Run execution and the self-describing run directory.

A run directory carries everything needed to reproduce and audit it:
the resolved config, a per-epoch metrics.csv, the final PR sweep, the
model checkpoint, an optional pseudo-label audit, and a manifest that
is written once and never rewritten. metrics.csv is byte-stable: two
runs with the same config and seed produce identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import torch

from ..config import (
    ExperimentConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    resolve_dataset_section,
    resolve_filter_config,
    resolve_train_config,
    save_config,
)
from ..data import build_splits
from ..detector.network import DetectorNet
from ..diffusion import DiffusionSynthesizer
from ..filtering import ContrastiveFilter
from ..metrics import collect_predictions, evaluate_model, micro_pr_curve
from ..semisup import MetricRow, generate_pseudo_labels, run_dsym
from ..data.defects import NUM_CLASSES

METRIC_COLUMNS = ("epoch", "split", "map50", "precision", "recall", "accepted_pseudo_count")
AUDIT_COLUMNS = ("image_id", "class", "similarity", "confidence", "tau_t", "accepted")


def write_metrics_csv(path, rows) -> Path:
    """Fixed six-column schema with floats at six decimals."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r.epoch,
                    r.split,
                    f"{r.map50:.6f}",
                    f"{r.precision:.6f}",
                    f"{r.recall:.6f}",
                    r.accepted_pseudo_count,
                ]
            )
    return path


def read_metrics_csv(path) -> List[MetricRow]:
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != METRIC_COLUMNS:
            raise ValueError(f"unexpected metrics columns in {path}: {reader.fieldnames}")
        for rec in reader:
            rows.append(
                MetricRow(
                    epoch=int(rec["epoch"]),
                    split=rec["split"],
                    map50=float(rec["map50"]),
                    precision=float(rec["precision"]),
                    recall=float(rec["recall"]),
                    accepted_pseudo_count=int(rec["accepted_pseudo_count"]),
                )
            )
    return rows


def write_audit_csv(path, pseudo_labels, tau_t: float) -> Path:
    """Per-image gate evidence: similarity, confidence, threshold, verdict."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AUDIT_COLUMNS)
        for i, p in enumerate(pseudo_labels):
            sid = getattr(p.source_image, "sample_id", None) or f"sample_{i:05d}"
            cls = int(p.detections[0].defect_class) if p.detections else -1
            writer.writerow(
                [
                    sid,
                    cls,
                    f"{p.clip_similarity:.6f}",
                    f"{p.teacher_confidence:.6f}",
                    f"{tau_t:.6f}",
                    int(p.accepted),
                ]
            )
    return path


def read_audit_csv(path) -> List[dict]:
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != AUDIT_COLUMNS:
            raise ValueError(f"unexpected audit columns in {path}: {reader.fieldnames}")
        for rec in reader:
            out.append(
                {
                    "image_id": rec["image_id"],
                    "class": int(rec["class"]),
                    "similarity": float(rec["similarity"]),
                    "confidence": float(rec["confidence"]),
                    "tau_t": float(rec["tau_t"]),
                    "accepted": bool(int(rec["accepted"])),
                }
            )
    return out


def write_pr_csv(path, curve) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("recall", "precision"))
        for r, p in curve.points:
            writer.writerow([f"{r:.6f}", f"{p:.6f}"])
    return path


def read_pr_csv(path):
    recalls, precisions = [], []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            recalls.append(float(rec["recall"]))
            precisions.append(float(rec["precision"]))
    return recalls, precisions


@dataclass(frozen=True)
class RunManifest:
    """Identity and outcome of one run; written once, then read-only."""

    run_id: str
    config_hash: str
    seed: int
    started_at: str
    finished_at: str
    final_metrics: Dict[str, dict] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)


def write_manifest(manifest: RunManifest, path) -> Path:
    path = Path(path)
    if path.exists():
        raise FileExistsError(f"manifest already written: {path}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> RunManifest:
    data = json.loads(Path(path).read_text())
    return RunManifest(**data)


def save_checkpoint(path, student, teacher, detector_kwargs: dict, cfg: ExperimentConfig):
    torch.save(
        {
            "format": "dsym-run",
            "detector_kwargs": dict(detector_kwargs),
            "student": student.state_dict(),
            "teacher": teacher.state_dict(),
            "config": config_to_dict(cfg),
        },
        path,
    )


def load_checkpoint(path):
    """Returns (student, teacher, config) from a run checkpoint."""
    blob = torch.load(path, weights_only=False)
    if blob.get("format") != "dsym-run":
        raise ValueError(f"not a run checkpoint: {path}")
    student = DetectorNet(**blob["detector_kwargs"])
    student.load_state_dict(blob["student"])
    teacher = DetectorNet(**blob["detector_kwargs"])
    teacher.load_state_dict(blob["teacher"])
    student.eval()
    teacher.eval()
    return student, teacher, config_from_dict(blob["config"])


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _summary_dict(summary) -> dict:
    return {
        "map50": summary.map50,
        "precision": summary.precision,
        "recall": summary.recall,
        "per_class_ap": {str(c): summary.per_class_ap[c] for c in sorted(summary.per_class_ap)},
    }


@dataclass
class RunResult:
    """In-memory view of a finished run, for callers that keep going."""

    run_dir: Path
    manifest: RunManifest
    rows: List[MetricRow]
    val_summary: object
    test_summary: Optional[object]
    student: DetectorNet
    teacher: DetectorNet
    noise_filter: Optional[ContrastiveFilter] = None
    synthesizer: Optional[DiffusionSynthesizer] = None


def train_synthesizer(cfg: ExperimentConfig, samples, log_fn=None) -> DiffusionSynthesizer:
    df = cfg.diffusion
    synthesizer = DiffusionSynthesizer(
        d=df.cond_dim,
        T=df.T,
        beta_start=df.beta_start,
        beta_end=df.beta_end,
        kind=df.kind,
        base_channels=df.base_channels,
        epochs=df.epochs,
        batch_size=df.batch_size,
        lr=df.lr,
        steps=df.steps,
        size=cfg.dataset.size,
        seed=cfg.seed,
    )
    synthesizer.fit(samples, log_fn=log_fn)
    return synthesizer


def train_noise_filter(cfg: ExperimentConfig, samples, val_samples=None, log_fn=None) -> ContrastiveFilter:
    fl = cfg.filter
    noise_filter = ContrastiveFilter(
        d=fl.d,
        epochs=fl.epochs,
        batch_size=fl.batch_size,
        lr=fl.lr,
        temperature=fl.temperature,
        retrieval_gate=fl.retrieval_gate,
        seed=cfg.seed,
    )
    noise_filter.fit(samples, val_samples=val_samples, log_fn=log_fn)
    return noise_filter


def execute_run(
    cfg: ExperimentConfig,
    out_dir,
    run_id: Optional[str] = None,
    synthesizer: Optional[DiffusionSynthesizer] = None,
    noise_filter: Optional[ContrastiveFilter] = None,
    log_fn=None,
) -> RunResult:
    """Runs the configured pipeline end to end into a fresh directory.

    The ablation section decides which stages exist: with use_semisup off
    the schedule degenerates to supervised-only training for the same
    total number of epochs, so arms stay comparable. Pre-trained stage
    models can be injected to share work across arms.
    """
    out_dir = Path(out_dir)
    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists():
        raise FileExistsError(f"run directory already used: {out_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    started = _utcnow()
    say = log_fn or (lambda msg: None)

    flags = cfg.ablation
    ds_section = resolve_dataset_section(cfg)
    data = build_splits(ds_section.counts(), seed=cfg.seed, size=ds_section.size)
    say(
        f"dataset: {len(data.labeled_train)} labeled / {len(data.unlabeled_train)} unlabeled"
        f" / {len(data.val)} val / {len(data.test)} test"
    )

    artifacts = {"config": "config.yaml", "metrics": "metrics.csv", "checkpoint": "detector.pt"}
    save_config(cfg, out_dir / "config.yaml")

    synthesized = []
    if flags.use_diffusion_synth:
        if synthesizer is None:
            say("training diffusion synthesizer")
            synthesizer = train_synthesizer(cfg, data.labeled_train, log_fn=None)
        synthesizer.save(out_dir / "diffusion.pt")
        artifacts["diffusion"] = "diffusion.pt"
        synthesized = synthesizer.synthesize_defect_set(cfg.diffusion.per_class, seed=cfg.seed)
        say(f"synthesized {len(synthesized)} images")

    if flags.use_clip_filter:
        if noise_filter is None:
            say("training contrastive noise filter")
            noise_filter = train_noise_filter(cfg, data.labeled_train, val_samples=data.val)
        noise_filter.save(out_dir / "filter.pt")
        artifacts["filter"] = "filter.pt"

    train_config = resolve_train_config(cfg)
    if not flags.use_semisup:
        train_config = dataclasses.replace(train_config, epochs_sup=train_config.epochs_total)
    filter_config = resolve_filter_config(cfg)
    detector_kwargs = {"use_ssm": flags.use_mamba_head, "size": ds_section.size}

    result = run_dsym(
        data.labeled_train,
        data.unlabeled_train,
        data.val,
        train_config,
        synthesized=synthesized,
        noise_filter=noise_filter if flags.use_clip_filter else None,
        filter_config=filter_config,
        detector_kwargs=detector_kwargs,
        conf_thresh=cfg.train.conf_thresh,
        iou_nms=cfg.train.iou_nms,
        eval_every=cfg.train.eval_every,
        log_fn=(
            (lambda row: say(f"epoch {row.epoch} {row.split}: mAP@0.5 {row.map50:.4f}"))
            if log_fn
            else None
        ),
    )

    rows = list(result.rows)
    val_summary = evaluate_model(
        result.teacher, data.val, cfg.train.conf_thresh, cfg.train.iou_nms
    )
    test_summary = None
    final_metrics = {"val": _summary_dict(val_summary)}
    if data.test:
        for net, split in ((result.student, "test_student"), (result.teacher, "test_teacher")):
            summary = evaluate_model(net, data.test, cfg.train.conf_thresh, cfg.train.iou_nms)
            rows.append(
                MetricRow(
                    epoch=train_config.epochs_total,
                    split=split,
                    map50=summary.map50,
                    precision=summary.precision,
                    recall=summary.recall,
                    accepted_pseudo_count=0,
                )
            )
            if split == "test_teacher":
                test_summary = summary
        final_metrics["test"] = _summary_dict(test_summary)
        predictions, ground_truths = collect_predictions(
            result.teacher, data.test, cfg.train.conf_thresh, cfg.train.iou_nms
        )
        write_pr_csv(
            out_dir / "pr_curve.csv",
            micro_pr_curve(predictions, ground_truths, range(NUM_CLASSES)),
        )
        artifacts["pr_curve"] = "pr_curve.csv"

    write_metrics_csv(out_dir / "metrics.csv", rows)
    save_checkpoint(out_dir / "detector.pt", result.student, result.teacher, detector_kwargs, cfg)

    if flags.use_clip_filter and flags.use_semisup and data.unlabeled_train:
        from ..filtering import threshold_at

        t_final = train_config.epochs_total
        pseudo = generate_pseudo_labels(
            result.teacher,
            data.unlabeled_train,
            noise_filter,
            t_final,
            filter_config,
            conf_thresh=cfg.train.conf_thresh,
            iou_nms=cfg.train.iou_nms,
        )
        write_audit_csv(out_dir / "filter_audit.csv", pseudo, threshold_at(t_final, filter_config))
        artifacts["filter_audit"] = "filter_audit.csv"

    manifest = RunManifest(
        run_id=run_id or f"run-{config_hash(cfg)[:12]}-s{cfg.seed}",
        config_hash=config_hash(cfg),
        seed=cfg.seed,
        started_at=started,
        finished_at=_utcnow(),
        final_metrics=final_metrics,
        artifacts=artifacts,
    )
    write_manifest(manifest, manifest_path)
    say(f"val mAP@0.5 {val_summary.map50:.4f}" + (f", test mAP@0.5 {test_summary.map50:.4f}" if test_summary else ""))
    return RunResult(
        run_dir=out_dir,
        manifest=manifest,
        rows=rows,
        val_summary=val_summary,
        test_summary=test_summary,
        student=result.student,
        teacher=result.teacher,
        noise_filter=noise_filter,
        synthesizer=synthesizer,
    )
