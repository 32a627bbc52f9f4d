"""Component ablations: one run per arm under a shared seed and dataset.

Arms differ only in their component flags, so any metric gap is
attributable to the toggled component. Stage models that would be
trained identically in several arms (the synthesizer, the noise filter)
are trained once per labeled split and injected; every stage reseeds
itself, so injection cannot change any arm's results.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from ..config import AblationSection, ExperimentConfig, resolve_dataset_section
from ..data import build_splits
from ..exceptions import TrainingDivergedError
from .report import plot_map_vs_epoch, plot_pr_curves
from .runs import RunResult, execute_run, read_pr_csv, train_noise_filter, train_synthesizer

ARM_FLAGS = {
    "baseline": dict(
        use_mamba_head=False, use_semisup=False, use_diffusion_synth=False, use_clip_filter=False
    ),
    "ssm_head": dict(
        use_mamba_head=True, use_semisup=False, use_diffusion_synth=False, use_clip_filter=False
    ),
    "semisup": dict(
        use_mamba_head=True, use_semisup=True, use_diffusion_synth=False, use_clip_filter=False
    ),
    "semisup_synth": dict(
        use_mamba_head=True, use_semisup=True, use_diffusion_synth=True, use_clip_filter=False
    ),
    "full": dict(
        use_mamba_head=True, use_semisup=True, use_diffusion_synth=True, use_clip_filter=True
    ),
}
DEFAULT_ARMS = tuple(ARM_FLAGS)

ABLATION_COLUMNS = ("arm", "recall", "precision", "map50", "status")


@dataclass
class ArmOutcome:
    """One table row; metrics are None when the arm diverged."""

    name: str
    status: str
    run_dir: Optional[Path] = None
    map50: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    error: str = ""
    result: Optional[RunResult] = None


def arm_config(
    cfg: ExperimentConfig, arm: str, labeled_fraction: Optional[float] = None
) -> ExperimentConfig:
    """The base config with the arm's component flags swapped in."""
    if arm not in ARM_FLAGS:
        raise ValueError(f"unknown ablation arm {arm!r}; known: {sorted(ARM_FLAGS)}")
    if labeled_fraction is None:
        labeled_fraction = cfg.ablation.labeled_fraction
    section = AblationSection(labeled_fraction=labeled_fraction, **ARM_FLAGS[arm])
    return dataclasses.replace(cfg, ablation=section)


def run_ablation(
    cfg: ExperimentConfig,
    out_dir,
    arms: Sequence[str] = DEFAULT_ARMS,
    fractions: Optional[Sequence[float]] = None,
    log_fn=None,
) -> List[ArmOutcome]:
    """Runs every arm, tolerating per-arm divergence, and writes the table.

    With ``fractions`` given, each arm runs once per annotation ratio and
    the arm name carries the percentage. A diverged arm is recorded with
    its error and the remaining arms still run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    say = log_fn or (lambda msg: None)
    variants = []
    if fractions is None:
        variants = [(arm, None, arm) for arm in arms]
    else:
        for frac in fractions:
            for arm in arms:
                variants.append((arm, frac, f"{arm}_lab{int(round(frac * 100))}"))

    shared_synth: Dict[tuple, object] = {}
    shared_filter: Dict[tuple, object] = {}
    outcomes: List[ArmOutcome] = []
    for arm, frac, name in variants:
        cfg_arm = arm_config(cfg, arm, labeled_fraction=frac)
        counts = resolve_dataset_section(cfg_arm).counts()
        say(f"arm {name}: flags={ARM_FLAGS[arm]} counts={counts}")
        synthesizer = noise_filter = None
        try:
            if cfg_arm.ablation.use_diffusion_synth:
                if counts not in shared_synth:
                    data = build_splits(counts, seed=cfg_arm.seed, size=cfg_arm.dataset.size)
                    shared_synth[counts] = train_synthesizer(cfg_arm, data.labeled_train)
                synthesizer = shared_synth[counts]
            if cfg_arm.ablation.use_clip_filter:
                if counts not in shared_filter:
                    data = build_splits(counts, seed=cfg_arm.seed, size=cfg_arm.dataset.size)
                    shared_filter[counts] = train_noise_filter(
                        cfg_arm, data.labeled_train, val_samples=data.val
                    )
                noise_filter = shared_filter[counts]
            result = execute_run(
                cfg_arm,
                out_dir / name,
                run_id=name,
                synthesizer=synthesizer,
                noise_filter=noise_filter,
                log_fn=log_fn,
            )
        except TrainingDivergedError as exc:
            say(f"arm {name} diverged: {exc}")
            outcomes.append(
                ArmOutcome(name=name, status="diverged", run_dir=out_dir / name, error=str(exc))
            )
            continue
        summary = result.test_summary or result.val_summary
        outcomes.append(
            ArmOutcome(
                name=name,
                status="ok",
                run_dir=result.run_dir,
                map50=summary.map50,
                precision=summary.precision,
                recall=summary.recall,
                result=result,
            )
        )
    write_ablation_csv(out_dir / "ablation.csv", outcomes)
    write_ablation_md(out_dir / "ablation.md", outcomes)
    series = {o.name: o.result.rows for o in outcomes if o.result is not None}
    if series:
        plot_map_vs_epoch(series, out_dir / "map_vs_epoch.png")
    pr_curves = {}
    for o in outcomes:
        if o.run_dir is not None and (o.run_dir / "pr_curve.csv").exists():
            pr_curves[o.name] = read_pr_csv(o.run_dir / "pr_curve.csv")
    if pr_curves:
        plot_pr_curves(pr_curves, out_dir / "pr_curves.png")
    return outcomes


def write_ablation_csv(path, outcomes: Sequence[ArmOutcome]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ABLATION_COLUMNS)
        for o in outcomes:
            if o.status == "ok":
                writer.writerow(
                    [o.name, f"{o.recall:.6f}", f"{o.precision:.6f}", f"{o.map50:.6f}", o.status]
                )
            else:
                writer.writerow([o.name, "", "", "", o.status])
    return path


def read_ablation_csv(path) -> List[ArmOutcome]:
    outcomes = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ABLATION_COLUMNS:
            raise ValueError(f"unexpected ablation columns in {path}: {reader.fieldnames}")
        for rec in reader:
            ok = rec["status"] == "ok"
            outcomes.append(
                ArmOutcome(
                    name=rec["arm"],
                    status=rec["status"],
                    map50=float(rec["map50"]) if ok else None,
                    precision=float(rec["precision"]) if ok else None,
                    recall=float(rec["recall"]) if ok else None,
                )
            )
    return outcomes


def write_ablation_md(path, outcomes: Sequence[ArmOutcome]) -> Path:
    lines = [
        "| arm | recall | precision | mAP@0.5 |",
        "| --- | ---: | ---: | ---: |",
    ]
    for o in outcomes:
        if o.status == "ok":
            lines.append(f"| {o.name} | {o.recall:.4f} | {o.precision:.4f} | {o.map50:.4f} |")
        else:
            lines.append(f"| {o.name} | diverged | diverged | diverged |")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path
