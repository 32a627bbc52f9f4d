"""Strict-schema run configuration.

A config file is a YAML mapping with one optional section per pipeline
stage (dataset, diffusion, train, filter, ablation) plus a top-level
seed. Every key must belong to the schema; unknown keys fail loading
instead of being silently ignored, so a typo cannot quietly change an
experiment. The resolved config serializes to JSON deterministically,
which gives every run a stable content hash for its manifest.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .exceptions import ConfigError
from .filtering import FilterConfig
from .semisup import TrainConfig


@dataclass(frozen=True)
class DatasetSection:
    """Per-class split sizes plus the canvas size.

    Defaults give 600 train images (120 labeled, 480 unlabeled; a 20%
    annotation ratio), 60 test and 24 val images across the 6 classes.
    """

    test: int = 10
    labeled: int = 20
    unlabeled: int = 80
    val: int = 4
    size: int = 64

    def counts(self):
        return (self.test, self.labeled, self.unlabeled, self.val)

    def labeled_fraction(self) -> float:
        total = self.labeled + self.unlabeled
        return self.labeled / total if total else 0.0


@dataclass(frozen=True)
class DiffusionSection:
    """Generator schedule, denoiser size, training budget, and sampler."""

    T: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    kind: str = "linear"
    base_channels: int = 16
    cond_dim: int = 64
    epochs: int = 30
    batch_size: int = 16
    lr: float = 2e-3
    steps: int = 40
    per_class: int = 20


@dataclass(frozen=True)
class TrainSection:
    """Two-phase detector training budget plus evaluation knobs.

    Mirrors the semi-supervised TrainConfig and adds the detection
    thresholds and the evaluation cadence used when logging metrics.
    """

    epochs_sup: int = 50
    epochs_total: int = 200
    alpha: float = 0.999
    tau_conf: float = 0.5
    lambda_unsup_max: float = 1.0
    ramp_epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-3
    momentum: float = 0.9
    conf_thresh: float = 0.25
    iou_nms: float = 0.5
    eval_every: int = 1


@dataclass(frozen=True)
class FilterSection:
    """Similarity-gate schedule and contrastive-encoder training knobs.

    The confidence gate tau_conf lives in the train section (single
    source of truth); total_steps resolves to train.epochs_total.
    """

    tau_0: float = 0.3
    lambda_decay: float = 1.0
    d: int = 32
    epochs: int = 150
    batch_size: int = 64
    lr: float = 3e-3
    temperature: float = 0.1
    retrieval_gate: float = 0.7


@dataclass(frozen=True)
class AblationSection:
    """Component switches; each one removes a pipeline stage when False.

    labeled_fraction, when set, re-splits the fixed per-class train total
    between labeled and unlabeled without changing any image content.
    """

    use_mamba_head: bool = True
    use_semisup: bool = True
    use_diffusion_synth: bool = True
    use_clip_filter: bool = True
    labeled_fraction: Optional[float] = None


@dataclass(frozen=True)
class ExperimentConfig:
    """One seed plus the five stage sections; the unit a run archives."""

    seed: int = 0
    dataset: DatasetSection = field(default_factory=DatasetSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    train: TrainSection = field(default_factory=TrainSection)
    filter: FilterSection = field(default_factory=FilterSection)
    ablation: AblationSection = field(default_factory=AblationSection)


_SECTIONS = {
    "dataset": DatasetSection,
    "diffusion": DiffusionSection,
    "train": TrainSection,
    "filter": FilterSection,
    "ablation": AblationSection,
}


def _coerce_value(f: dataclasses.Field, value, path: str):
    is_optional_float = f.type in ("Optional[float]", Optional[float])
    if value is None:
        if is_optional_float:
            return None
        raise ConfigError(path, "null is not allowed here")
    if f.type in ("bool", bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {type(value).__name__}")
        return value
    if f.type in ("int", int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {type(value).__name__}")
        return value
    if f.type in ("float", float) or is_optional_float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {type(value).__name__}")
        return float(value)
    if f.type in ("str", str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {type(value).__name__}")
        return value
    raise ConfigError(path, f"unsupported field type {f.type!r}")


def _coerce_section(section_cls, mapping, section_name: str):
    if not isinstance(mapping, dict):
        raise ConfigError(section_name, "section must be a mapping")
    by_name = {f.name: f for f in fields(section_cls)}
    kwargs = {}
    for key, value in mapping.items():
        if key not in by_name:
            raise ConfigError(f"{section_name}.{key}", "unknown key")
        kwargs[key] = _coerce_value(by_name[key], value, f"{section_name}.{key}")
    return section_cls(**kwargs)


def config_from_dict(data) -> ExperimentConfig:
    """Builds a validated config from a plain mapping; rejects unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    kwargs = {}
    for key, value in data.items():
        if key == "seed":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError("seed", f"expected an integer, got {type(value).__name__}")
            kwargs["seed"] = value
        elif key in _SECTIONS:
            kwargs[key] = _coerce_section(_SECTIONS[key], value, key)
        else:
            raise ConfigError(key, "unknown section")
    cfg = ExperimentConfig(**kwargs)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig):
    """Range-checks every section; raises ConfigError with a dotted path."""
    ds = cfg.dataset
    for name in ("test", "labeled", "unlabeled", "val"):
        if getattr(ds, name) < 0:
            raise ConfigError(f"dataset.{name}", "count must be >= 0")
    if ds.labeled < 1:
        raise ConfigError("dataset.labeled", "need at least one labeled image per class")
    if ds.size < 32:
        raise ConfigError("dataset.size", "canvas must be at least 32 pixels")
    df = cfg.diffusion
    for name in ("T", "base_channels", "cond_dim", "epochs", "batch_size", "steps", "per_class"):
        if getattr(df, name) < 1:
            raise ConfigError(f"diffusion.{name}", "must be >= 1")
    if df.lr <= 0:
        raise ConfigError("diffusion.lr", "must be > 0")
    if not 0 < df.beta_start <= df.beta_end < 1:
        raise ConfigError("diffusion.beta_start", "need 0 < beta_start <= beta_end < 1")
    if df.kind not in ("linear", "cosine"):
        raise ConfigError("diffusion.kind", f"unknown schedule {df.kind!r}")
    if df.steps > df.T:
        raise ConfigError("diffusion.steps", "sampler cannot use more steps than T")
    try:
        resolve_train_config(cfg)
        resolve_filter_config(cfg)
    except ValueError as exc:
        raise ConfigError("train/filter", str(exc)) from exc
    tr = cfg.train
    if not 0 < tr.conf_thresh < 1:
        raise ConfigError("train.conf_thresh", "must be in (0, 1)")
    if not 0 < tr.iou_nms < 1:
        raise ConfigError("train.iou_nms", "must be in (0, 1)")
    if tr.eval_every < 1:
        raise ConfigError("train.eval_every", "must be >= 1")
    fl = cfg.filter
    for name in ("d", "epochs", "batch_size"):
        if getattr(fl, name) < 1:
            raise ConfigError(f"filter.{name}", "must be >= 1")
    if fl.lr <= 0:
        raise ConfigError("filter.lr", "must be > 0")
    if fl.temperature <= 0:
        raise ConfigError("filter.temperature", "must be > 0")
    if not 0 < fl.retrieval_gate < 1:
        raise ConfigError("filter.retrieval_gate", "must be in (0, 1)")
    frac = cfg.ablation.labeled_fraction
    if frac is not None and not 0 < frac <= 1:
        raise ConfigError("ablation.labeled_fraction", "must be in (0, 1]")


def load_config(path) -> ExperimentConfig:
    """Reads and validates a YAML config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config file: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"invalid YAML: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def save_config(cfg: ExperimentConfig, path) -> Path:
    """Archives the fully resolved config as YAML."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))
    return path


def config_hash(cfg: ExperimentConfig) -> str:
    """sha256 over the canonical JSON form; stable across processes."""
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def resolve_train_config(cfg: ExperimentConfig) -> TrainConfig:
    tr = cfg.train
    return TrainConfig(
        epochs_sup=tr.epochs_sup,
        epochs_total=tr.epochs_total,
        alpha=tr.alpha,
        tau_conf=tr.tau_conf,
        lambda_unsup_max=tr.lambda_unsup_max,
        ramp_epochs=tr.ramp_epochs,
        batch_size=tr.batch_size,
        lr=tr.lr,
        momentum=tr.momentum,
        seed=cfg.seed,
    )


def resolve_filter_config(cfg: ExperimentConfig) -> FilterConfig:
    """Similarity schedule spanning the full training run."""
    return FilterConfig(
        tau_0=cfg.filter.tau_0,
        lambda_decay=cfg.filter.lambda_decay,
        total_steps=cfg.train.epochs_total,
        tau_conf=cfg.train.tau_conf,
    )


def resolve_dataset_section(cfg: ExperimentConfig) -> DatasetSection:
    """Applies the ablation labeled_fraction to the per-class train split.

    The per-class train total stays fixed; only the labeled/unlabeled
    boundary moves, so sweeping the fraction never changes image content.
    """
    frac = cfg.ablation.labeled_fraction
    ds = cfg.dataset
    if frac is None:
        return ds
    total = ds.labeled + ds.unlabeled
    labeled = min(max(int(round(frac * total)), 1), total)
    return dataclasses.replace(ds, labeled=labeled, unlabeled=total - labeled)
