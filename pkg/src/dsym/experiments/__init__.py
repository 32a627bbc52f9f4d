from .ablation import (
    ABLATION_COLUMNS,
    ARM_FLAGS,
    DEFAULT_ARMS,
    ArmOutcome,
    arm_config,
    read_ablation_csv,
    run_ablation,
    write_ablation_csv,
    write_ablation_md,
)
from .report import (
    acceptance_rates,
    generate_report,
    plot_acceptance_rate,
    plot_map_vs_epoch,
    plot_per_class_ap,
    plot_pr_curves,
)
from .runs import (
    AUDIT_COLUMNS,
    METRIC_COLUMNS,
    RunManifest,
    RunResult,
    execute_run,
    load_checkpoint,
    read_audit_csv,
    read_manifest,
    read_metrics_csv,
    read_pr_csv,
    save_checkpoint,
    train_noise_filter,
    train_synthesizer,
    write_audit_csv,
    write_manifest,
    write_metrics_csv,
    write_pr_csv,
)

__all__ = [
    "ABLATION_COLUMNS",
    "ARM_FLAGS",
    "AUDIT_COLUMNS",
    "DEFAULT_ARMS",
    "METRIC_COLUMNS",
    "ArmOutcome",
    "RunManifest",
    "RunResult",
    "acceptance_rates",
    "arm_config",
    "execute_run",
    "generate_report",
    "load_checkpoint",
    "plot_acceptance_rate",
    "plot_map_vs_epoch",
    "plot_per_class_ap",
    "plot_pr_curves",
    "read_ablation_csv",
    "read_audit_csv",
    "read_manifest",
    "read_metrics_csv",
    "read_pr_csv",
    "run_ablation",
    "save_checkpoint",
    "train_noise_filter",
    "train_synthesizer",
    "write_ablation_csv",
    "write_ablation_md",
    "write_audit_csv",
    "write_manifest",
    "write_metrics_csv",
    "write_pr_csv",
]
