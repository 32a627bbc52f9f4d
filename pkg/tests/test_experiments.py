"""Run directories, ablation arms, and report generation."""

import dataclasses
from dataclasses import asdict

import pytest
import torch

from dsym.config import config_from_dict
from dsym.data.defects import BBox, DefectClass, generate_sample
from dsym.detector.decode import Detection
from dsym.exceptions import TrainingDivergedError
from dsym.experiments import (
    ARM_FLAGS,
    DEFAULT_ARMS,
    ArmOutcome,
    RunManifest,
    acceptance_rates,
    arm_config,
    execute_run,
    generate_report,
    load_checkpoint,
    read_ablation_csv,
    read_audit_csv,
    read_manifest,
    read_metrics_csv,
    read_pr_csv,
    run_ablation,
    save_checkpoint,
    write_ablation_csv,
    write_ablation_md,
    write_audit_csv,
    write_manifest,
    write_metrics_csv,
    write_pr_csv,
)
from dsym.filtering import FilterConfig, keep_sample
from dsym.semisup import MetricRow, PseudoLabel
from tests.conftest import TINY_CONFIG


def tiny_variant(**ablation):
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in TINY_CONFIG.items()}
    data["ablation"] = ablation
    return config_from_dict(data)


class TestMetricsCSV:
    def test_exact_file_bytes(self, tmp_path):
        rows = [
            MetricRow(1, "val_student", 0.5, 1 / 3, 0.25, 0),
            MetricRow(2, "val_teacher", 0.123456789, 1.0, 0.0, 7),
        ]
        expected = (
            "epoch,split,map50,precision,recall,accepted_pseudo_count\n"
            "1,val_student,0.500000,0.333333,0.250000,0\n"
            "2,val_teacher,0.123457,1.000000,0.000000,7\n"
        )
        path = write_metrics_csv(tmp_path / "m.csv", rows)
        assert path.read_text() == expected

    def test_round_trip(self, tmp_path):
        rows = [MetricRow(3, "test_teacher", 0.75, 0.5, 0.25, 12)]
        back = read_metrics_csv(write_metrics_csv(tmp_path / "m.csv", rows))
        assert back == rows

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("epoch,split\n1,val\n")
        with pytest.raises(ValueError):
            read_metrics_csv(path)


class TestAuditCSV:
    def _pseudo(self, sim, conf, accepted, with_detection=True):
        sample = generate_sample(DefectClass.SCRATCHES, seed=0)
        detections = (
            [Detection(bbox=BBox(0.5, 0.5, 0.2, 0.2), defect_class=DefectClass.PATCHES, score=conf)]
            if with_detection
            else []
        )
        return PseudoLabel(
            source_image=sample,
            detections=detections,
            teacher_confidence=conf,
            clip_similarity=sim,
            accepted=accepted,
        )

    def test_exact_file_bytes(self, tmp_path):
        pseudo = [self._pseudo(0.5, 0.75, True), self._pseudo(0.0, 0.0, False, with_detection=False)]
        path = write_audit_csv(tmp_path / "a.csv", pseudo, tau_t=0.25)
        expected = (
            "image_id,class,similarity,confidence,tau_t,accepted\n"
            "sample_00000,2,0.500000,0.750000,0.250000,1\n"
            "sample_00001,-1,0.000000,0.000000,0.250000,0\n"
        )
        assert path.read_text() == expected

    def test_round_trip(self, tmp_path):
        pseudo = [self._pseudo(0.9, 0.6, True)]
        rows = read_audit_csv(write_audit_csv(tmp_path / "a.csv", pseudo, tau_t=0.1))
        assert rows[0]["class"] == int(DefectClass.PATCHES)
        assert rows[0]["similarity"] == pytest.approx(0.9)
        assert rows[0]["confidence"] == pytest.approx(0.6)
        assert rows[0]["tau_t"] == pytest.approx(0.1)
        assert rows[0]["accepted"] is True


class TestPRCSV:
    def test_round_trip(self, tmp_path):
        from dsym.metrics import PRCurve

        curve = PRCurve(points=[(0.25, 1.0), (0.5, 0.5)])
        recalls, precisions = read_pr_csv(write_pr_csv(tmp_path / "pr.csv", curve))
        assert recalls == [0.25, 0.5]
        assert precisions == [1.0, 0.5]


class TestManifest:
    def _manifest(self):
        return RunManifest(
            run_id="run-abc",
            config_hash="f" * 64,
            seed=7,
            started_at="2026-01-01T00:00:00+00:00",
            finished_at="2026-01-01T00:05:00+00:00",
            final_metrics={"val": {"map50": 0.5}},
            artifacts={"metrics": "metrics.csv"},
        )

    def test_round_trip(self, tmp_path):
        manifest = self._manifest()
        path = write_manifest(manifest, tmp_path / "manifest.json")
        assert read_manifest(path) == manifest

    def test_immutable_once_written(self, tmp_path):
        manifest = self._manifest()
        path = write_manifest(manifest, tmp_path / "manifest.json")
        with pytest.raises(FileExistsError):
            write_manifest(dataclasses.replace(manifest, run_id="other"), path)
        assert read_manifest(path) == manifest

    def test_dataclass_fields_survive_json(self, tmp_path):
        manifest = self._manifest()
        blob = asdict(manifest)
        assert RunManifest(**blob) == manifest


class TestCheckpoint:
    def test_round_trip_preserves_weights_and_config(self, tmp_path, tiny_cfg):
        from dsym.detector.network import DetectorNet

        torch.manual_seed(0)
        kwargs = {"dim": 16, "m": 4, "state_dim": 4, "use_ssm": False}
        student = DetectorNet(**kwargs)
        teacher = DetectorNet(**kwargs)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(path, student, teacher, kwargs, tiny_cfg)
        s2, t2, cfg2 = load_checkpoint(path)
        assert cfg2 == tiny_cfg
        assert not s2.use_ssm
        for a, b in zip(student.state_dict().values(), s2.state_dict().values()):
            assert torch.equal(a, b)
        for a, b in zip(teacher.state_dict().values(), t2.state_dict().values()):
            assert torch.equal(a, b)

    def test_foreign_file_rejected(self, tmp_path):
        path = tmp_path / "other.pt"
        torch.save({"format": "something-else"}, path)
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestExecuteRun:
    def test_full_run_artifacts(self, tiny_run):
        out = tiny_run.run_dir
        for name in (
            "config.yaml",
            "metrics.csv",
            "detector.pt",
            "diffusion.pt",
            "filter.pt",
            "filter_audit.csv",
            "pr_curve.csv",
            "manifest.json",
        ):
            assert (out / name).exists(), name
        manifest = read_manifest(out / "manifest.json")
        for rel in manifest.artifacts.values():
            assert (out / rel).exists(), rel
        assert manifest.seed == 3
        assert "val" in manifest.final_metrics and "test" in manifest.final_metrics

    def test_metric_rows_cover_both_nets_and_final_test(self, tiny_run):
        splits = [r.split for r in tiny_run.rows]
        assert "val_student" in splits
        assert "val_teacher" in splits
        assert splits.count("test_student") == 1
        assert splits.count("test_teacher") == 1
        on_disk = read_metrics_csv(tiny_run.run_dir / "metrics.csv")
        assert [r.split for r in on_disk] == splits

    def test_supervised_only_run_skips_stage_artifacts(self, tmp_path):
        cfg = tiny_variant(
            use_mamba_head=True,
            use_semisup=False,
            use_diffusion_synth=False,
            use_clip_filter=False,
        )
        result = execute_run(cfg, tmp_path / "run")
        for absent in ("diffusion.pt", "filter.pt", "filter_audit.csv"):
            assert not (result.run_dir / absent).exists(), absent
        splits = {r.split for r in result.rows}
        assert splits == {"val_student", "test_student", "test_teacher"}
        teacher_sd = result.teacher.state_dict()
        for name, param in result.student.state_dict().items():
            assert torch.equal(param, teacher_sd[name])

    def test_rerun_writes_identical_metrics_csv(self, tiny_cfg, tiny_run, tmp_path):
        again = execute_run(tiny_cfg, tmp_path / "again")
        assert (again.run_dir / "metrics.csv").read_bytes() == (
            tiny_run.run_dir / "metrics.csv"
        ).read_bytes()
        assert again.manifest.config_hash == tiny_run.manifest.config_hash

    def test_run_directory_never_reused(self, tiny_cfg, tiny_run):
        with pytest.raises(FileExistsError):
            execute_run(tiny_cfg, tiny_run.run_dir)

    def test_divergence_propagates(self, tmp_path):
        data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in TINY_CONFIG.items()}
        data["train"] = dict(data["train"], lr=1e28)
        data["ablation"] = dict(
            use_mamba_head=True,
            use_semisup=False,
            use_diffusion_synth=False,
            use_clip_filter=False,
        )
        cfg = config_from_dict(data)
        with pytest.raises(TrainingDivergedError):
            execute_run(cfg, tmp_path / "run")
        assert not (tmp_path / "run" / "manifest.json").exists()


class TestArmConfig:
    def test_known_arms_cover_flag_lattice(self):
        assert DEFAULT_ARMS == ("baseline", "ssm_head", "semisup", "semisup_synth", "full")
        assert ARM_FLAGS["baseline"] == dict(
            use_mamba_head=False,
            use_semisup=False,
            use_diffusion_synth=False,
            use_clip_filter=False,
        )
        assert all(ARM_FLAGS["full"].values())

    def test_arm_config_swaps_only_ablation_section(self, tiny_cfg):
        cfg = arm_config(tiny_cfg, "baseline")
        assert cfg.ablation.use_mamba_head is False
        assert cfg.train == tiny_cfg.train
        assert cfg.dataset == tiny_cfg.dataset
        assert cfg.seed == tiny_cfg.seed

    def test_fraction_override(self, tiny_cfg):
        cfg = arm_config(tiny_cfg, "semisup", labeled_fraction=0.4)
        assert cfg.ablation.labeled_fraction == 0.4
        assert cfg.ablation.use_semisup is True

    def test_unknown_arm_rejected(self, tiny_cfg):
        with pytest.raises(ValueError):
            arm_config(tiny_cfg, "bogus")


class TestAblationTableFiles:
    def _outcomes(self):
        return [
            ArmOutcome(name="baseline", status="ok", map50=0.5, precision=0.25, recall=1 / 3),
            ArmOutcome(name="full", status="diverged", error="loss became non-finite"),
        ]

    def test_csv_exact_bytes(self, tmp_path):
        path = write_ablation_csv(tmp_path / "a.csv", self._outcomes())
        expected = (
            "arm,recall,precision,map50,status\n"
            "baseline,0.333333,0.250000,0.500000,ok\n"
            "full,,,,diverged\n"
        )
        assert path.read_text() == expected

    def test_csv_round_trip(self, tmp_path):
        path = write_ablation_csv(tmp_path / "a.csv", self._outcomes())
        back = read_ablation_csv(path)
        assert [o.name for o in back] == ["baseline", "full"]
        assert back[0].map50 == pytest.approx(0.5)
        assert back[1].status == "diverged"
        assert back[1].map50 is None

    def test_markdown_exact(self, tmp_path):
        path = write_ablation_md(tmp_path / "a.md", self._outcomes())
        expected = (
            "| arm | recall | precision | mAP@0.5 |\n"
            "| --- | ---: | ---: | ---: |\n"
            "| baseline | 0.3333 | 0.2500 | 0.5000 |\n"
            "| full | diverged | diverged | diverged |\n"
        )
        assert path.read_text() == expected


@pytest.fixture(scope="module")
def tiny_ablation(tiny_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("ablation") / "abl"
    outcomes = run_ablation(tiny_cfg, out, arms=("baseline", "full"))
    return out, outcomes


class TestRunAblation:
    def test_outcomes_and_files(self, tiny_ablation):
        out, outcomes = tiny_ablation
        assert [o.name for o in outcomes] == ["baseline", "full"]
        assert all(o.status == "ok" for o in outcomes)
        for name in ("ablation.csv", "ablation.md", "map_vs_epoch.png", "pr_curves.png"):
            assert (out / name).exists(), name
        for arm in ("baseline", "full"):
            assert (out / arm / "metrics.csv").exists()
            assert read_manifest(out / arm / "manifest.json").run_id == arm

    def test_shared_stage_injection_matches_standalone_run(self, tiny_ablation, tiny_run):
        out, _ = tiny_ablation
        assert (out / "full" / "metrics.csv").read_bytes() == (
            tiny_run.run_dir / "metrics.csv"
        ).read_bytes()

    def test_rerun_is_byte_identical(self, tiny_cfg, tiny_ablation, tmp_path):
        out, _ = tiny_ablation
        again = tmp_path / "abl2"
        run_ablation(tiny_cfg, again, arms=("baseline", "full"))
        assert (again / "ablation.csv").read_bytes() == (out / "ablation.csv").read_bytes()
        for arm in ("baseline", "full"):
            assert (again / arm / "metrics.csv").read_bytes() == (
                out / arm / "metrics.csv"
            ).read_bytes()

    def test_diverged_arm_recorded_and_others_continue(self, tiny_cfg, tmp_path, monkeypatch):
        import dsym.experiments.ablation as ablation_mod

        real = ablation_mod.execute_run

        def flaky(cfg, out_dir, run_id=None, **kwargs):
            if run_id == "ssm_head":
                raise TrainingDivergedError("forced", snapshot={"arm": run_id})
            return real(cfg, out_dir, run_id=run_id, **kwargs)

        monkeypatch.setattr(ablation_mod, "execute_run", flaky)
        out = tmp_path / "abl"
        outcomes = run_ablation(tiny_cfg, out, arms=("baseline", "ssm_head"))
        by_name = {o.name: o for o in outcomes}
        assert by_name["baseline"].status == "ok"
        assert by_name["ssm_head"].status == "diverged"
        assert "forced" in by_name["ssm_head"].error
        table = (out / "ablation.md").read_text()
        assert "| ssm_head | diverged | diverged | diverged |" in table
        assert (out / "baseline" / "metrics.csv").exists()

    def test_fraction_sweep_names_arms_by_ratio(self, tiny_cfg, tmp_path):
        cfg = dataclasses.replace(
            tiny_cfg,
            train=dataclasses.replace(tiny_cfg.train, epochs_sup=1, epochs_total=1),
        )
        out = tmp_path / "abl"
        outcomes = run_ablation(cfg, out, arms=("baseline",), fractions=(0.4, 0.8))
        assert [o.name for o in outcomes] == ["baseline_lab40", "baseline_lab80"]
        assert all(o.status == "ok" for o in outcomes)


class TestAcceptanceRates:
    def test_hand_computed_pool(self):
        config = FilterConfig(tau_0=0.3, lambda_decay=1.0, total_steps=2, tau_conf=0.5)
        pool = [
            {"similarity": 0.2, "confidence": 0.9},
            {"similarity": 0.15, "confidence": 0.9},
            {"similarity": 0.99, "confidence": 0.4},
            {"similarity": 0.5, "confidence": 0.9},
        ]
        assert acceptance_rates(pool, config) == pytest.approx([0.25, 0.5, 0.75])

    def test_matches_gate_rule_pointwise(self):
        config = FilterConfig(tau_0=0.9, lambda_decay=3.0, total_steps=10, tau_conf=0.5)
        pool = [
            {"similarity": s, "confidence": c}
            for s in (0.05, 0.2, 0.5, 0.95)
            for c in (0.1, 0.6, 1.0)
        ]
        rates = acceptance_rates(pool, config)
        for t in range(11):
            expected = sum(
                keep_sample(r["similarity"], r["confidence"], t, config) for r in pool
            ) / len(pool)
            assert rates[t] == pytest.approx(expected)

    def test_non_decreasing_on_frozen_pool(self, tiny_run, tiny_cfg):
        from dsym.config import resolve_filter_config

        rows = read_audit_csv(tiny_run.run_dir / "filter_audit.csv")
        rates = acceptance_rates(rows, resolve_filter_config(tiny_cfg))
        assert all(b >= a for a, b in zip(rates, rates[1:]))

    def test_empty_pool_rates_are_zero(self):
        config = FilterConfig(total_steps=3)
        assert acceptance_rates([], config) == [0.0, 0.0, 0.0, 0.0]


class TestReport:
    def test_report_over_complete_and_incomplete_runs(self, tiny_run, tmp_path):
        empty = tmp_path / "not_a_run"
        empty.mkdir()
        out = tmp_path / "report"
        index = generate_report([tiny_run.run_dir, empty], out)
        assert index.exists()
        html = index.read_text()
        assert tiny_run.run_dir.name in html
        assert "Incomplete runs" in html
        assert "not_a_run" in html
        assert "manifest.json" in html
        for png in (
            "map_vs_epoch.png",
            "pr_curves.png",
            "acceptance_rate.png",
            f"{tiny_run.run_dir.name}_per_class_ap.png",
        ):
            assert (out / png).exists(), png

    def test_report_without_any_complete_run_still_builds(self, tmp_path):
        ghost = tmp_path / "ghost"
        ghost.mkdir()
        index = generate_report([ghost], tmp_path / "report")
        content = index.read_text()
        assert "Incomplete runs" in content
        assert "metrics.csv" in content

    def test_metrics_only_run_counts_as_incomplete(self, tmp_path):
        half = tmp_path / "half"
        half.mkdir()
        write_metrics_csv(half / "metrics.csv", [MetricRow(1, "val_student", 0.1, 0.1, 0.1, 0)])
        index = generate_report([half], tmp_path / "report")
        content = index.read_text()
        assert "half" in content
        assert "manifest.json" in content
