"""Tests for procedural dataset generation, splits, and disk round-trip."""

import hashlib
from collections import Counter

import numpy as np
import pytest

from dsym.data import (
    BBox,
    DefectClass,
    ImageSample,
    build_splits,
    generate_sample,
    load_dataset,
    load_samples,
    save_dataset,
    save_samples,
    with_box_masks,
)
from dsym.exceptions import DatasetIOError

SPLITS = ("test", "labeled_train", "unlabeled_train", "val")


class TestDefectClasses:
    def test_six_classes_stable_order(self):
        labels = [c.label for c in DefectClass]
        assert labels == [
            "crazing",
            "inclusion",
            "patches",
            "pitted_surface",
            "rolled_in_scale",
            "scratches",
        ]
        assert [int(c) for c in DefectClass] == [0, 1, 2, 3, 4, 5]

    def test_from_name_round_trip(self):
        for c in DefectClass:
            assert DefectClass.from_name(c.label) is c
        with pytest.raises(ValueError):
            DefectClass.from_name("dents")


class TestBBox:
    def test_fields_are_plain_floats(self):
        box = BBox(np.float64(0.5), np.float32(0.5), 0.25, 0.25)
        assert all(type(v) is float for v in (box.cx, box.cy, box.w, box.h))

    def test_corner_round_trip(self):
        box = BBox(0.5, 0.5, 0.25, 0.25)
        x1, y1, x2, y2 = box.to_corners(64)
        assert (x1, y1, x2, y2) == (24.0, 24.0, 40.0, 40.0)
        assert BBox.from_corners(x1, y1, x2, y2, 64) == box

    def test_corners_clamped_to_image(self):
        box = BBox(0.05, 0.5, 0.2, 0.2)
        x1, _, _, _ = box.to_corners(64)
        assert x1 == 0.0

    def test_invalid_boxes_rejected(self):
        with pytest.raises(ValueError):
            BBox(1.5, 0.5, 0.2, 0.2)
        with pytest.raises(ValueError):
            BBox(0.5, 0.5, 0.0, 0.2)


class TestGenerateSample:
    def test_patches_sample_contract(self):
        sample = generate_sample(DefectClass.PATCHES, seed=0, size=64)
        assert sample.image.shape == (64, 64)
        assert sample.image.dtype == np.float32
        assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0
        assert len(sample.annotations) >= 1
        assert all(cls is DefectClass.PATCHES for cls, _ in sample.annotations)
        assert sample.mask is not None and sample.mask.any()

    def test_deterministic_bit_identical(self):
        for cls in DefectClass:
            a = generate_sample(cls, seed=7, size=64)
            b = generate_sample(cls, seed=7, size=64)
            assert np.array_equal(a.image, b.image)
            assert np.array_equal(a.mask, b.mask)
            assert a.annotations == b.annotations

    def test_seeds_produce_distinct_images(self):
        a = generate_sample(DefectClass.INCLUSION, seed=0, size=64)
        b = generate_sample(DefectClass.INCLUSION, seed=1, size=64)
        assert not np.array_equal(a.image, b.image)

    def test_scratches_elongated_over_100_seeds(self):
        for seed in range(100):
            sample = generate_sample(DefectClass.SCRATCHES, seed=seed, size=64)
            for _, box in sample.annotations:
                aspect = max(box.w / box.h, box.h / box.w)
                assert aspect > 1.5, f"seed {seed}: aspect {aspect:.3f}"

    def test_annotation_count_bounds(self):
        for cls in DefectClass:
            for seed in range(20):
                n = len(generate_sample(cls, seed=seed, size=64).annotations)
                assert 1 <= n <= 3

    def test_mask_pixels_inside_some_box(self):
        for cls in DefectClass:
            for seed in range(10):
                sample = generate_sample(cls, seed=seed, size=64)
                ys, xs = np.nonzero(sample.mask)
                covered = np.zeros(len(ys), dtype=bool)
                for _, box in sample.annotations:
                    x1, y1, x2, y2 = box.to_corners(64)
                    covered |= (
                        (xs >= np.floor(x1))
                        & (xs < np.ceil(x2))
                        & (ys >= np.floor(y1))
                        & (ys < np.ceil(y2))
                    )
                assert covered.all()

    def test_defect_contrast_against_background(self):
        darker = (
            DefectClass.CRAZING,
            DefectClass.INCLUSION,
            DefectClass.PITTED_SURFACE,
            DefectClass.ROLLED_IN_SCALE,
        )
        for cls in DefectClass:
            sample = generate_sample(cls, seed=3, size=64)
            m = sample.mask.astype(bool)
            delta = sample.image[m].mean() - sample.image[~m].mean()
            assert (delta < -0.05) if cls in darker else (delta > 0.05)

    def test_size_below_minimum_rejected(self):
        with pytest.raises(ValueError):
            generate_sample(DefectClass.CRAZING, seed=0, size=16)

    def test_other_sizes_supported(self):
        sample = generate_sample(DefectClass.ROLLED_IN_SCALE, seed=2, size=96)
        assert sample.image.shape == (96, 96)


class TestBuildSplits:
    def test_paper_scale_counts_and_fraction(self):
        ds = build_splits((28, 54, 216, 6), seed=0, size=64)
        assert [len(ds.split(n)) for n in SPLITS] == [168, 324, 1296, 36]
        assert ds.labeled_fraction == 54 / (54 + 216)
        assert ds.labeled_fraction == pytest.approx(0.2)

    def test_desk_scale_fraction(self):
        ds = build_splits((10, 20, 80, 4), seed=0, size=64)
        assert ds.labeled_fraction == pytest.approx(0.2)

    def test_all_labeled_fraction_is_one(self):
        ds = build_splits((0, 5, 0, 0), seed=0, size=64)
        assert ds.labeled_fraction == 1.0

    def test_each_split_balanced_across_classes(self):
        ds = build_splits((4, 6, 10, 2), seed=1, size=64)
        for name, per_class in zip(SPLITS, (4, 6, 10, 2)):
            counts = Counter(s.sample_id.rsplit("_", 1)[0] for s in ds.split(name))
            assert set(counts) == {c.label for c in DefectClass}
            assert all(v == per_class for v in counts.values())

    def test_splits_disjoint_by_image_content(self):
        ds = build_splits((3, 4, 8, 2), seed=5, size=64)
        hashes = [
            hashlib.sha256(s.image.tobytes()).hexdigest()
            for name in SPLITS
            for s in ds.split(name)
        ]
        assert len(hashes) == len(set(hashes))

    def test_sample_ids_unique(self):
        ds = build_splits((2, 3, 5, 1), seed=0, size=64)
        ids = [s.sample_id for name in SPLITS for s in ds.split(name)]
        assert len(ids) == len(set(ids))

    def test_deterministic_across_calls(self):
        a = build_splits((2, 2, 4, 1), seed=9, size=64)
        b = build_splits((2, 2, 4, 1), seed=9, size=64)
        for name in SPLITS:
            for sa, sb in zip(a.split(name), b.split(name)):
                assert np.array_equal(sa.image, sb.image)
                assert sa.annotations == sb.annotations
                assert sa.sample_id == sb.sample_id

    def test_invalid_counts_rejected(self):
        with pytest.raises(ValueError):
            build_splits((1, 2, 3), seed=0, size=64)
        with pytest.raises(ValueError):
            build_splits((1, -1, 3, 1), seed=0, size=64)
        with pytest.raises(ValueError):
            build_splits((1, 0, 0, 1), seed=0, size=64)


class TestStore:
    def test_round_trip_preserves_annotations_and_pixels(self, tmp_path):
        ds = build_splits((2, 3, 6, 1), seed=3, size=64)
        save_dataset(ds, tmp_path)
        back = load_dataset(tmp_path)
        assert back.labeled_fraction == ds.labeled_fraction
        assert back.seed == ds.seed and back.size == ds.size
        for name in SPLITS:
            orig, loaded = ds.split(name), back.split(name)
            assert [s.sample_id for s in loaded] == [s.sample_id for s in orig]
            for so, sl in zip(orig, loaded):
                assert sl.annotations == so.annotations
                # 8-bit PNG quantization: error bounded by half a grey step
                assert np.abs(so.image - sl.image).max() <= 0.5 / 255 + 1e-6

    def test_layout_on_disk(self, tmp_path):
        ds = build_splits((1, 1, 1, 1), seed=0, size=64)
        save_dataset(ds, tmp_path)
        assert (tmp_path / "manifest.json").is_file()
        sid = ds.test[0].sample_id
        assert (tmp_path / "images" / "test" / f"{sid}.png").is_file()
        assert (tmp_path / "labels" / "test" / f"{sid}.txt").is_file()

    def test_label_line_format(self, tmp_path):
        ds = build_splits((1, 1, 1, 1), seed=0, size=64)
        save_dataset(ds, tmp_path)
        sid = ds.test[0].sample_id
        lines = (tmp_path / "labels" / "test" / f"{sid}.txt").read_text().splitlines()
        assert len(lines) == len(ds.test[0].annotations)
        for line, (cls, box) in zip(lines, ds.test[0].annotations):
            parts = line.split()
            assert len(parts) == 5
            assert int(parts[0]) == int(cls)
            assert [float(p) for p in parts[1:]] == [box.cx, box.cy, box.w, box.h]

    def test_missing_manifest_raises(self, tmp_path):
        with pytest.raises(DatasetIOError):
            load_dataset(tmp_path)

    def test_corrupt_label_names_offending_file(self, tmp_path):
        ds = build_splits((1, 1, 1, 1), seed=0, size=64)
        save_dataset(ds, tmp_path)
        sid = ds.val[0].sample_id
        victim = tmp_path / "labels" / "val" / f"{sid}.txt"
        victim.write_text("0 0.5 oops 0.2 0.2\n")
        with pytest.raises(DatasetIOError) as exc_info:
            load_dataset(tmp_path)
        assert sid in str(exc_info.value)

    def test_missing_image_raises(self, tmp_path):
        ds = build_splits((1, 1, 1, 1), seed=0, size=64)
        save_dataset(ds, tmp_path)
        sid = ds.test[0].sample_id
        (tmp_path / "images" / "test" / f"{sid}.png").unlink()
        with pytest.raises(DatasetIOError):
            load_dataset(tmp_path)

    def test_loader_reads_any_conforming_layout(self, tmp_path):
        # hand-written dataset, not produced by save_dataset
        import json

        from PIL import Image

        (tmp_path / "images" / "test").mkdir(parents=True)
        (tmp_path / "labels" / "test").mkdir(parents=True)
        for name in ("labeled_train", "unlabeled_train", "val"):
            (tmp_path / "images" / name).mkdir()
            (tmp_path / "labels" / name).mkdir()
        arr = (np.arange(64 * 64).reshape(64, 64) % 256).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(tmp_path / "images" / "test" / "x.png")
        (tmp_path / "labels" / "test" / "x.txt").write_text("2 0.5 0.5 0.25 0.25\n")
        manifest = {
            "counts": {"test": 1, "labeled_train": 0, "unlabeled_train": 0, "val": 0},
            "seed": 0,
            "size": 64,
            "labeled_fraction": 0.0,
        }
        (tmp_path / "manifest.json").write_text(json.dumps(manifest))
        ds = load_dataset(tmp_path)
        assert len(ds.test) == 1
        sample = ds.test[0]
        assert isinstance(sample, ImageSample)
        assert sample.annotations == [(DefectClass.PATCHES, BBox(0.5, 0.5, 0.25, 0.25))]


class TestFlatSampleStore:
    def test_round_trip(self, tmp_path):
        samples = [generate_sample(cls, seed=cls * 7 + 1, size=64) for cls in range(6)]
        save_samples(samples, tmp_path)
        back = load_samples(tmp_path)
        assert len(back) == 6
        for so, sl in zip(samples, back):
            assert sl.annotations == so.annotations
            assert np.abs(so.image - sl.image).max() <= 0.5 / 255 + 1e-6

    def test_layout_uses_named_split_dir(self, tmp_path):
        samples = [generate_sample(0, seed=1, size=64)]
        save_samples(samples, tmp_path, split_name="synth")
        assert (tmp_path / "manifest.json").is_file()
        pngs = list((tmp_path / "images" / "synth").glob("*.png"))
        txts = list((tmp_path / "labels" / "synth").glob("*.txt"))
        assert len(pngs) == 1 and len(txts) == 1

    def test_missing_dir_raises(self, tmp_path):
        with pytest.raises(DatasetIOError):
            load_samples(tmp_path)


class TestBoxMaskFallback:
    def test_fills_union_of_annotation_rectangles(self):
        image = np.zeros((64, 64), dtype=np.float64)
        sample = ImageSample(
            image=image,
            annotations=[
                (DefectClass.CRAZING, BBox(0.25, 0.25, 0.25, 0.25)),
                (DefectClass.PATCHES, BBox(0.75, 0.75, 0.125, 0.125)),
            ],
        )
        (out,) = with_box_masks([sample])
        expected = np.zeros((64, 64), dtype=np.uint8)
        expected[8:24, 8:24] = 1  # 0.25 +/- 0.125 of 64
        expected[44:52, 44:52] = 1  # 0.75 +/- 0.0625 of 64
        assert out.mask is not None
        assert np.array_equal(out.mask, expected)

    def test_existing_masks_untouched(self):
        sample = generate_sample(1, seed=5, size=64)
        assert sample.mask is not None
        (out,) = with_box_masks([sample])
        assert out is sample

    def test_loaded_samples_become_trainable(self, tmp_path):
        ds = build_splits((0, 2, 0, 0), seed=4, size=64)
        save_dataset(ds, tmp_path)
        loaded = load_dataset(tmp_path).labeled_train
        assert all(s.mask is None for s in loaded)
        filled = with_box_masks(loaded)
        assert all(s.mask is not None and s.mask.any() for s in filled)
        assert all(s.mask.shape == (64, 64) for s in filled)
