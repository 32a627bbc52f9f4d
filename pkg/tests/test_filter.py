"""Cross-modal filter: encoders, similarity, decaying gate, contrastive training."""

import itertools
import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from dsym.data.defects import BBox, DefectClass, ImageSample
from dsym.data.splits import build_splits
from dsym.exceptions import TrainingDivergedError
from dsym.filtering import (
    BACKGROUND_PROMPT,
    BACKGROUND_ROW,
    PROMPTS,
    ContrastiveFilter,
    FilterConfig,
    ImageEncoder,
    PromptTable,
    build_crop_dataset,
    contrastive_loss,
    cosine_similarity,
    crop_region,
    crops_to_batch,
    keep_sample,
    prompt_for,
    retrieval_accuracy,
    sample_background_box,
    threshold_at,
    train_contrastive,
)
from oracles import (
    finite_difference_gradient,
    gate_rule_ref,
    relative_gradient_error,
)


@pytest.fixture(scope="module")
def filter_splits():
    ds = build_splits((0, 10, 0, 5), seed=7, size=64)
    return ds.split("labeled_train"), ds.split("val")


@pytest.fixture(scope="module")
def fitted_filter(filter_splits):
    train, val = filter_splits
    return ContrastiveFilter(seed=0).fit(train, val_samples=val)


class TestPrompts:
    def test_seven_distinct_prompts(self):
        assert len(PROMPTS) == 7
        assert len(set(PROMPTS)) == 7
        assert PROMPTS[BACKGROUND_ROW] == BACKGROUND_PROMPT

    def test_prompt_rendering(self):
        assert prompt_for(DefectClass.CRAZING) == "A photo with crazing defect"
        assert prompt_for(None) == "A photo with no defect"

    def test_encode_prompt_deterministic(self):
        table = PromptTable(d=16)
        a = table.encode_prompt(DefectClass.PATCHES)
        b = table.encode_prompt(DefectClass.PATCHES)
        assert torch.equal(a, b)

    def test_encode_prompt_unknown_class(self):
        table = PromptTable()
        with pytest.raises(ValueError):
            table.encode_prompt(17)

    def test_background_row_distinct_from_classes(self):
        table = PromptTable(d=8)
        bg = table.encode_prompt(None)
        cls0 = table.encode_prompt(DefectClass.CRAZING)
        assert not torch.equal(bg, cls0)


class TestImageEncoder:
    def test_output_shape_any_input_size(self):
        torch.manual_seed(0)
        enc = ImageEncoder(d=32)
        for hw in [(32, 32), (16, 40), (64, 64)]:
            out = enc(torch.rand(3, 1, *hw))
            assert out.shape == (3, 32)

    def test_deterministic(self):
        torch.manual_seed(0)
        enc = ImageEncoder(d=16)
        x = torch.rand(2, 1, 20, 20)
        assert torch.equal(enc(x), enc(x))


class TestCosineSimilarity:
    def test_identical_unit_vectors(self):
        v = np.array([0.6, 0.8])
        assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_vectors(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0, abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            v, w = rng.normal(size=8), rng.normal(size=8)
            base = cosine_similarity(v, w)
            assert abs(cosine_similarity(2.0 * v, w) - base) < 1e-9
            assert abs(cosine_similarity(v, 7.5 * w) - base) < 1e-9

    def test_bounds(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            s = cosine_similarity(rng.normal(size=16), rng.normal(size=16))
            assert -1.0 - 1e-9 <= s <= 1.0 + 1e-9

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            cosine_similarity(np.zeros(4), np.ones(4))
        with pytest.raises(ValueError):
            cosine_similarity(np.ones(4), np.zeros(4))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            cosine_similarity(np.ones(3), np.ones(4))

    def test_torch_inputs_accepted(self):
        a, b = torch.tensor([1.0, 1.0]), torch.tensor([1.0, -1.0])
        assert cosine_similarity(a, b) == pytest.approx(0.0, abs=1e-12)


class TestFilterConfig:
    def test_defaults(self):
        cfg = FilterConfig()
        assert cfg.tau_0 == 0.3 and cfg.lambda_decay == 1.0 and cfg.tau_conf == 0.5

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"tau_0": 0.0},
            {"tau_0": 1.0},
            {"lambda_decay": -0.1},
            {"total_steps": 0},
            {"total_steps": 1.5},
            {"tau_conf": -0.01},
            {"tau_conf": 1.01},
        ],
    )
    def test_invalid_configs(self, kwargs):
        with pytest.raises(ValueError):
            FilterConfig(**kwargs)


class TestThresholdAt:
    def test_start_is_tau0(self):
        cfg = FilterConfig(tau_0=0.3)
        assert threshold_at(0, cfg) == pytest.approx(0.3, abs=1e-15)

    def test_end_value(self):
        # tau_0 * e^-1 at t = total_steps with unit decay
        cfg = FilterConfig(tau_0=0.3, lambda_decay=1.0, total_steps=200)
        assert threshold_at(200, cfg) == pytest.approx(0.3 * math.exp(-1.0), abs=1e-12)
        assert threshold_at(200, cfg) == pytest.approx(0.11036, abs=5e-6)

    def test_zero_decay_constant(self):
        cfg = FilterConfig(tau_0=0.42, lambda_decay=0.0, total_steps=50)
        for t in range(0, 51, 10):
            assert threshold_at(t, cfg) == pytest.approx(0.42, abs=1e-15)

    def test_monotone_decay(self):
        cfg = FilterConfig(tau_0=0.5, lambda_decay=2.0, total_steps=100)
        values = [threshold_at(t, cfg) for t in range(101)]
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_out_of_range_rejected(self):
        cfg = FilterConfig(total_steps=10)
        with pytest.raises(ValueError):
            threshold_at(-1, cfg)
        with pytest.raises(ValueError):
            threshold_at(11, cfg)

    def test_matches_closed_form(self):
        cfg = FilterConfig(tau_0=0.7, lambda_decay=1.7, total_steps=37)
        for t in range(38):
            expected = 0.7 * math.exp(-(t / 37) * 1.7)
            assert threshold_at(t, cfg) == pytest.approx(expected, abs=1e-15)


class TestKeepSample:
    def test_clear_accept(self):
        cfg = FilterConfig(tau_0=0.3, lambda_decay=0.0, total_steps=10, tau_conf=0.5)
        assert keep_sample(0.9, 0.9, 0, cfg) is True

    def test_similarity_gate_blocks(self):
        cfg = FilterConfig(tau_0=0.3, lambda_decay=0.0, total_steps=10, tau_conf=0.5)
        assert keep_sample(0.2, 0.9, 0, cfg) is False

    def test_confidence_gate_blocks(self):
        cfg = FilterConfig(tau_0=0.3, lambda_decay=0.0, total_steps=10, tau_conf=0.5)
        assert keep_sample(0.9, 0.4, 0, cfg) is False

    def test_non_finite_rejected(self):
        cfg = FilterConfig()
        with pytest.raises(ValueError):
            keep_sample(float("nan"), 0.9, 0, cfg)
        with pytest.raises(ValueError):
            keep_sample(0.9, float("inf"), 0, cfg)

    def test_matches_rule_oracle_on_grid(self):
        cfg = FilterConfig(tau_0=0.3, lambda_decay=1.0, total_steps=20, tau_conf=0.5)
        sims = np.linspace(-0.2, 1.0, 13)
        confs = np.linspace(0.0, 1.0, 11)
        for s, c, t in itertools.product(sims, confs, range(0, 21, 2)):
            expected = gate_rule_ref(s, c, t, 0.3, 1.0, 20, 0.5)
            assert keep_sample(float(s), float(c), t, cfg) == expected

    def test_gate_monotonicity_grid(self):
        # flipping false -> true requires raising s, C, or t
        cfg = FilterConfig(tau_0=0.3, lambda_decay=1.0, total_steps=10, tau_conf=0.5)
        sims = np.linspace(0.0, 1.0, 9)
        confs = np.linspace(0.0, 1.0, 9)
        steps = range(11)
        grid = {
            (i, j, t): keep_sample(float(sims[i]), float(confs[j]), t, cfg)
            for i, j, t in itertools.product(range(9), range(9), steps)
        }
        for (i, j, t), kept in grid.items():
            if i + 1 < 9:
                assert grid[(i + 1, j, t)] >= kept
            if j + 1 < 9:
                assert grid[(i, j + 1, t)] >= kept
            if t + 1 <= 10:
                assert grid[(i, j, t + 1)] >= kept

    def test_acceptance_rate_non_decreasing_in_t(self):
        # fixed scored pool, every step, against brute-force counting
        rng = np.random.default_rng(3)
        pool = [(rng.uniform(0, 1), rng.uniform(0, 1)) for _ in range(120)]
        cfg = FilterConfig(tau_0=0.6, lambda_decay=2.0, total_steps=30, tau_conf=0.5)
        rates = []
        for t in range(31):
            kept = sum(keep_sample(s, c, t, cfg) for s, c in pool)
            brute = sum(gate_rule_ref(s, c, t, 0.6, 2.0, 30, 0.5) for s, c in pool)
            assert kept == brute
            rates.append(kept)
        assert all(b >= a for a, b in zip(rates, rates[1:]))


class TestCropRegion:
    def test_padded_window(self):
        image = np.arange(64 * 64, dtype=np.float64).reshape(64, 64) / (64 * 64)
        box = BBox(0.5, 0.5, 0.25, 0.25)
        crop = crop_region(image, box, pad=0.2)
        # corners 24..40 inflated by 3.2 px -> rows/cols 20..44
        assert crop.shape == (24, 24)
        np.testing.assert_array_equal(crop, image[20:44, 20:44])

    def test_zero_pad_is_plain_box(self):
        image = np.random.default_rng(0).random((64, 64))
        box = BBox(0.5, 0.5, 0.5, 0.5)
        crop = crop_region(image, box, pad=0.0)
        np.testing.assert_array_equal(crop, image[16:48, 16:48])

    def test_clamped_at_borders(self):
        image = np.ones((64, 64))
        crop = crop_region(image, BBox(0.05, 0.05, 0.1, 0.1), pad=1.0)
        assert crop.shape[0] >= 1 and crop.shape[1] >= 1

    def test_crops_to_batch_shape(self):
        crops = [np.random.default_rng(i).random((h, w)) for i, (h, w) in enumerate([(10, 12), (30, 5)])]
        batch = crops_to_batch(crops, input_size=32)
        assert batch.shape == (2, 1, 32, 32)
        assert batch.dtype == torch.float32


class TestBackgroundSampling:
    def test_avoids_annotations(self):
        ds = build_splits((0, 3, 0, 0), seed=2, size=64)
        rng = np.random.default_rng(0)
        for sample in ds.split("labeled_train"):
            box = sample_background_box(sample, rng)
            if box is None:
                continue
            x1, y1, x2, y2 = box.to_corners(64)
            for _, ann in sample.annotations:
                a1, b1, a2, b2 = ann.to_corners(64)
                assert not (x1 < a2 and a1 < x2 and y1 < b2 and b1 < y2)

    def test_saturated_image_returns_none(self):
        sample = ImageSample(
            image=np.zeros((64, 64)),
            annotations=[(DefectClass.CRAZING, BBox(0.5, 0.5, 1.0, 1.0))],
        )
        assert sample_background_box(sample, np.random.default_rng(0)) is None

    def test_build_crop_dataset_rows(self, filter_splits):
        train, _ = filter_splits
        crops, rows = build_crop_dataset(train[:10], np.random.default_rng(0))
        n_ann = sum(len(s.annotations) for s in train[:10])
        assert n_ann <= len(crops) <= n_ann + 10
        assert all(0 <= r <= BACKGROUND_ROW for r in rows)
        assert any(r == BACKGROUND_ROW for r in rows)


class TestContrastiveLoss:
    def test_requires_matching_shapes(self):
        with pytest.raises(ValueError):
            contrastive_loss(torch.rand(3, 4), torch.rand(4, 4))
        with pytest.raises(ValueError):
            contrastive_loss(torch.rand(3), torch.rand(3))
        with pytest.raises(ValueError):
            contrastive_loss(torch.rand(2, 4), torch.rand(2, 4), temperature=0.0)

    def test_symmetric_in_arguments(self):
        torch.manual_seed(0)
        a, b = torch.randn(5, 8), torch.randn(5, 8)
        assert torch.equal(contrastive_loss(a, b), contrastive_loss(b, a))

    def test_orthogonal_pairs_value(self):
        # aligned pairs, orthogonal across pairs: logits diag 1/temp, rest 0
        eye = torch.eye(3, 6, dtype=torch.float64)
        loss = contrastive_loss(eye, eye, temperature=0.5)
        expected = -math.log(math.exp(2.0) / (math.exp(2.0) + 2.0))
        assert float(loss) == pytest.approx(expected, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        # d=4 stub over both towers' raw embeddings
        torch.manual_seed(4)
        flat0 = torch.randn(2 * 3 * 4, dtype=torch.float64)

        def fn(flat):
            img = flat[:12].reshape(3, 4)
            txt = flat[12:].reshape(3, 4)
            return contrastive_loss(img, txt, temperature=0.3)

        params = flat0.clone().requires_grad_(True)
        fn(params).backward()
        numeric = finite_difference_gradient(fn, flat0)
        assert relative_gradient_error(params.grad, numeric) < 1e-4


class TestTrainContrastive:
    def test_loss_decreases(self, fitted_filter):
        assert fitted_filter.losses_[-1] < fitted_filter.losses_[0]

    def test_untrained_retrieval_near_chance(self, filter_splits):
        _, val = filter_splits
        torch.manual_seed(0)
        enc, table = ImageEncoder(d=32), PromptTable(d=32)
        crops, rows = build_crop_dataset(val, np.random.default_rng(1))
        acc = retrieval_accuracy(enc, table, crops, rows)
        assert acc < 0.5  # chance is 1/7

    def test_trained_retrieval_clears_gate(self, fitted_filter):
        assert fitted_filter.retrieval_accuracy_ > 0.7
        assert fitted_filter.usable_ is True

    def test_intra_class_similarity_exceeds_inter(self, fitted_filter, filter_splits):
        _, val = filter_splits
        crops, rows = build_crop_dataset(val, np.random.default_rng(5))
        with torch.no_grad():
            emb = F.normalize(
                fitted_filter.encoder_(crops_to_batch(crops)), dim=1
            ).numpy()
        rows = np.asarray(rows)
        sims = emb @ emb.T
        intra, inter = [], []
        for i in range(len(rows)):
            for j in range(i + 1, len(rows)):
                if rows[i] >= 6 or rows[j] >= 6:
                    continue
                (intra if rows[i] == rows[j] else inter).append(sims[i, j])
        assert np.mean(intra) > np.mean(inter)

    def test_text_rows_align_with_class_means(self, fitted_filter, filter_splits):
        _, val = filter_splits
        crops, rows = build_crop_dataset(val, np.random.default_rng(5))
        with torch.no_grad():
            emb = F.normalize(fitted_filter.encoder_(crops_to_batch(crops)), dim=1)
            txt = F.normalize(fitted_filter.table_.rows.weight, dim=1).numpy()
        rows = np.asarray(rows)
        means = []
        for k in range(6):
            mk = emb[rows == k].mean(dim=0)
            means.append((mk / mk.norm()).numpy())
        for k in range(6):
            own = float(txt[k] @ means[k])
            others = [float(txt[k] @ means[j]) for j in range(6) if j != k]
            assert own > max(others)

    def test_divergence_aborts(self, filter_splits):
        train, _ = filter_splits
        with pytest.raises(TrainingDivergedError):
            train_contrastive(train, epochs=3, lr=1e30, seed=0)

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train_contrastive([], epochs=1)


class TestContrastiveFilterEstimator:
    def test_not_fitted(self):
        from sklearn.exceptions import NotFittedError

        f = ContrastiveFilter()
        with pytest.raises(NotFittedError):
            f.similarity_to_class(np.zeros((64, 64)), BBox(0.5, 0.5, 0.2, 0.2), 0)

    def test_similarity_in_bounds(self, fitted_filter, filter_splits):
        _, val = filter_splits
        for sample in val[:5]:
            cls, box = sample.annotations[0]
            s = fitted_filter.similarity_to_class(sample.image, box, cls)
            assert -1.0 - 1e-9 <= s <= 1.0 + 1e-9

    def test_true_class_scores_higher_on_average(self, fitted_filter, filter_splits):
        _, val = filter_splits
        own, other = [], []
        for sample in val:
            cls, box = sample.annotations[0]
            own.append(fitted_filter.similarity_to_class(sample.image, box, cls))
            wrong = DefectClass((int(cls) + 3) % 6)
            other.append(fitted_filter.similarity_to_class(sample.image, box, wrong))
        assert np.mean(own) > np.mean(other)

    def test_save_load_round_trip(self, fitted_filter, filter_splits, tmp_path):
        _, val = filter_splits
        path = tmp_path / "filter.pt"
        fitted_filter.save(path)
        loaded = ContrastiveFilter.load(path)
        assert loaded.usable_ == fitted_filter.usable_
        assert loaded.retrieval_accuracy_ == fitted_filter.retrieval_accuracy_
        sample = val[0]
        cls, box = sample.annotations[0]
        a = fitted_filter.similarity_to_class(sample.image, box, cls)
        b = loaded.similarity_to_class(sample.image, box, cls)
        assert a == pytest.approx(b, abs=1e-7)

    def test_deterministic_fit(self, filter_splits):
        train, val = filter_splits
        a = ContrastiveFilter(epochs=3, seed=9).fit(train[:12], val_samples=val[:6])
        b = ContrastiveFilter(epochs=3, seed=9).fit(train[:12], val_samples=val[:6])
        assert a.losses_ == b.losses_
        assert a.retrieval_accuracy_ == b.retrieval_accuracy_

    def test_unusable_below_gate(self, filter_splits):
        train, val = filter_splits
        f = ContrastiveFilter(epochs=1, retrieval_gate=0.999, seed=0)
        f.fit(train[:12], val_samples=val[:6])
        assert f.usable_ is False

    def test_get_params_round_trip(self):
        f = ContrastiveFilter(d=16, epochs=5, seed=3)
        g = ContrastiveFilter(**f.get_params())
        assert g.d == 16 and g.epochs == 5 and g.seed == 3
