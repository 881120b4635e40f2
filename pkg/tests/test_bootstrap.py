"""NIQE-lite: MSCN normalization, GGD/AGGD fits, pristine model, bootstrap pairs."""

import numpy as np
import pytest

import rankloop.bootstrap as bootstrap
from rankloop.bootstrap import (NaturalnessScorer, NiqeLabel, fit_aggd,
                                fit_ggd, mscn, patch_features,
                                build_bootstrap_dataset)
from rankloop.datasets import make_corpus, make_scene
from rankloop.exceptions import DegenerateDataError, ShapeError
from rankloop.rng import make_rng


class TestMscn:
    def test_constant_image_gives_zeros(self):
        np.testing.assert_array_equal(mscn(np.full((16, 16), 0.3)), 0.0)

    def test_zero_mean_on_noise(self):
        rng = make_rng(41)
        coeffs = mscn(rng.uniform(size=(128, 128)))
        assert abs(coeffs.mean()) < 0.05

    def test_contrast_invariance_where_sigma_dominates(self):
        # doubling the deviation around mid-gray perturbs each coefficient by
        # a factor C/(2*sigma + C); at sigma ~ 0.14 the typical shift is ~0.008
        rng = make_rng(42)
        signs = np.where(rng.uniform(size=(64, 64)) < 0.5, -1.0, 1.0)
        base = 0.5 + 0.25 * signs  # binary pattern maximizes local sigma
        doubled = 0.5 + 0.5 * signs  # stays inside [0, 1], no clipping
        a, b = mscn(base), mscn(doubled)
        assert np.median(np.abs(a - b)) < 1e-2

    def test_too_small_image(self):
        with pytest.raises(ShapeError):
            mscn(np.zeros((5, 5)))


class TestDistributionFits:
    def test_gaussian_recovers_shape_two(self):
        samples = make_rng(43).normal(size=100_000)
        shape, spread = fit_ggd(samples)
        assert 1.9 <= shape <= 2.1
        # GGD scale for N(0,1) is sqrt(2): exp(-x^2/2) = exp(-(x/sqrt(2))^2)
        assert spread == pytest.approx(np.sqrt(2.0), abs=0.05)

    def test_laplacian_recovers_shape_one(self):
        samples = make_rng(44).laplace(size=100_000)
        shape, _ = fit_ggd(samples)
        assert 0.9 <= shape <= 1.1

    def test_symmetric_samples_balanced_aggd(self):
        samples = make_rng(45).normal(size=100_000)
        _, left, right, offset = fit_aggd(samples)
        assert abs(left - right) / max(left, right) < 0.05
        assert abs(offset) < 0.05

    def test_degenerate_samples_rejected(self):
        with pytest.raises(DegenerateDataError):
            fit_ggd(np.zeros(100))
        with pytest.raises(DegenerateDataError):
            fit_ggd(np.ones(8))

    def test_patch_feature_vector_is_18_dim(self):
        coeffs = mscn(np.clip(make_rng(46).normal(0.5, 0.15, size=(32, 32)), 0, 1))
        assert patch_features(coeffs).shape == (18,)


class TestNiqeLabel:
    def test_quantization(self):
        assert NiqeLabel.from_raw(3.14159).value == 3.14
        assert NiqeLabel.from_raw(3.14159).centi == 314

    def test_value_times_100_is_integer(self):
        for raw in [0.0, 0.005, 2.71828, 17.333333]:
            label = NiqeLabel.from_raw(raw)
            assert abs(label.value * 100 - round(label.value * 100)) < 1e-9


def _lit_corpus(n, seed, size=64):
    return [make_scene(size, make_rng(derive(seed, i))) for i in range(n)]


def derive(seed, i):
    from rankloop.rng import derive_seed
    return derive_seed(seed, "corpus", i)


class TestPristineModel:
    def test_fit_reports_patch_count(self):
        corpus = _lit_corpus(10, 47)
        scorer = NaturalnessScorer().fit(corpus)
        assert scorer.n_patches_ >= 10
        assert "patches" in scorer.fitted_from_

    def test_identical_corpus_still_scores(self):
        img = make_scene(64, make_rng(48))
        scorer = NaturalnessScorer().fit([img] * 10)
        # off-diagonal covariance is ~0; regularization keeps scoring finite
        assert np.abs(scorer.cov_).max() < 1e-9
        label = scorer.score_image(make_scene(64, make_rng(49)))
        assert np.isfinite(label.value)

    def test_refit_is_deterministic(self):
        corpus = _lit_corpus(10, 50)
        s1 = NaturalnessScorer().fit(corpus)
        s2 = NaturalnessScorer().fit(corpus)
        np.testing.assert_array_equal(s1.mean_, s2.mean_)
        np.testing.assert_array_equal(s1.cov_, s2.cov_)

    def test_small_corpus_rejected(self):
        with pytest.raises(DegenerateDataError):
            NaturalnessScorer().fit(_lit_corpus(3, 51))

    def test_zero_distance_at_matching_features(self, monkeypatch):
        corpus = _lit_corpus(10, 52)
        scorer = NaturalnessScorer().fit(corpus)
        fixed = scorer.mean_.copy()
        monkeypatch.setattr(bootstrap, "patch_features", lambda block: fixed.copy())
        scorer.cov_ = np.zeros((18, 18))  # sigma_1 = sigma_2 = 0
        label = scorer.score_image(corpus[0])
        assert label.value == 0.0

    def test_scores_deterministic(self):
        corpus = _lit_corpus(10, 53)
        scorer = NaturalnessScorer().fit(corpus)
        img = make_scene(64, make_rng(54))
        assert scorer.score_image(img).centi == scorer.score_image(img).centi

    def test_pristine_beats_darkened(self):
        corpus = _lit_corpus(14, 55)
        scorer = NaturalnessScorer().fit(corpus)
        wins = sum(scorer.score_image(img).value < scorer.score_image(
            np.clip(img * 0.25, 0, 1)).value for img in corpus)
        assert wins / len(corpus) >= 0.9

    def test_checkpoint_round_trip(self, tmp_path):
        from rankloop.checkpoint import read_checkpoint, write_checkpoint
        scorer = NaturalnessScorer().fit(_lit_corpus(10, 56))
        path = tmp_path / "pristine.ckpt"
        write_checkpoint(scorer.to_checkpoint(), path)
        back = NaturalnessScorer.from_checkpoint(read_checkpoint(path))
        img = make_scene(64, make_rng(57))
        assert back.score_image(img).centi == scorer.score_image(img).centi


class TestBootstrapDataset:
    def _checkpoints(self, strengths):
        from rankloop.enhancer import CurveEnhancer
        ckpts = []
        for i, s in enumerate(strengths):
            enh = CurveEnhancer(iterations=2, grid_size=1)
            enh.set_raw(np.full((2, 3, 1, 1), s))
            ckpts.append(enh.to_checkpoint(stage=0))
        return ckpts

    def test_pair_combinatorics(self, tmp_path):
        dark, lit = make_corpus(4, 64, seed=58)
        scorer = NaturalnessScorer().fit(lit + _lit_corpus(6, 59))
        ckpts = self._checkpoints([0.0, 0.4, 0.9])
        inputs = [(f"x{i}", img) for i, img in enumerate(dark)]
        pairs, n_versions = build_bootstrap_dataset(ckpts, inputs, scorer, tmp_path / "boot")
        assert n_versions == 12  # 3 checkpoints x 4 inputs
        assert len(pairs) <= 4 * 3  # up to C(3,2) per input
        assert len(pairs) >= 1

    def test_tied_labels_excluded_and_labels_match_scorer(self, tmp_path):
        from rankloop.imgio import load_image
        dark, lit = make_corpus(3, 64, seed=60)
        scorer = NaturalnessScorer().fit(lit + _lit_corpus(7, 61))
        ckpts = self._checkpoints([0.0, 0.0, 0.7])  # first two identical -> tie
        inputs = [(f"x{i}", img) for i, img in enumerate(dark)]
        pairs, _ = build_bootstrap_dataset(ckpts, inputs, scorer, tmp_path / "boot")
        for pair in pairs:
            la = scorer.score_image(load_image(pair.image_a))
            lb = scorer.score_image(load_image(pair.image_b))
            assert la.centi != lb.centi
            better = pair.image_a if pair.label_a == 0 else pair.image_b
            worse = pair.image_b if pair.label_a == 0 else pair.image_a
            assert scorer.score_image(load_image(better)).centi < \
                scorer.score_image(load_image(worse)).centi
        # identical versions v00/v01 never form a pair
        assert not any({"v00", "v01"} <= {p.image_a[-7:-4], p.image_b[-7:-4]}
                       for p in pairs)

    def test_too_few_checkpoints(self, tmp_path):
        dark, lit = make_corpus(2, 64, seed=62)
        scorer = NaturalnessScorer().fit(_lit_corpus(10, 63))
        with pytest.raises(DegenerateDataError):
            build_bootstrap_dataset(self._checkpoints([0.1]),
                                    [("a", dark[0])], scorer, tmp_path / "b")
