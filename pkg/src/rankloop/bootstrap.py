"""Naturalness scorer ("NIQE-lite") used to label the stage-0 ranking data.

Single-scale variant of the classic natural-scene-statistics metric: MSCN
coefficients, a generalized-Gaussian fit of their distribution plus
asymmetric fits of four orientation products (18 features per patch), and a
Mahalanobis-style distance between the Gaussian of a test image's patch
features and the Gaussian fitted on a pristine corpus. Lower is better.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .checkpoint import CheckpointEntry, ParamCheckpoint
from .exceptions import DegenerateDataError, NumericError, ShapeError
from .validation import check_image, luminance

MSCN_C = 1.0 / 255.0
_WINDOW_SIZE = 7
_WINDOW_SIGMA = 7.0 / 6.0

# moment-ratio lookup grid shared by the GGD/AGGD estimators
_SHAPE_GRID = np.arange(0.2, 10.0 + 1e-9, 0.001)
_R_GGD = gamma_fn(2.0 / _SHAPE_GRID) ** 2 / (
    gamma_fn(1.0 / _SHAPE_GRID) * gamma_fn(3.0 / _SHAPE_GRID))


def _gauss_window() -> np.ndarray:
    half = _WINDOW_SIZE // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    w = np.exp(-(x ** 2) / (2.0 * _WINDOW_SIGMA ** 2))
    return w / w.sum()


_WINDOW_1D = _gauss_window()


def _filt_axis(x: np.ndarray, axis: int) -> np.ndarray:
    """Same-size correlation with the 7-tap window, mirrored borders."""
    n = x.shape[axis]
    half = _WINDOW_SIZE // 2
    if n < half + 1:
        raise ShapeError(f"image axis of length {n} too small for MSCN window")
    idx = np.concatenate((np.arange(half, 0, -1), np.arange(n), n - 2 - np.arange(half)))
    xp = np.take(x, idx, axis=axis)
    out = np.zeros_like(x)
    sl = [slice(None)] * x.ndim
    for t in range(_WINDOW_SIZE):
        sl[axis] = slice(t, t + n)
        out += _WINDOW_1D[t] * xp[tuple(sl)]
    return out


def _local_stats(luma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = _filt_axis(_filt_axis(luma, 0), 1)
    second = _filt_axis(_filt_axis(luma * luma, 0), 1)
    sigma = np.sqrt(np.maximum(second - mu * mu, 0.0))
    return mu, sigma


def mscn(luma: np.ndarray) -> np.ndarray:
    """Mean-subtracted contrast-normalized coefficients of a [0,1] luminance map."""
    luma = np.asarray(luma, dtype=np.float64)
    if luma.ndim != 2:
        raise ShapeError("mscn expects a 2-D luminance array")
    if min(luma.shape) < _WINDOW_SIZE:
        raise ShapeError(f"mscn needs at least {_WINDOW_SIZE}x{_WINDOW_SIZE} pixels")
    mu, sigma = _local_stats(luma)
    return (luma - mu) / (sigma + MSCN_C)


def fit_ggd(samples: np.ndarray) -> tuple[float, float]:
    """Moment-matched generalized Gaussian fit: returns (shape, scale).

    The shape comes from the (E|x|)^2 / E[x^2] ratio looked up on a dense
    grid; Gaussian data gives shape ~2, Laplacian ~1.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size < 32:
        raise DegenerateDataError("fit_ggd needs at least 32 samples")
    second = float(np.mean(samples ** 2))
    if second <= 0:
        raise DegenerateDataError("fit_ggd: zero-variance samples")
    rho = float(np.mean(np.abs(samples))) ** 2 / second
    shape = float(_SHAPE_GRID[np.argmin((_R_GGD - rho) ** 2)])
    spread = math.sqrt(second * gamma_fn(1.0 / shape) / gamma_fn(3.0 / shape))
    return shape, spread


def fit_aggd(samples: np.ndarray) -> tuple[float, float, float, float]:
    """Asymmetric GGD fit: returns (shape, left spread, right spread, mean offset)."""
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size < 32:
        raise DegenerateDataError("fit_aggd needs at least 32 samples")
    left = samples[samples < 0]
    right = samples[samples > 0]
    if left.size == 0 or right.size == 0:
        raise DegenerateDataError("fit_aggd: one-sided samples")
    left_std = math.sqrt(float(np.mean(left ** 2)))
    right_std = math.sqrt(float(np.mean(right ** 2)))
    if left_std == 0 or right_std == 0:
        raise DegenerateDataError("fit_aggd: zero-variance samples")
    gamma_hat = left_std / right_std
    r_hat = float(np.mean(np.abs(samples))) ** 2 / float(np.mean(samples ** 2))
    r_norm = r_hat * (gamma_hat ** 3 + 1) * (gamma_hat + 1) / (gamma_hat ** 2 + 1) ** 2
    shape = float(_SHAPE_GRID[np.argmin((_R_GGD - r_norm) ** 2)])
    conv = math.sqrt(gamma_fn(1.0 / shape) / gamma_fn(3.0 / shape))
    beta_left = left_std * conv
    beta_right = right_std * conv
    offset = (beta_right - beta_left) * gamma_fn(2.0 / shape) / gamma_fn(1.0 / shape)
    return shape, beta_left, beta_right, offset


_ORIENTATIONS = ((0, 1), (1, 0), (1, 1), (1, -1))  # (row shift, col shift)


def patch_features(coeffs: np.ndarray) -> np.ndarray:
    """18 natural-scene-statistics features of one MSCN patch."""
    shape, spread = fit_ggd(coeffs)
    feats = [shape, spread]
    for dr, dc in _ORIENTATIONS:
        prod = coeffs * np.roll(np.roll(coeffs, dr, axis=0), dc, axis=1)
        a_shape, b_left, b_right, offset = fit_aggd(prod)
        feats.extend([a_shape, offset, b_left, b_right])
    return np.array(feats)


@dataclass
class NiqeLabel:
    """Naturalness score quantized to hundredths; lower = better."""

    centi: int

    @property
    def value(self) -> float:
        return self.centi / 100.0

    @classmethod
    def from_raw(cls, raw: float) -> "NiqeLabel":
        if not math.isfinite(raw) or raw < 0:
            raise NumericError(f"invalid naturalness score {raw!r}")
        return cls(int(math.floor(raw * 100.0 + 0.5)))


class NaturalnessScorer(BaseEstimator):
    """No-reference quality model fitted on a pristine (well-lit) corpus.

    fit() extracts per-patch feature vectors from the sharpest patches of the
    corpus and stores their mean and covariance (``mean_``, ``cov_``);
    predict() returns quantized scores, lower = closer to the corpus
    statistics.
    """

    def __init__(self, patch=32, sharpness_quantile=0.75, min_corpus=10):
        self.patch = patch
        self.sharpness_quantile = sharpness_quantile
        self.min_corpus = min_corpus

    def _check_fitted(self):
        if not hasattr(self, "mean_"):
            raise NotFittedError("NaturalnessScorer is not fitted")

    def _patches(self, img, select_sharp: bool):
        img = check_image(img, min_side=self.patch, name="naturalness input")
        luma = luminance(img)
        coeffs = mscn(luma)
        _, sigma = _local_stats(luma)
        ph = pw = self.patch
        rows, cols = luma.shape[0] // ph, luma.shape[1] // pw
        blocks = []
        sharp = []
        for r in range(rows):
            for c in range(cols):
                sl = (slice(r * ph, (r + 1) * ph), slice(c * pw, (c + 1) * pw))
                blocks.append(coeffs[sl])
                sharp.append(float(sigma[sl].mean()))
        if select_sharp and len(blocks) > 1:
            cut = float(np.quantile(sharp, self.sharpness_quantile))
            kept = [b for b, s in zip(blocks, sharp) if s >= cut]
            blocks = kept or blocks
        return blocks

    def fit(self, images, y=None):
        if len(images) < self.min_corpus:
            raise DegenerateDataError(
                f"pristine corpus needs >= {self.min_corpus} images, got {len(images)}")
        feats = []
        for img in images:
            for block in self._patches(img, select_sharp=True):
                feats.append(patch_features(block))
        if not feats:
            raise DegenerateDataError("no patches survived sharpness selection")
        mat = np.asarray(feats)
        self.mean_ = mat.mean(axis=0)
        self.cov_ = np.cov(mat, rowvar=False) if mat.shape[0] > 1 else np.zeros((18, 18))
        self.n_patches_ = mat.shape[0]
        self.fitted_from_ = f"corpus(images={len(images)}, patches={mat.shape[0]})"
        return self

    def score_image(self, img) -> NiqeLabel:
        """Distance between the image's patch-feature Gaussian and the corpus one."""
        self._check_fitted()
        feats = np.asarray([patch_features(b) for b in self._patches(img, select_sharp=False)])
        mean2 = feats.mean(axis=0)
        cov2 = np.cov(feats, rowvar=False) if feats.shape[0] > 1 else np.zeros((18, 18))
        pooled = (self.cov_ + cov2) / 2.0 + 1e-6 * np.eye(18)
        diff = self.mean_ - mean2
        try:
            solved = np.linalg.solve(pooled, diff)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"singular pooled covariance: {exc}") from exc
        dist = math.sqrt(max(float(diff @ solved), 0.0))
        return NiqeLabel.from_raw(dist)

    def predict(self, images) -> np.ndarray:
        """Quantized naturalness scores, one per image; lower = better."""
        return np.array([self.score_image(img).value for img in images])

    # -- persistence ------------------------------------------------------------

    def to_checkpoint(self, stage: int = 0) -> ParamCheckpoint:
        self._check_fitted()
        # the checkpoint container only knows enhancer/ranker kinds; the
        # pristine model rides along as ranker-side state
        return ParamCheckpoint("ranker", stage, [
            CheckpointEntry("mean", self.mean_),
            CheckpointEntry("cov", self.cov_),
        ])

    @classmethod
    def from_checkpoint(cls, ckpt: ParamCheckpoint, **hyper) -> "NaturalnessScorer":
        est = cls(**hyper)
        est.mean_ = ckpt.get("mean")
        est.cov_ = ckpt.get("cov")
        est.n_patches_ = -1
        est.fitted_from_ = "checkpoint"
        return est


def build_bootstrap_dataset(checkpoints, inputs, scorer: NaturalnessScorer, out_dir):
    """Render every (checkpoint, input) version, score it, and emit ranked pairs.

    ``checkpoints`` are enhancer states (intermediates plus the final model);
    ``inputs`` is a list of (input_id, image). Same-content versions with
    distinct quantized scores become pairs whose lower-scored image carries
    label 0; ties are skipped. Images land as PNGs under ``out_dir`` and the
    returned pairs reference those files.
    """
    from .enhancer import CurveEnhancer
    from .imgio import load_image, save_image
    from .ranker import RankedPair

    if len(checkpoints) < 2:
        raise DegenerateDataError("bootstrap needs at least 2 enhancer checkpoints")
    if not inputs:
        raise DegenerateDataError("bootstrap needs at least one input image")
    models = [CurveEnhancer.from_checkpoint(c) for c in checkpoints]
    pairs: list[RankedPair] = []
    out_dir.mkdir(parents=True, exist_ok=True)
    n_versions = 0
    for input_id, image in inputs:
        paths = []
        labels = []
        for v, model in enumerate(models):
            path = out_dir / f"{input_id}_v{v:02d}.png"
            save_image(model.enhance(image), path)
            labels.append(scorer.score_image(load_image(path)))
            paths.append(path)
            n_versions += 1
        for i in range(len(models)):
            for j in range(i + 1, len(models)):
                if labels[i].centi == labels[j].centi:
                    continue
                if labels[i].centi < labels[j].centi:
                    pairs.append(RankedPair(str(paths[i]), str(paths[j]), 0, 1))
                else:
                    pairs.append(RankedPair(str(paths[i]), str(paths[j]), 1, 0))
    if not pairs:
        raise DegenerateDataError("bootstrap produced zero usable pairs (all scores tied)")
    return pairs, n_versions
