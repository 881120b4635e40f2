"""Differentiable tone-curve enhancer and its training objectives.

The model applies T iterations of the quadratic curve
``y <- y + alpha * y * (1 - y)`` with per-iteration, per-channel curve
strengths ``alpha = tanh(raw)`` defined on a G x G spatial grid and
bilinearly upsampled to the image. For alpha in [-1, 1] every iterate stays
inside [0, 1] and the map is monotone in the input, so enhanced images never
clip or invert tones.

Pretraining fits the curve toward a target exposure plus a color-constancy
penalty; fine-tuning descends the combined content-fidelity / ranker
objective. All gradients here are analytic and covered by finite-difference
tests.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .checkpoint import CheckpointEntry, ParamCheckpoint
from .exceptions import DegenerateDataError, NumericError, ShapeError
from .nn import AdamState, adam_step, sigmoid
from .rng import derive_seed, make_rng
from .validation import LUMA_WEIGHTS, check_finite, check_image

# ---------------------------------------------------------------------------
# bilinear grid upsampling


def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """(n_out, n_in) bilinear interpolation weights, half-pixel, edge-clamped."""
    w = np.zeros((n_out, n_in))
    if n_in == 1:
        w[:, 0] = 1.0
        return w
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    pos = np.clip(pos, 0.0, n_in - 1.0)
    i0 = np.floor(pos).astype(int)
    i0 = np.minimum(i0, n_in - 2)
    frac = pos - i0
    w[np.arange(n_out), i0] = 1.0 - frac
    w[np.arange(n_out), i0 + 1] = frac
    return w


# ---------------------------------------------------------------------------
# Gaussian pyramid with exact adjoint (used by the content-fidelity loss)

_GAUSS5 = np.exp(-((np.arange(5) - 2.0) ** 2) / 2.0)
_GAUSS5 /= _GAUSS5.sum()


def _reflect_idx(n: int) -> np.ndarray:
    if n < 3:
        raise ShapeError(f"axis of length {n} too small for 5-tap blur")
    return np.concatenate(([2, 1], np.arange(n), [n - 2, n - 3]))


def _blur_axis(x: np.ndarray, axis: int) -> np.ndarray:
    idx = _reflect_idx(x.shape[axis])
    xp = np.take(x, idx, axis=axis)
    n = x.shape[axis]
    out = np.zeros_like(x)
    sl = [slice(None)] * x.ndim
    for t in range(5):
        sl[axis] = slice(t, t + n)
        out += _GAUSS5[t] * xp[tuple(sl)]
    return out


def _blur_axis_adjoint(dy: np.ndarray, axis: int) -> np.ndarray:
    n = dy.shape[axis]
    idx = _reflect_idx(n)
    pad_shape = list(dy.shape)
    pad_shape[axis] = n + 4
    dxp = np.zeros(pad_shape)
    sl = [slice(None)] * dy.ndim
    for t in range(5):
        sl[axis] = slice(t, t + n)
        dxp[tuple(sl)] += _GAUSS5[t] * dy
    dx = np.zeros_like(dy)
    np.add.at(dx, tuple(idx if a == axis else slice(None) for a in range(dy.ndim)), dxp)
    return dx


def _blur2d(x: np.ndarray) -> np.ndarray:
    return _blur_axis(_blur_axis(x, 0), 1)


def _blur2d_adjoint(dy: np.ndarray) -> np.ndarray:
    return _blur_axis_adjoint(_blur_axis_adjoint(dy, 1), 0)


def _down2(x: np.ndarray) -> np.ndarray:
    return x[::2, ::2]


def _down2_adjoint(dy: np.ndarray, shape) -> np.ndarray:
    dx = np.zeros(shape)
    dx[::2, ::2] = dy
    return dx


class ContentFeatureExtractor:
    """Fixed multi-scale features: per level, 5x5 Gaussian blur then 2x decimation."""

    def __init__(self, levels: int = 3):
        if levels < 1:
            raise ShapeError("levels must be >= 1")
        self.levels = levels

    def features(self, img: np.ndarray) -> list[np.ndarray]:
        feats = []
        cur = img
        for _ in range(self.levels):
            cur = _down2(_blur2d(cur))
            feats.append(cur)
        return feats

    def backward(self, feats: list[np.ndarray], img_shape, cotangents: list[np.ndarray]):
        """Adjoint of ``features``: maps per-level cotangents to an image gradient."""
        grad = np.zeros_like(cotangents[-1])
        shapes = [img_shape] + [f.shape for f in feats[:-1]]
        for level in range(self.levels - 1, -1, -1):
            total = cotangents[level] + grad if level < self.levels - 1 else cotangents[level]
            grad = _blur2d_adjoint(_down2_adjoint(total, shapes[level]))
        return grad


def content_loss(extractor: ContentFeatureExtractor, a: np.ndarray, b: np.ndarray,
                 with_grad: bool = False):
    """Mean squared pyramid-feature distance, summed over levels.

    Each level is normalized by its own element count. The value is symmetric
    in (a, b); the optional gradient is with respect to ``a`` only.
    """
    if a.shape != b.shape:
        raise ShapeError(f"content_loss shape mismatch: {a.shape} vs {b.shape}")
    fa = extractor.features(a)
    fb = extractor.features(b)
    loss = 0.0
    cots = []
    for la, lb in zip(fa, fb):
        diff = la - lb
        loss += float((diff * diff).mean())
        if with_grad:
            cots.append(2.0 * diff / diff.size)
    if not with_grad:
        return loss
    return loss, extractor.backward(fa, a.shape, cots)


# ---------------------------------------------------------------------------
# curve forward/backward


def curve_apply(x: np.ndarray, alphas: list[np.ndarray]) -> np.ndarray:
    """Apply the iterated quadratic curve for explicit alpha maps in [-1, 1]."""
    y = x
    for a in alphas:
        y = y + a * y * (1.0 - y)
    return y


def _curve_states(x: np.ndarray, alphas: list[np.ndarray]) -> list[np.ndarray]:
    states = [x]
    for a in alphas:
        y = states[-1]
        states.append(y + a * y * (1.0 - y))
    return states


def _curve_backward(states, alphas, dldy):
    """Reverse accumulation through the curve iterations.

    Returns (per-iteration dL/dalpha maps, dL/dx).
    """
    grad = dldy
    dalphas = [None] * len(alphas)
    for t in range(len(alphas) - 1, -1, -1):
        y = states[t]
        dalphas[t] = grad * y * (1.0 - y)
        grad = grad * (1.0 + alphas[t] * (1.0 - 2.0 * y))
    return dalphas, grad


# ---------------------------------------------------------------------------
# pretraining objective


def exposure_color_loss(y: np.ndarray, target: float, patch: int, color_weight: float,
                        with_grad: bool = False):
    """Zero-reference pretraining objective.

    Exposure term: mean over non-overlapping ``patch`` x ``patch`` tiles of
    (tile mean luminance - target)^2; edge remainders outside full tiles are
    ignored. Color term: sum of squared pairwise differences of the channel
    means, weighted by ``color_weight``.
    """
    h, w, c = y.shape
    ph = min(patch, h)
    pw = min(patch, w)
    th, tw = h // ph, w // pw
    luma = y[:th * ph, :tw * pw] @ LUMA_WEIGHTS if c == 3 else y[:th * ph, :tw * pw, 0]
    tiles = luma.reshape(th, ph, tw, pw)
    means = tiles.mean(axis=(1, 3))
    dev = means - target
    loss = float((dev * dev).mean())
    grad = None
    if with_grad:
        grad = np.zeros_like(y)
        dluma = np.broadcast_to(
            (2.0 * dev / dev.size / (ph * pw))[:, None, :, None], tiles.shape
        ).reshape(th * ph, tw * pw)
        if c == 3:
            grad[:th * ph, :tw * pw] = dluma[:, :, None] * LUMA_WEIGHTS
        else:
            grad[:th * ph, :tw * pw, 0] = dluma
    if c == 3 and color_weight:
        mu = y.mean(axis=(0, 1))
        pair_diffs = [(0, 1), (0, 2), (1, 2)]
        cc = sum((mu[i] - mu[j]) ** 2 for i, j in pair_diffs)
        loss += color_weight * float(cc)
        if with_grad:
            dmu = np.zeros(3)
            for i, j in pair_diffs:
                d = 2.0 * (mu[i] - mu[j])
                dmu[i] += d
                dmu[j] -= d
            grad += color_weight * dmu / (h * w)
    if not with_grad:
        return loss
    return loss, grad


# ---------------------------------------------------------------------------
# the estimator


class CurveEnhancer(BaseEstimator):
    """Iterative tone-curve enhancement model.

    fit() pretrains the curve parameters on a set of low-light images toward
    the exposure/color objective; transform() enhances images. Fitted state
    lives in ``raw_`` of shape (iterations, 3, grid_size, grid_size).
    """

    def __init__(self, iterations=4, grid_size=1, exposure_target=0.6,
                 exposure_patch=16, color_weight=0.5, pretrain_lr=0.005,
                 pretrain_iters=40, pretrain_batch=8, checkpoint_interval=10,
                 seed=0):
        self.iterations = iterations
        self.grid_size = grid_size
        self.exposure_target = exposure_target
        self.exposure_patch = exposure_patch
        self.color_weight = color_weight
        self.pretrain_lr = pretrain_lr
        self.pretrain_iters = pretrain_iters
        self.pretrain_batch = pretrain_batch
        self.checkpoint_interval = checkpoint_interval
        self.seed = seed

    # -- fitted-state helpers ------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "raw_"):
            raise NotFittedError("CurveEnhancer is not fitted; call fit() or set_raw()")

    def set_raw(self, raw: np.ndarray) -> "CurveEnhancer":
        raw = check_finite(np.asarray(raw, dtype=np.float64), "raw")
        if raw.shape != (self.iterations, 3, self.grid_size, self.grid_size):
            raise ShapeError(
                f"raw shape {raw.shape} does not match "
                f"({self.iterations}, 3, {self.grid_size}, {self.grid_size})")
        self.raw_ = raw.copy()
        return self

    def identity(self) -> "CurveEnhancer":
        """Initialize to the exact identity map (raw = 0)."""
        return self.set_raw(np.zeros((self.iterations, 3, self.grid_size, self.grid_size)))

    def to_checkpoint(self, stage: int) -> ParamCheckpoint:
        self._check_fitted()
        return ParamCheckpoint("enhancer", stage, [CheckpointEntry("raw", self.raw_)])

    @classmethod
    def from_checkpoint(cls, ckpt: ParamCheckpoint, **hyper) -> "CurveEnhancer":
        raw = ckpt.get("raw")
        est = cls(iterations=raw.shape[0], grid_size=raw.shape[2], **hyper)
        return est.set_raw(raw)

    # -- forward -------------------------------------------------------------

    def _alpha_maps(self, h: int, w: int) -> list[np.ndarray]:
        wh = _interp_matrix(h, self.grid_size)
        ww = _interp_matrix(w, self.grid_size)
        maps = []
        for t in range(self.iterations):
            amap = np.empty((h, w, 3))
            for ch in range(3):
                amap[:, :, ch] = wh @ np.tanh(self.raw_[t, ch]) @ ww.T
            maps.append(amap)
        return maps

    def enhance(self, img) -> np.ndarray:
        """Enhance one (H, W, 3) unit-interval image."""
        self._check_fitted()
        img = check_image(img, channels=3, name="enhance input")
        alphas = self._alpha_maps(img.shape[0], img.shape[1])
        return np.clip(curve_apply(img, alphas), 0.0, 1.0)

    def transform(self, images) -> list[np.ndarray]:
        return [self.enhance(img) for img in images]

    def enhance_grad(self, img, dldy) -> np.ndarray:
        """Gradient of sum(dldy * enhance(img)) with respect to ``raw_``."""
        self._check_fitted()
        img = check_image(img, channels=3, name="enhance input")
        dldy = check_finite(dldy, "upstream gradient")
        if dldy.shape != img.shape:
            raise ShapeError(f"dldy shape {dldy.shape} != image shape {img.shape}")
        alphas = self._alpha_maps(img.shape[0], img.shape[1])
        states = _curve_states(img, alphas)
        dalphas, _ = _curve_backward(states, alphas, dldy)
        return self._fold_alpha_grads(dalphas, img.shape[0], img.shape[1])

    def _fold_alpha_grads(self, dalphas, h, w):
        wh = _interp_matrix(h, self.grid_size)
        ww = _interp_matrix(w, self.grid_size)
        draw = np.zeros_like(self.raw_)
        for t, da in enumerate(dalphas):
            for ch in range(3):
                grid = wh.T @ da[:, :, ch] @ ww
                draw[t, ch] = grid * (1.0 - np.tanh(self.raw_[t, ch]) ** 2)
        return draw

    # -- pretraining -----------------------------------------------------------

    def _objective_grad(self, img):
        alphas = self._alpha_maps(img.shape[0], img.shape[1])
        states = _curve_states(img, alphas)
        loss, dy = exposure_color_loss(states[-1], self.exposure_target,
                                       self.exposure_patch, self.color_weight,
                                       with_grad=True)
        dalphas, _ = _curve_backward(states, alphas, dy)
        return loss, self._fold_alpha_grads(dalphas, img.shape[0], img.shape[1])

    def fit(self, images, y=None):
        """Pretrain from identity by Adam on the exposure/color objective.

        Intermediate parameter snapshots are collected every
        ``checkpoint_interval`` iterations into ``intermediates_`` as
        (iteration, raw) tuples; training history lands in ``history_``.
        """
        images = [check_image(im, channels=3) for im in images]
        if not images:
            raise DegenerateDataError("pretraining needs at least one image")
        self.identity()
        rng = make_rng(derive_seed(self.seed, "enhancer-pretrain"))
        params = {"raw": self.raw_}
        state = AdamState(params)
        self.intermediates_ = []
        self.history_ = []
        last_finite = self.raw_.copy()
        self.diverged_ = False
        for it in range(1, self.pretrain_iters + 1):
            batch_idx = rng.integers(0, len(images), size=min(self.pretrain_batch, len(images)))
            loss = 0.0
            grad = np.zeros_like(self.raw_)
            for idx in batch_idx:
                l_i, g_i = self._objective_grad(images[idx])
                loss += l_i
                grad += g_i
            loss /= len(batch_idx)
            grad /= len(batch_idx)
            if not np.isfinite(loss):
                self.raw_ = last_finite
                self.diverged_ = True
                break
            adam_step(params, {"raw": grad}, state, lr=self.pretrain_lr)
            self.raw_ = params["raw"]
            last_finite = self.raw_.copy()
            self.history_.append(loss)
            if self.checkpoint_interval and it % self.checkpoint_interval == 0:
                self.intermediates_.append((it, self.raw_.copy()))
        return self

    def pretrain_loss(self, images) -> float:
        """Mean pretraining objective of the current model over ``images``."""
        self._check_fitted()
        total = 0.0
        for img in images:
            img = check_image(img, channels=3)
            loss, _ = self._objective_grad(img)
            total += loss
        return total / len(images)


# ---------------------------------------------------------------------------
# fine-tuning against a frozen ranker


def finetune_step(enhancer: CurveEnhancer, ranker, inputs, prev_outputs,
                  ranker_weight: float, extractor: ContentFeatureExtractor,
                  opt_params: dict, opt_state: AdamState, lr: float) -> dict:
    """One Adam step on the enhancer raw parameters against the total loss.

    total = content + ranker_weight * mean(sigmoid(score)); the ranker is
    frozen and evaluated with running statistics. Returns the loss report.
    """
    if ranker_weight < 0:
        raise ValueError("ranker_weight must be >= 0")
    n = len(inputs)
    loss_con = 0.0
    loss_r = 0.0
    grad = np.zeros_like(enhancer.raw_)
    for x, prev in zip(inputs, prev_outputs):
        alphas = enhancer._alpha_maps(x.shape[0], x.shape[1])
        states = _curve_states(x, alphas)
        out = states[-1]
        l_con, d_con = content_loss(extractor, out, prev, with_grad=True)
        dy = d_con / n
        loss_con += l_con / n
        if ranker_weight:
            score, dscore = ranker.score_and_input_grad(out)
            s = sigmoid(score)
            loss_r += s / n
            dy = dy + (ranker_weight * s * (1.0 - s) / n) * dscore
        dalphas, _ = _curve_backward(states, alphas, dy)
        grad += enhancer._fold_alpha_grads(dalphas, x.shape[0], x.shape[1])
    total = loss_con + ranker_weight * loss_r
    if not np.isfinite(total):
        raise NumericError("non-finite fine-tuning loss")
    adam_step(opt_params, {"raw": grad}, opt_state, lr=lr)
    enhancer.raw_ = opt_params["raw"]
    return {"loss_con": loss_con, "loss_r": loss_r, "loss_total": total}


def finetune(enhancer: CurveEnhancer, ranker, inputs, prev_outputs, *,
             ranker_weight: float, lr: float, iters: int, batch_size: int,
             seed: int, levels: int = 3) -> dict:
    """Fine-tune the enhancer for ``iters`` Adam steps over sampled batches.

    Returns the final-epoch loss report averaged over the last 10 steps, plus
    the whole-dataset losses after training.
    """
    if not inputs:
        raise DegenerateDataError("fine-tuning needs a nonempty input set")
    extractor = ContentFeatureExtractor(levels)
    rng = make_rng(derive_seed(seed, "enhancer-finetune"))
    params = {"raw": enhancer.raw_}
    state = AdamState(params)
    tail = []
    for _ in range(iters):
        idx = rng.integers(0, len(inputs), size=min(batch_size, len(inputs)))
        report = finetune_step(enhancer, ranker,
                               [inputs[i] for i in idx],
                               [prev_outputs[i] for i in idx],
                               ranker_weight, extractor, params, state, lr)
        tail.append(report)
        if len(tail) > 10:
            tail.pop(0)
    out = {k: float(np.mean([r[k] for r in tail])) for k in tail[-1]} if tail else {
        "loss_con": 0.0, "loss_r": 0.0, "loss_total": 0.0}
    return out
