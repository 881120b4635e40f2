"""Siamese image-quality ranker: a small VGG-style scorer trained with a
margin-ranking loss over labeled pairs. Lower score means better perceived
quality; raw scores are relative indicators, never absolute quality values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .checkpoint import CheckpointEntry, ParamCheckpoint
from .exceptions import DegenerateDataError, NumericError, ShapeError
from .imgio import load_image
from .nn import (AdamState, BatchNorm2d, Conv2d, GlobalAvgPool, LeakyReLU,
                 Linear, adam_step)
from .rng import derive_seed, make_rng
from .validation import check_image


def margin_ranking_loss(p_n: float, p_m: float, r_n: int, r_m: int,
                        margin: float) -> tuple[float, float, float]:
    """Pairwise hinge on predicted scores.

    Labels follow the lower-is-better convention: if r_n >= r_m the second
    image is the preferred one and must score at least ``margin`` below the
    first. Returns (loss, dloss/dp_n, dloss/dp_m); the subgradient at the
    hinge corner is 0.
    """
    if margin < 0:
        raise ValueError("margin must be >= 0")
    if not (math.isfinite(p_n) and math.isfinite(p_m)):
        raise NumericError("non-finite ranker scores")
    if r_n >= r_m:
        arg = (p_m - p_n) + margin
        if arg > 0:
            return arg, -1.0, 1.0
    else:
        arg = (p_n - p_m) + margin
        if arg > 0:
            return arg, 1.0, -1.0
    return 0.0, 0.0, 0.0


@dataclass
class RankedPair:
    """A content-identical image pair with complementary 0/1 labels (0 = better)."""

    image_a: object  # (H, W, C) array or path to a PNG
    image_b: object
    label_a: int
    label_b: int

    def __post_init__(self):
        if {self.label_a, self.label_b} != {0, 1}:
            raise ShapeError(
                f"pair labels must be complementary 0/1, got {self.label_a}/{self.label_b}")


def _load(image) -> np.ndarray:
    if isinstance(image, (str, Path)):
        return load_image(image)
    return check_image(image)


class _RankerNet:
    """Conv stem, B identical conv blocks (stride 2 on even indices), GAP head."""

    def __init__(self, blocks, base_ch, hidden, slope, rng):
        self.blocks = blocks
        self.slope = slope
        self.layers: list[tuple[str, object]] = []
        self.layers.append(("stem", Conv2d(3, base_ch, 3, stride=1, pad=1,
                                           rng=rng, slope=slope)))
        self.layers.append(("stem_act", LeakyReLU(slope)))
        for b in range(blocks):
            stride = 2 if b % 2 == 0 else 1
            self.layers.append((f"block{b}.conv",
                                Conv2d(base_ch, base_ch, 3, stride=stride, pad=1,
                                       rng=rng, slope=slope)))
            self.layers.append((f"block{b}.bn", BatchNorm2d(base_ch)))
            self.layers.append((f"block{b}.act", LeakyReLU(slope)))
        self.layers.append(("gap", GlobalAvgPool()))
        self.layers.append(("head.fc1", Linear(base_ch, hidden, rng=rng, slope=slope)))
        self.layers.append(("head.act", LeakyReLU(slope)))
        self.layers.append(("head.fc2", Linear(hidden, 1, rng=rng)))

    @property
    def min_side(self) -> int:
        return 2 ** math.ceil(self.blocks / 2)

    def forward(self, x, mode):
        if x.shape[2] < self.min_side or x.shape[3] < self.min_side:
            raise ShapeError(
                f"image {x.shape[2]}x{x.shape[3]} too small; ranker needs "
                f">= {self.min_side} pixels per side")
        caches = []
        out = x
        for _, layer in self.layers:
            out, cache = layer.forward(out, mode)
            caches.append(cache)
        scores = out[:, 0]
        if not np.all(np.isfinite(scores)):
            raise NumericError("non-finite ranker activations")
        return scores, caches

    def backward(self, caches, dscores):
        grads: dict[str, np.ndarray] = {}
        dy = np.asarray(dscores, dtype=np.float64)[:, None]
        for (name, layer), cache in zip(reversed(self.layers), reversed(caches)):
            layer_grads, dy = layer.backward(cache, dy)
            for key, g in layer_grads.items():
                grads[f"{name}.{key}"] = g
        return grads, dy

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers:
            for key, val in layer.params.items():
                out[f"{name}.{key}"] = val
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.layers:
            for key, val in getattr(layer, "buffers", {}).items():
                out[f"{name}.{key}"] = val
        return out

    def load_state(self, entries: dict[str, np.ndarray]):
        targets = {**self.named_params(), **self.named_buffers()}
        for key, target in targets.items():
            if key not in entries:
                raise ShapeError(f"checkpoint missing tensor {key!r}")
            src = entries[key]
            if src.shape != target.shape:
                raise ShapeError(f"tensor {key!r} shape {src.shape} != {target.shape}")
            target[:] = src


class QualityRanker(BaseEstimator):
    """Learning-to-rank quality model with a scalar, size-agnostic output.

    fit() minimizes the mean margin-ranking loss over uniformly resampled
    labeled pairs with Adam plus decoupled weight decay; both pair images go
    through the same weights (weight sharing, evaluated twice per pair).
    """

    def __init__(self, blocks=4, base_ch=16, hidden=64, slope=0.2, margin=0.5,
                 lr=2e-4, iters=400, batch_size=8, weight_decay=1e-4,
                 lr_halve_every=None, seed=0):
        self.blocks = blocks
        self.base_ch = base_ch
        self.hidden = hidden
        self.slope = slope
        self.margin = margin
        self.lr = lr
        self.iters = iters
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.lr_halve_every = lr_halve_every
        self.seed = seed

    # -- state ----------------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("QualityRanker has no parameters; call init_net()/fit()")

    def init_net(self) -> "QualityRanker":
        rng = make_rng(derive_seed(self.seed, "ranker-init"))
        self.net_ = _RankerNet(self.blocks, self.base_ch, self.hidden, self.slope, rng)
        return self

    def to_checkpoint(self, stage: int) -> ParamCheckpoint:
        self._check_fitted()
        entries = [CheckpointEntry(k, v) for k, v in self.net_.named_params().items()]
        entries += [CheckpointEntry(k, v) for k, v in self.net_.named_buffers().items()]
        entries.append(CheckpointEntry("hyper.slope", np.array(self.slope)))
        return ParamCheckpoint("ranker", stage, entries)

    @classmethod
    def from_checkpoint(cls, ckpt: ParamCheckpoint, **hyper) -> "QualityRanker":
        tensors = ckpt.as_dict()
        stem = tensors["stem.weight"]
        base_ch = stem.shape[0]
        blocks = len({k.split(".")[0] for k in tensors if k.startswith("block")})
        hidden = tensors["head.fc1.weight"].shape[1]
        slope = float(tensors.get("hyper.slope", np.array(0.2)))
        est = cls(blocks=blocks, base_ch=base_ch, hidden=hidden, slope=slope, **hyper)
        est.init_net()
        est.net_.load_state(tensors)
        return est

    # -- inference --------------------------------------------------------------

    def _to_nchw(self, img) -> tuple[np.ndarray, int]:
        img = check_image(img)
        channels = img.shape[2]
        if channels == 1:
            img = np.repeat(img, 3, axis=2)
        return img.transpose(2, 0, 1)[None], channels

    def score_one(self, img, mode="eval") -> float:
        self._check_fitted()
        x, _ = self._to_nchw(img)
        scores, _ = self.net_.forward(x, mode)
        return float(scores[0])

    def predict(self, images) -> np.ndarray:
        """Eval-mode scores, one per image; lower = better."""
        return np.array([self.score_one(img) for img in images])

    def score_and_input_grad(self, img) -> tuple[float, np.ndarray]:
        """Eval-mode score plus d score / d pixel with the image's own shape."""
        self._check_fitted()
        x, channels = self._to_nchw(img)
        scores, caches = self.net_.forward(x, "eval")
        _, dx = self.net_.backward(caches, np.ones(1))
        grad = dx[0].transpose(1, 2, 0)
        if channels == 1:
            grad = grad.sum(axis=2, keepdims=True)
        return float(scores[0]), grad

    # -- training ---------------------------------------------------------------

    def fit(self, pairs: list[RankedPair], y=None, warm_start: bool = False):
        """Train on labeled pairs; ``warm_start=True`` keeps existing weights."""
        if not pairs:
            raise DegenerateDataError("ranker training needs at least one labeled pair")
        if not (warm_start and hasattr(self, "net_")):
            self.init_net()
        rng = make_rng(derive_seed(self.seed, "ranker-train"))
        params = self.net_.named_params()
        state = AdamState(params)
        cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

        def tensors(pair_idx):
            if pair_idx not in cache:
                pair = pairs[pair_idx]
                cache[pair_idx] = (self._to_nchw(_load(pair.image_a))[0][0],
                                   self._to_nchw(_load(pair.image_b))[0][0])
            return cache[pair_idx]

        self.history_ = []
        for it in range(self.iters):
            lr = self.lr
            if self.lr_halve_every:
                lr = self.lr * 0.5 ** (it // self.lr_halve_every)
            idx = rng.integers(0, len(pairs), size=min(self.batch_size, len(pairs)))
            n = len(idx)
            imgs = [tensors(i) for i in idx]
            shapes = {a.shape for a, _ in imgs} | {b.shape for _, b in imgs}
            if len(shapes) != 1:
                raise ShapeError("all training-pair images must share dimensions")
            x = np.stack([a for a, _ in imgs] + [b for _, b in imgs])
            buffers_before = {k: v.copy() for k, v in self.net_.named_buffers().items()}
            scores, caches = self.net_.forward(x, "train")
            dscores = np.zeros(2 * n)
            loss = 0.0
            for j, i in enumerate(idx):
                pair = pairs[i]
                l_j, d_a, d_b = margin_ranking_loss(
                    scores[j], scores[n + j], pair.label_a, pair.label_b, self.margin)
                loss += l_j / n
                dscores[j] = d_a / n
                dscores[n + j] = d_b / n
            self.history_.append(loss)
            if loss == 0.0:
                # every hinge inactive: no learning signal, so leave weights,
                # decay, and running statistics untouched
                for key, buf in self.net_.named_buffers().items():
                    buf[:] = buffers_before[key]
                continue
            grads, _ = self.net_.backward(caches, dscores)
            adam_step(params, grads, state, lr=lr, weight_decay=self.weight_decay)
        return self

    def prediction_accuracy(self, pairs: list[RankedPair]) -> float:
        """Fraction of pairs whose strictly lower-scored image carries label 0.

        Exact score ties count as incorrect.
        """
        if not pairs:
            raise DegenerateDataError("prediction_accuracy needs at least one pair")
        correct = 0
        for pair in pairs:
            p_a = self.score_one(_load(pair.image_a))
            p_b = self.score_one(_load(pair.image_b))
            if p_a < p_b:
                correct += pair.label_a == 0
            elif p_b < p_a:
                correct += pair.label_b == 0
        return correct / len(pairs)
