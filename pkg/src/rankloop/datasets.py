"""Deterministic synthetic image corpus for demos, tests, and acceptance runs.

Scenes combine a smooth low-frequency color field, a few geometric shapes,
and fine texture, normalized toward well-lit statistics (mean luminance
~0.55, contrast ~0.17). Dark inputs are gamma-compressed, color-imbalanced
copies of independent scenes, so the well-lit set and the dark set are
unpaired.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .enhancer import _blur2d, _interp_matrix
from .imgio import save_image
from .rng import derive_seed, make_rng
from .validation import luminance


def make_scene(size: int, rng: np.random.Generator) -> np.ndarray:
    """One well-lit (size, size, 3) scene in [0, 1]."""
    grid = max(size // 8, 2)
    up_r = _interp_matrix(size, grid)
    field = np.empty((size, size, 3))
    low = rng.normal(size=(grid, grid, 3))
    for c in range(3):
        field[:, :, c] = up_r @ low[:, :, c] @ up_r.T
    # a few flat-ish shapes with their own chromaticity
    yy, xx = np.mgrid[0:size, 0:size] / size
    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        ry, rx = rng.uniform(0.08, 0.3, size=2)
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
        field[mask] += rng.normal(0.0, 0.8, size=3)
    field = _blur2d(field)
    shared = rng.normal(0.0, 0.25, size=(size, size, 1))  # fine texture
    field += shared + rng.normal(0.0, 0.1, size=field.shape)
    field -= field.mean()
    luma_std = luminance(field).std()
    if luma_std > 0:
        field /= luma_std
    mean_target = rng.uniform(0.5, 0.6)
    std_target = rng.uniform(0.15, 0.19)
    return np.clip(mean_target + std_target * field, 0.0, 1.0)


def darken(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Underexposed copy: gamma compression plus a gain drop.

    Kept color-balanced: a strong tint would hand the pairwise labels a
    single-channel "improvement" direction that compounds across stages.
    """
    gamma = rng.uniform(1.8, 2.6)
    gain = rng.uniform(0.3, 0.55)
    return np.clip((img ** gamma) * gain, 0.0, 1.0)


def make_corpus(n: int, size: int, seed: int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """n dark inputs and n unpaired well-lit references."""
    dark = []
    lit = []
    for i in range(n):
        rng_dark = make_rng(derive_seed(seed, "scene-dark", i))
        dark.append(darken(make_scene(size, rng_dark), rng_dark))
        rng_lit = make_rng(derive_seed(seed, "scene-lit", i))
        lit.append(make_scene(size, rng_lit))
    return dark, lit


def write_demo_corpus(root, n: int = 64, size: int = 64, seed: int = 7) -> tuple[Path, Path]:
    """Write the synthetic corpus as PNGs; returns (dark dir, well-lit dir)."""
    root = Path(root)
    x_dir = root / "X"
    y_dir = root / "Y"
    dark, lit = make_corpus(n, size, seed)
    for i, img in enumerate(dark):
        save_image(img, x_dir / f"x{i:03d}.png")
    for i, img in enumerate(lit):
        save_image(img, y_dir / f"y{i:03d}.png")
    return x_dir, y_dir
