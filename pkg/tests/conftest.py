"""Shared fixtures: a tiny end-to-end work directory reused across tests."""

import json
import shutil
from pathlib import Path

import pytest

from rankloop.config import load_config
from rankloop.datasets import write_demo_corpus
from rankloop.loop import run_all

TINY_OVERRIDES = {
    "seed": 11,
    "stages": 2,
    "select_k": 4,
    "enhancer": {"pretrain_iters": 30, "checkpoint_interval": 10,
                 "finetune_iters": 60},
    "ranker": {"bootstrap_iters": 80, "iters": 120},
}


def tiny_config(root: Path, n_images: int = 10, **extra):
    x_dir, y_dir = write_demo_corpus(root / "data", n=n_images, size=64, seed=5)
    tree = json.loads(json.dumps(TINY_OVERRIDES))
    tree.update({"x_dir": str(x_dir), "y_dir": str(y_dir),
                 "workdir": str(root / "run")})
    tree.update(extra)
    return load_config(tree)


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory):
    """A completed 2-stage run on 10 synthetic images (shared, read-only)."""
    root = tmp_path_factory.mktemp("tiny_run")
    cfg = tiny_config(root)
    metrics = run_all(cfg)
    return cfg, metrics


@pytest.fixture()
def tiny_run_copy(tiny_run, tmp_path):
    """A private mutable copy of the completed tiny run."""
    cfg, _ = tiny_run
    root = tmp_path / "copy"
    shutil.copytree(Path(cfg.workdir), root / "run")
    clone = load_config(cfg.to_dict())
    clone.workdir = str(root / "run")
    return clone
