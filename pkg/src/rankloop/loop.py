"""Stage orchestration: pair generation, dense top-k selection, vote
collection, ranker retraining on all accumulated labels, and enhancer
fine-tuning, persisted under one work directory.

Layout: workdir/config.json plus workdir/stages/<n>/ holding enhancer.ckpt,
ranker.ckpt, outputs/*.png, pairs.jsonl, selected.jsonl, votes.jsonl,
labels.jsonl, status.json, metrics.json. A stage's enhancer checkpoint is
the model that produced that stage's outputs; fine-tuning writes the next
stage's checkpoint.
"""

from __future__ import annotations

import json
import os
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .annotation import LabelStore, load_labels, make_panel
from .bootstrap import NaturalnessScorer, build_bootstrap_dataset
from .checkpoint import read_checkpoint, write_checkpoint
from .config import RunConfig, load_config, write_config
from .enhancer import CurveEnhancer, finetune
from .exceptions import (DegenerateDataError, PendingVotesError,
                         StageStateError)
from .imgio import load_image, save_image
from .ranker import QualityRanker, RankedPair
from .rng import derive_seed, make_rng

STATUSES = ("generated", "selected", "voting", "labeled",
            "ranker_trained", "enhancer_tuned")


@dataclass
class PairRecord:
    """One content-identical output pair from adjacent stages."""

    pair_id: str
    stage: int
    input_id: str
    image_prev: str  # workdir-relative PNG path
    image_cur: str
    score_prev: float
    score_cur: float
    score_gap: float

    @classmethod
    def build(cls, stage, input_id, image_prev, image_cur, score_prev, score_cur):
        return cls(pair_id=f"s{stage}-{input_id}", stage=stage, input_id=input_id,
                   image_prev=image_prev, image_cur=image_cur,
                   score_prev=score_prev, score_cur=score_cur,
                   score_gap=abs(score_prev - score_cur))


def select_pairs(records: list[PairRecord], k: int) -> list[PairRecord]:
    """Top-k records by score gap, descending; ties break by ascending pair_id."""
    if not records:
        raise DegenerateDataError("select_pairs: empty candidate set")
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(records, key=lambda r: (-r.score_gap, r.pair_id))
    return ranked[:k]


class StagePaths:
    """Path arithmetic for one stage directory."""

    def __init__(self, workdir, n: int):
        self.workdir = Path(workdir)
        self.n = n
        self.dir = self.workdir / "stages" / str(n)
        self.outputs = self.dir / "outputs"
        self.pairs = self.dir / "pairs.jsonl"
        self.selected = self.dir / "selected.jsonl"
        self.votes = self.dir / "votes.jsonl"
        self.labels = self.dir / "labels.jsonl"
        self.status = self.dir / "status.json"
        self.metrics = self.dir / "metrics.json"
        self.enhancer_ckpt = self.dir / "enhancer.ckpt"
        self.ranker_ckpt = self.dir / "ranker.ckpt"
        self.pristine_ckpt = self.dir / "pristine.ckpt"
        self.bootstrap_dir = self.dir / "bootstrap"
        self.pretrain_dir = self.dir / "pretrain"

    def read_status(self) -> str | None:
        if not self.status.exists():
            return None
        return json.loads(self.status.read_text())["status"]

    def write_status(self, status: str):
        if status not in STATUSES:
            raise StageStateError(f"unknown status {status!r}")
        current = self.read_status()
        if current is not None and STATUSES.index(status) < STATUSES.index(current):
            raise StageStateError(
                f"stage {self.n}: cannot move status backward {current} -> {status}")
        tmp = self.status.with_suffix(".json.tmp")
        tmp.write_text(json.dumps({"n": self.n, "status": status}) + "\n")
        tmp.replace(self.status)

    def write_metrics(self, metrics: dict):
        with open(self.metrics, "w", encoding="utf-8") as fh:
            json.dump(metrics, fh, indent=2, sort_keys=True)
            fh.write("\n")


@contextmanager
def workdir_lock(workdir):
    """One orchestrator per work directory, enforced by an exclusive lock file."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    lock = workdir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StageStateError(
            f"work directory {workdir} is locked by another run "
            f"(remove {lock} if that run is dead)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def load_inputs(image_dir) -> list[tuple[str, np.ndarray]]:
    image_dir = Path(image_dir)
    if not image_dir.is_dir():
        raise FileNotFoundError(f"input directory {image_dir} does not exist")
    paths = sorted(p for p in image_dir.iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise DegenerateDataError(f"no PNG images in {image_dir}")
    return [(p.stem, load_image(p)) for p in paths]


def _write_records(path: Path, records: list[PairRecord]):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), separators=(",", ":")) + "\n")


def _read_records(path: Path) -> list[PairRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(PairRecord(**json.loads(line)))
    return records


def _render_outputs(enhancer: CurveEnhancer, inputs, out_dir: Path):
    """Enhance every input into out_dir (skips files already rendered)."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for input_id, img in inputs:
        path = out_dir / f"{input_id}.png"
        if not path.exists():
            save_image(enhancer.enhance(img), path)


def _mean_utility(cfg: RunConfig, images) -> float:
    """Noiseless oracle utility averaged over images (reporting metric)."""
    panel = make_panel(cfg.annotators.count, seed=0, noise=0.0,
                       exposure_target=cfg.annotators.exposure_target,
                       contrast_target=cfg.annotators.contrast_target,
                       weights=tuple(cfg.annotators.weights))
    return float(np.mean([panel[0].utility(img) for img in images]))


def _ranker_from_cfg(cfg: RunConfig, bootstrap_schedule: bool = False) -> QualityRanker:
    r = cfg.ranker
    if bootstrap_schedule:
        return QualityRanker(blocks=r.blocks, base_ch=r.base_ch, hidden=r.hidden,
                             slope=r.slope, margin=r.margin, lr=r.bootstrap_lr,
                             iters=r.bootstrap_iters, batch_size=r.batch_size,
                             weight_decay=r.weight_decay,
                             lr_halve_every=max(r.bootstrap_iters // 3, 1),
                             seed=derive_seed(cfg.seed, "ranker", 0))
    return QualityRanker(blocks=r.blocks, base_ch=r.base_ch, hidden=r.hidden,
                         slope=r.slope, margin=r.margin, lr=r.lr, iters=r.iters,
                         batch_size=r.batch_size, weight_decay=r.weight_decay,
                         seed=derive_seed(cfg.seed, "ranker"))


def _enhancer_from_cfg(cfg: RunConfig) -> CurveEnhancer:
    e = cfg.enhancer
    return CurveEnhancer(iterations=e.iterations, grid_size=e.grid_size,
                         exposure_target=e.exposure_target,
                         exposure_patch=e.exposure_patch,
                         color_weight=e.color_weight, pretrain_lr=e.pretrain_lr,
                         pretrain_iters=e.pretrain_iters,
                         pretrain_batch=e.pretrain_batch,
                         checkpoint_interval=e.checkpoint_interval,
                         seed=derive_seed(cfg.seed, "enhancer"))


def accumulated_label_pairs(workdir, up_to_stage: int) -> list[RankedPair]:
    """All labeled pairs from stages 1..up_to_stage (the accumulated set L)."""
    workdir = Path(workdir)
    out = []
    for n in range(1, up_to_stage + 1):
        paths = StagePaths(workdir, n)
        if not paths.selected.exists():
            continue
        selected = {r.pair_id: r for r in _read_records(paths.selected)}
        for label in load_labels(paths.dir):
            rec = selected.get(label.pair_id)
            if rec is None:
                continue
            out.append(RankedPair(str(workdir / rec.image_prev),
                                  str(workdir / rec.image_cur),
                                  label.label_prev, label.label_cur))
    return out


def generate_pairs(workdir, n: int, inputs, f_prev: CurveEnhancer,
                   f_cur: CurveEnhancer, g_prev: QualityRanker) -> list[PairRecord]:
    """Render the stage-n outputs, pair them with stage n-1 outputs, and score
    both sides with the previous-stage ranker (eval mode)."""
    prev_paths = StagePaths(workdir, n - 1)
    cur_paths = StagePaths(workdir, n)
    _render_outputs(f_prev, inputs, prev_paths.outputs)
    _render_outputs(f_cur, inputs, cur_paths.outputs)
    records = []
    for input_id, _ in inputs:
        rel_prev = f"stages/{n - 1}/outputs/{input_id}.png"
        rel_cur = f"stages/{n}/outputs/{input_id}.png"
        score_prev = g_prev.score_one(load_image(Path(workdir) / rel_prev))
        score_cur = g_prev.score_one(load_image(Path(workdir) / rel_cur))
        records.append(PairRecord.build(n, input_id, rel_prev, rel_cur,
                                        score_prev, score_cur))
    return records


def cast_simulated_votes(cfg: RunConfig, workdir, n: int) -> int:
    """Vote every selected pair of stage n with the configured panel; returns
    the number of newly finalized labels."""
    paths = StagePaths(workdir, n)
    records = _read_records(paths.selected)
    panel = make_panel(cfg.annotators.count, seed=derive_seed(cfg.seed, "panel"),
                       noise=cfg.annotators.noise,
                       exposure_target=cfg.annotators.exposure_target,
                       contrast_target=cfg.annotators.contrast_target,
                       weights=tuple(cfg.annotators.weights))
    store = LabelStore(paths.dir, votes_per_pair=cfg.annotators.count)
    finalized = 0
    for rec in records:
        img_prev = load_image(Path(workdir) / rec.image_prev)
        img_cur = load_image(Path(workdir) / rec.image_cur)
        for annotator in panel:
            if store.has_vote(rec.pair_id, annotator.annotator_id):
                continue
            label = store.append_vote(
                annotator.vote(rec.pair_id, img_prev, img_cur, timestamp=0))
            if label is not None:
                finalized += 1
    return finalized


def run_phase1(cfg: RunConfig) -> dict:
    """Initialization: pretrain the enhancer, train the bootstrap-labeled
    ranker, fine-tune once. Produces stages/0/{enhancer,ranker}.ckpt and
    stages/1/enhancer.ckpt."""
    workdir = Path(cfg.workdir)
    s0 = StagePaths(workdir, 0)
    s1 = StagePaths(workdir, 1)
    if s0.read_status() == "enhancer_tuned":
        return json.loads(s0.metrics.read_text())
    inputs = load_inputs(cfg.x_dir)
    references = load_inputs(cfg.y_dir)
    metrics = json.loads(s0.metrics.read_text()) if s0.metrics.exists() else {"stage": 0}

    status = s0.read_status()
    if status is None:
        enhancer = _enhancer_from_cfg(cfg).fit([img for _, img in inputs])
        write_checkpoint(enhancer.to_checkpoint(stage=0), s0.enhancer_ckpt)
        # the identity initialization joins the pool: it anchors the low end
        # of the quality range the bootstrap labels must span
        identity = CurveEnhancer(iterations=cfg.enhancer.iterations,
                                 grid_size=cfg.enhancer.grid_size).identity()
        write_checkpoint(identity.to_checkpoint(stage=0),
                         s0.pretrain_dir / "inter_00000.ckpt")
        for it, raw in enhancer.intermediates_:
            inter = CurveEnhancer(iterations=cfg.enhancer.iterations,
                                  grid_size=cfg.enhancer.grid_size).set_raw(raw)
            write_checkpoint(inter.to_checkpoint(stage=0),
                             s0.pretrain_dir / f"inter_{it:05d}.ckpt")
        _render_outputs(enhancer, inputs, s0.outputs)
        s0.write_status("generated")
        status = "generated"

    if status == "generated":
        scorer = NaturalnessScorer(patch=cfg.bootstrap.patch,
                                   sharpness_quantile=cfg.bootstrap.sharpness_quantile)
        scorer.fit([img for _, img in references])
        write_checkpoint(scorer.to_checkpoint(), s0.pristine_ckpt)
        ckpts = [read_checkpoint(p) for p in sorted(s0.pretrain_dir.glob("*.ckpt"))]
        ckpts.append(read_checkpoint(s0.enhancer_ckpt))
        pairs, n_versions = build_bootstrap_dataset(ckpts, inputs, scorer, s0.bootstrap_dir)
        with open(s0.dir / "bootstrap_pairs.jsonl", "w", encoding="utf-8") as fh:
            for p in pairs:
                fh.write(json.dumps({
                    "image_a": str(Path(p.image_a).relative_to(workdir)),
                    "image_b": str(Path(p.image_b).relative_to(workdir)),
                    "label_a": p.label_a, "label_b": p.label_b,
                }, separators=(",", ":")) + "\n")
        s0.write_status("labeled")
        status = "labeled"

    if status == "labeled":
        pairs = []
        with open(s0.dir / "bootstrap_pairs.jsonl", "r", encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                pairs.append(RankedPair(str(workdir / rec["image_a"]),
                                        str(workdir / rec["image_b"]),
                                        rec["label_a"], rec["label_b"]))
        rng = make_rng(derive_seed(cfg.seed, "bootstrap-split"))
        holdout_mask = rng.uniform(size=len(pairs)) < cfg.ranker.holdout_fraction
        train = [p for p, h in zip(pairs, holdout_mask) if not h] or pairs
        holdout = [p for p, h in zip(pairs, holdout_mask) if h]
        ranker = _ranker_from_cfg(cfg, bootstrap_schedule=True).fit(train)
        write_checkpoint(ranker.to_checkpoint(stage=0), s0.ranker_ckpt)
        metrics["bootstrap_pairs_train"] = len(train)
        metrics["bootstrap_pairs_holdout"] = len(holdout)
        metrics["ranker_loss_final"] = float(np.mean(ranker.history_[-20:]))
        metrics["ranker_accuracy"] = (
            ranker.prediction_accuracy(holdout) if holdout else None)
        s0.write_metrics(metrics)
        s0.write_status("ranker_trained")
        status = "ranker_trained"

    if status == "ranker_trained":
        enhancer = CurveEnhancer.from_checkpoint(read_checkpoint(s0.enhancer_ckpt))
        ranker = QualityRanker.from_checkpoint(read_checkpoint(s0.ranker_ckpt))
        prev_outputs = [load_image(s0.outputs / f"{iid}.png") for iid, _ in inputs]
        report = finetune(enhancer, ranker,
                          [img for _, img in inputs], prev_outputs,
                          ranker_weight=cfg.enhancer.ranker_weight,
                          lr=cfg.enhancer.finetune_lr,
                          iters=cfg.enhancer.finetune_iters,
                          batch_size=cfg.enhancer.finetune_batch,
                          seed=derive_seed(cfg.seed, "finetune", 0),
                          levels=cfg.enhancer.content_levels)
        write_checkpoint(enhancer.to_checkpoint(stage=1), s1.enhancer_ckpt)
        metrics.update({k: float(v) for k, v in report.items()})
        metrics["mean_utility_outputs"] = _mean_utility(
            cfg, [load_image(s0.outputs / f"{iid}.png") for iid, _ in inputs])
        s0.write_metrics(metrics)
        s0.write_status("enhancer_tuned")
    return metrics


def run_stage(cfg: RunConfig, n: int) -> dict:
    """One iterative stage (n >= 1): generate, select, collect votes, retrain
    the ranker on all accumulated labels, fine-tune the enhancer.

    Re-running a completed stage is a no-op. With vote_source=service the
    stage parks in 'voting' until every selected pair has its label, then a
    later call picks up from there.
    """
    if n < 1:
        raise StageStateError("iterative stages start at n=1; stage 0 is run_phase1")
    workdir = Path(cfg.workdir)
    paths = StagePaths(workdir, n)
    prev = StagePaths(workdir, n - 1)
    if paths.read_status() == "enhancer_tuned":
        return json.loads(paths.metrics.read_text()) if paths.metrics.exists() else {}
    if prev.read_status() != "enhancer_tuned":
        raise StageStateError(f"stage {n - 1} incomplete; run it first")
    inputs = load_inputs(cfg.x_dir)
    status = paths.read_status()
    metrics = json.loads(paths.metrics.read_text()) if paths.metrics.exists() else {"stage": n}

    if status is None:
        f_prev = CurveEnhancer.from_checkpoint(read_checkpoint(prev.enhancer_ckpt))
        f_cur = CurveEnhancer.from_checkpoint(read_checkpoint(paths.enhancer_ckpt))
        g_prev = QualityRanker.from_checkpoint(read_checkpoint(prev.ranker_ckpt))
        records = generate_pairs(workdir, n, inputs, f_prev, f_cur, g_prev)
        _write_records(paths.pairs, records)
        paths.write_status("generated")
        status = "generated"

    if status == "generated":
        records = _read_records(paths.pairs)
        chosen = select_pairs(records, min(cfg.select_k, len(records)))
        _write_records(paths.selected, chosen)
        paths.write_status("selected")
        status = "selected"

    if status == "selected":
        paths.write_status("voting")
        status = "voting"

    if status == "voting":
        if cfg.vote_source == "simulated":
            cast_simulated_votes(cfg, workdir, n)
        selected = _read_records(paths.selected)
        store = LabelStore(paths.dir, votes_per_pair=cfg.annotators.count)
        missing = [r.pair_id for r in selected if r.pair_id not in store.labels]
        if missing:
            pending = sum(cfg.annotators.count - store.vote_count(pid) for pid in missing)
            raise PendingVotesError(pending)
        paths.write_status("labeled")
        status = "labeled"

    if status == "labeled":
        label_pairs = accumulated_label_pairs(workdir, n)
        if not label_pairs:
            raise DegenerateDataError(f"stage {n}: no labeled pairs accumulated")
        # scale training length with the accumulated set: small early label
        # sets overfit (and flatten the score surface) under a fixed budget
        iters = min(cfg.ranker.iters, cfg.ranker.iters_per_label * len(label_pairs))
        if cfg.ranker.warm_start:
            ranker = QualityRanker.from_checkpoint(
                read_checkpoint(prev.ranker_ckpt),
                margin=cfg.ranker.margin, lr=cfg.ranker.lr, iters=iters,
                batch_size=cfg.ranker.batch_size, weight_decay=cfg.ranker.weight_decay,
                seed=derive_seed(cfg.seed, "ranker", n))
            ranker.fit(label_pairs, warm_start=True)
        else:
            ranker = _ranker_from_cfg(cfg)
            ranker.iters = iters
            ranker.seed = derive_seed(cfg.seed, "ranker", n)
            ranker.fit(label_pairs)
        write_checkpoint(ranker.to_checkpoint(stage=n), paths.ranker_ckpt)
        stage_pairs = []
        selected = {r.pair_id: r for r in _read_records(paths.selected)}
        for label in load_labels(paths.dir):
            rec = selected.get(label.pair_id)
            if rec is not None:
                stage_pairs.append(RankedPair(str(workdir / rec.image_prev),
                                              str(workdir / rec.image_cur),
                                              label.label_prev, label.label_cur))
        metrics["labels_accumulated"] = len(label_pairs)
        metrics["ranker_loss_final"] = float(np.mean(ranker.history_[-20:]))
        metrics["ranker_accuracy"] = ranker.prediction_accuracy(stage_pairs)
        paths.write_metrics(metrics)
        paths.write_status("ranker_trained")
        status = "ranker_trained"

    if status == "ranker_trained":
        enhancer = CurveEnhancer.from_checkpoint(read_checkpoint(paths.enhancer_ckpt))
        ranker = QualityRanker.from_checkpoint(read_checkpoint(paths.ranker_ckpt))
        prev_outputs = [load_image(paths.outputs / f"{iid}.png") for iid, _ in inputs]
        report = finetune(enhancer, ranker,
                          [img for _, img in inputs], prev_outputs,
                          ranker_weight=cfg.enhancer.ranker_weight,
                          lr=cfg.enhancer.finetune_lr,
                          iters=cfg.enhancer.finetune_iters,
                          batch_size=cfg.enhancer.finetune_batch,
                          seed=derive_seed(cfg.seed, "finetune", n),
                          levels=cfg.enhancer.content_levels)
        write_checkpoint(enhancer.to_checkpoint(stage=n + 1),
                         StagePaths(workdir, n + 1).enhancer_ckpt)
        metrics.update({k: float(v) for k, v in report.items()})
        metrics["pairs_total"] = len(_read_records(paths.pairs))
        metrics["pairs_selected"] = len(_read_records(paths.selected))
        metrics["mean_utility_outputs"] = _mean_utility(
            cfg, [load_image(paths.outputs / f"{iid}.png") for iid, _ in inputs])
        paths.write_metrics(metrics)
        paths.write_status("enhancer_tuned")
    return metrics


def run_all(cfg: RunConfig, progress=None) -> list[dict]:
    """Phase 1 plus the remaining iterative stages; returns per-stage metrics.

    With vote_source=service the loop polls the label store until annotators
    (via the HTTP service) finish each stage.
    """
    cfg.require_paths("x_dir", "y_dir", "workdir")
    workdir = Path(cfg.workdir)
    all_metrics = []
    with workdir_lock(workdir):
        # the persisted copy names the workdir as "." so two runs of the same
        # config into different directories leave byte-identical records
        persisted = load_config(cfg.to_dict())
        persisted.workdir = "."
        write_config(persisted, workdir / "config.json")
        metrics = run_phase1(cfg)
        if progress:
            progress(metrics)
        all_metrics.append(metrics)
        for n in range(1, cfg.stages):
            while True:
                try:
                    metrics = run_stage(cfg, n)
                    break
                except PendingVotesError as exc:
                    if progress:
                        progress({"stage": n, "pending_votes": exc.pending})
                    time.sleep(cfg.service.poll_interval)
            if progress:
                progress(metrics)
            all_metrics.append(metrics)
        # terminal reporting for the final model f^(N)
        final = StagePaths(workdir, cfg.stages)
        inputs = load_inputs(cfg.x_dir)
        enhancer = CurveEnhancer.from_checkpoint(read_checkpoint(final.enhancer_ckpt))
        _render_outputs(enhancer, inputs, final.outputs)
        if not final.metrics.exists():
            final.write_metrics({"stage": cfg.stages, "mean_utility_outputs": _mean_utility(
                cfg, [load_image(final.outputs / f"{iid}.png") for iid, _ in inputs])})
        if progress:
            progress(json.loads(final.metrics.read_text()))
        all_metrics.append(json.loads(final.metrics.read_text()))
    return all_metrics
